//! Dense tensors, seeded randomness, the radix-2 FFT, reverse-mode
//! differentiation and gradient checking.

pub mod fft;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use fft::{fft_forward, fft_inverse, ComplexVec};
pub use gradcheck::{grad_check, relative_error};
pub use graph::{Binder, Gradients, Graph, Var};
pub use rng::Rng;
pub use tensor::{sigmoid, Tensor};
