//! Iterative radix-2 Cooley-Tukey transform.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::InvalidArgument(format!(
                "real part has {} entries, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: &[f64]) -> Self {
        Self {
            re: re.to_vec(),
            im: vec![0.0; re.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }
}

pub fn check_power_of_two(n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::Config(format!("transform length {n} is not a power of two")))
    }
}

/// Unnormalized forward DFT: `X[k] = sum_t x[t] exp(-2 pi i k t / n)`.
pub fn fft_forward(x: &ComplexVec) -> Result<ComplexVec> {
    transform(x, -1.0)
}

/// Inverse DFT, normalized by `1/n` so that it undoes [`fft_forward`].
pub fn fft_inverse(x: &ComplexVec) -> Result<ComplexVec> {
    let mut out = transform(x, 1.0)?;
    let scale = 1.0 / x.len() as f64;
    out.re.iter_mut().for_each(|v| *v *= scale);
    out.im.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Unnormalized inverse DFT (`sum_k X[k] exp(+2 pi i k t / n)`).
pub fn fft_inverse_unnormalized(x: &ComplexVec) -> Result<ComplexVec> {
    transform(x, 1.0)
}

fn transform(x: &ComplexVec, sign: f64) -> Result<ComplexVec> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty transform".into()));
    }
    check_power_of_two(n)?;
    let bits = n.trailing_zeros();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for i in 0..n {
        let j = if bits == 0 {
            0
        } else {
            i.reverse_bits() >> (usize::BITS - bits)
        };
        re[j] = x.re[i];
        im[j] = x.im[i];
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles straight from cos/sin; no recurrence drift.
        let tw: Vec<(f64, f64)> = (0..half)
            .map(|j| {
                let ang = sign * 2.0 * PI * j as f64 / len as f64;
                (ang.cos(), ang.sin())
            })
            .collect();
        for start in (0..n).step_by(len) {
            for (j, &(wr, wi)) in tw.iter().enumerate() {
                let a = start + j;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len *= 2;
    }
    Ok(ComplexVec { re, im })
}
