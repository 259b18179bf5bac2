//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use mppa::gravitator::AttentionParams;
use mppa::numerics::tensor::gelu;
use mppa::numerics::{fft_forward, sigmoid, ComplexVec, Tensor};
use mppa::periodicity::PeriodicityParams;

/// O(n^2) DFT of a real signal.
pub fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (t, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            re[k] += v * a.cos();
            im[k] += v * a.sin();
        }
    }
    (re, im)
}

fn rows(h: &Tensor, start: usize, end: usize) -> Vec<Vec<f64>> {
    (start..end).map(|r| h.row(r).to_vec()).collect()
}

fn mean_log_energy(chunk: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in chunk {
        let mut sq = 0.0;
        for v in row {
            sq += v * v;
        }
        total += (1.0 + sq).ln();
    }
    total / chunk.len() as f64
}

/// Energy path by reprocessing the whole prefix for every chunk: the output
/// for chunk `i` is computed from rows `0..end(i)` alone, starting from an
/// empty history each time.
pub fn energy_prefix_oracle(h: &Tensor, intensity: f64, c: usize) -> Tensor {
    let n = h.rows();
    let count = n.div_ceil(c);
    let mut out = Vec::with_capacity(n * h.cols());
    for i in 0..count {
        let end = ((i + 1) * c).min(n);
        let prefix = rows(h, 0, end);
        let chunks: Vec<&[Vec<f64>]> = prefix.chunks(c).collect();
        // Debts of chunks 0..i from scratch.
        let mut log_sum = 0.0;
        let mut debts = Vec::new();
        for (j, chunk) in chunks.iter().enumerate().take(i) {
            let e = mean_log_energy(chunk);
            let debt = if j == 0 { 0.0 } else { e - (log_sum / j as f64).exp() };
            debts.push(debt);
            log_sum += (e + 1e-6).ln();
        }
        let factor = if i >= 2 {
            Some((sigmoid(debts[i - 2]) * intensity).exp())
        } else {
            None
        };
        for row in chunks[i] {
            for &v in row {
                out.push(match factor {
                    Some(f) => v * f,
                    None => v,
                });
            }
        }
    }
    Tensor::new(vec![n, h.cols()], out).unwrap()
}

fn matmul(a: &[Vec<f64>], b: &Tensor) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; b.cols()];
            for (k, &x) in row.iter().enumerate() {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += x * b.get(k, j);
                }
            }
            out
        })
        .collect()
}

fn add_bias(a: &mut [Vec<f64>], b: &Tensor) {
    for row in a {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b.data()[j];
        }
    }
}

/// Periodicity path by prefix reprocessing, as for the energy oracle.
pub fn periodicity_prefix_oracle(h: &Tensor, p: &PeriodicityParams, c: usize) -> Tensor {
    let (n, d) = (h.rows(), h.cols());
    let count = n.div_ceil(c);
    let alpha: Vec<f64> = p.alpha_raw.data().iter().map(|&a| sigmoid(a) * 0.8 + 0.1).collect();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..count {
        let end = ((i + 1) * c).min(n);
        let prefix = rows(h, 0, end);
        let chunks: Vec<&[Vec<f64>]> = prefix.chunks(c).collect();
        let mut state = vec![vec![0.0; d]; c];
        for chunk in chunks.iter().take(i) {
            for f in 0..d {
                let mut col: Vec<f64> = chunk.iter().map(|r| r[f]).collect();
                col.resize(c, 0.0);
                let mags = fft_forward(&ComplexVec::from_real(&col)).unwrap().magnitudes();
                for k in 0..c {
                    state[k][f] = alpha[f] * state[k][f] + (1.0 - alpha[f]) * mags[k];
                }
            }
        }
        let modulation = if i == 0 {
            None
        } else {
            let mut hidden = matmul(&state, &p.w1);
            add_bias(&mut hidden, &p.b1);
            for row in hidden.iter_mut() {
                for v in row.iter_mut() {
                    *v = gelu(*v);
                }
            }
            let mut o = matmul(&hidden, &p.w2);
            add_bias(&mut o, &p.b2);
            Some(o)
        };
        for (t, row) in chunks[i].iter().enumerate() {
            for (f, &v) in row.iter().enumerate() {
                out.push(match &modulation {
                    Some(m) => v * (sigmoid(m[t][f]) * 2.0),
                    None => v,
                });
            }
        }
    }
    Tensor::new(vec![n, d], out).unwrap()
}

/// Attention output row `t` computed from rows `0..=t` only.
pub fn attention_prefix_oracle(h: &Tensor, p: &AttentionParams) -> Tensor {
    let (n, d) = (h.rows(), h.cols());
    let d_k = p.heads[0].w_q.cols();
    let mut out = Tensor::zeros(&[n, d]);
    for t in 0..n {
        let prefix = rows(h, 0, t + 1);
        let mut concat = Vec::with_capacity(d);
        for head in &p.heads {
            let q = &matmul(&prefix[t..t + 1], &head.w_q)[0];
            let k = matmul(&prefix, &head.w_k);
            let v = matmul(&prefix, &head.w_v);
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| q.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d_k as f64).sqrt())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in 0..d_k {
                concat.push((0..=t).map(|j| w[j] / z * v[j][c]).sum::<f64>());
            }
        }
        let row = &matmul(&[concat], &p.w_o)[0];
        out.row_mut(t).copy_from_slice(row);
    }
    out
}
