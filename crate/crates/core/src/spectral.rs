//! Two-dimensional discrete Fourier transform over a time-ordered sequence of
//! embeddings: one transform along the time axis, one along the embedding axis.
//!
//! Transforms are evaluated as dense cosine/sine matrix products, which is
//! plenty for histories of a few hundred rows.

use std::f64::consts::PI;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("embedding sequence is empty")]
    Empty,
    #[error("row {row} has length {len}, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
}

/// `S` time-ordered embedding rows of common dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    matrix: Tensor,
}

impl EmbeddingSequence {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, SpectralError> {
        let first = rows.first().ok_or(SpectralError::Empty)?;
        let d = first.len();
        if d == 0 {
            return Err(SpectralError::Empty);
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(SpectralError::Ragged { row: i, len: r.len(), expected: d });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { matrix: Tensor::matrix(rows.len(), d, data) })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.matrix.row(i))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.matrix
    }
}

/// Real part of the 2-D DFT. Output shape equals input shape.
pub fn dft2_real(seq: &EmbeddingSequence) -> EmbeddingSequence {
    EmbeddingSequence { matrix: dft2_real_tensor(&seq.matrix) }
}

/// Full complex 2-D DFT with the `exp(-2πi ...)` sign convention, returned as
/// (real, imaginary) parts.
pub fn dft2_complex(seq: &EmbeddingSequence) -> (Tensor, Tensor) {
    let x = &seq.matrix;
    let (s, d) = (x.rows(), x.cols());
    let (cs, ss) = (cos_table(s), sin_table(s));
    let (cd, sd) = (cos_table(d), sin_table(d));
    // X = (C_s - i S_s) x (C_d - i S_d)
    let re = sub(&triple(&cs, x.data(), &cd, s, d), &triple(&ss, x.data(), &sd, s, d));
    let im = add(&triple(&ss, x.data(), &cd, s, d), &triple(&cs, x.data(), &sd, s, d));
    let im: Vec<f64> = im.into_iter().map(|v| -v).collect();
    (Tensor::matrix(s, d, re), Tensor::matrix(s, d, im))
}

pub(crate) fn dft2_real_tensor(x: &Tensor) -> Tensor {
    let (s, d) = (x.rows(), x.cols());
    let (cs, ss) = (cos_table(s), sin_table(s));
    let (cd, sd) = (cos_table(d), sin_table(d));
    let re = sub(&triple(&cs, x.data(), &cd, s, d), &triple(&ss, x.data(), &sd, s, d));
    Tensor::new(x.shape().to_vec(), re)
}

fn cos_table(n: usize) -> Vec<f64> {
    table(n, f64::cos)
}

fn sin_table(n: usize) -> Vec<f64> {
    table(n, f64::sin)
}

fn table(n: usize, f: fn(f64) -> f64) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            // Reduce the index product mod n before scaling to keep the angle small.
            let k = (p * q) % n;
            t[p * n + q] = f(2.0 * PI * k as f64 / n as f64);
        }
    }
    t
}

/// `L (s x s) * X (s x d) * R (d x d)`.
fn triple(l: &[f64], x: &[f64], r: &[f64], s: usize, d: usize) -> Vec<f64> {
    let mut lx = vec![0.0; s * d];
    for i in 0..s {
        for k in 0..s {
            let a = l[i * s + k];
            for j in 0..d {
                lx[i * d + j] += a * x[k * d + j];
            }
        }
    }
    let mut out = vec![0.0; s * d];
    for i in 0..s {
        for k in 0..d {
            let a = lx[i * d + k];
            for j in 0..d {
                out[i * d + j] += a * r[k * d + j];
            }
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
