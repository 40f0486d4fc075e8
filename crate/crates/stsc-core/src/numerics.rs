//! Minimal dense-array kernels with numerically stable reductions.
//!
//! All reductions run left-to-right in index order so results are
//! bit-reproducible across runs.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;

/// Row-major dense array of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(alloc::format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inner product of two equal-length vectors, summed left to right.
pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(alloc::format!(
            "dot: lengths {} and {} differ",
            u.len(),
            v.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        acc += a * b;
    }
    Ok(acc)
}

/// log Σ exp(x_k), evaluated as m + log Σ exp(x_k − m) with m = max(xs).
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Dimension("log_sum_exp: empty input".to_string()));
    }
    let mut m = xs[0];
    for &x in &xs[1..] {
        if x > m {
            m = x;
        }
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += fmath::exp(x - m);
    }
    Ok(m + fmath::ln(acc))
}

/// v / max(‖v‖₂, eps); leaves near-zero vectors scaled by 1/eps.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let mut sq = 0.0;
    for &x in v {
        sq += x * x;
    }
    let norm = fmath::sqrt(sq);
    let denom = if norm > eps { norm } else { eps };
    v.iter().map(|&x| x / denom).collect()
}

/// Shift-invariant softmax.
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(xs)?;
    Ok(xs.iter().map(|&x| fmath::exp(x - lse)).collect())
}
