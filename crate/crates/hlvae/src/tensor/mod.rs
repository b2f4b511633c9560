//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything the model trains through is expressed with the operation set in
//! [`Var`]: elementwise arithmetic with broadcasting, matrix products,
//! pointwise nonlinearities, reductions, slicing/concatenation, and the two
//! linear-algebra primitives a Gaussian-process prior needs — a jittered
//! Cholesky factorization and triangular solves, both differentiable.
//!
//! A [`Tape`] records one forward computation; [`Var::backward`] replays it in
//! reverse and accumulates gradients for every grad-tracked leaf. Tapes are
//! single-threaded and cheap to create, so value-only evaluation just runs a
//! throwaway tape with untracked leaves.

mod grad;
pub(crate) mod raw;
mod tape;

pub use grad::{gradient_check, Gradients};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by tensor construction, forward operations, and backward.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("factorization failure: pivot {pivot:.3e} at row {row} not positive after jitter escalation")]
    FactorizationFailure { row: usize, pivot: f64 },
    #[error("singular triangular matrix: zero diagonal at row {row}")]
    SingularTriangular { row: usize },
    #[error("backward requires a scalar root, got {elements} elements")]
    NotScalar { elements: usize },
}

/// A dense row-major array of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the value count.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} holds {} values, got {}", shape, expect, values.len()),
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; n] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![1.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![value; n] }
    }

    /// A 1×1 tensor.
    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], values: vec![v] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// n×1 column vector.
    pub fn column(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len(), 1], values }
    }

    /// 1×n row vector.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor { shape: vec![1, values.len()], values }
    }

    /// Row-major matrix from nested rows; rows must be rectangular.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "Tensor::from_rows",
                    detail: format!("ragged rows: {} vs {}", row.len(), c),
                });
            }
            values.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::ShapeMismatch {
                op: "dims2",
                detail: format!("expected 2-D, got {:?}", other),
            }),
        }
    }

    /// Entry (i, j) of a 2-D tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let c = self.shape[1];
        self.values[i * c + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.values[i * c + j] = v;
    }

    /// The single value of a one-element tensor.
    pub fn scalar_value(&self) -> Result<f64, TensorError> {
        if self.values.len() != 1 {
            return Err(TensorError::NotScalar { elements: self.values.len() });
        }
        Ok(self.values[0])
    }
}
