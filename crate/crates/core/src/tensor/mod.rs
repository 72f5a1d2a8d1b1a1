//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is an immutable row-major value; differentiable computation is
//! recorded on a [`Tape`], which hands out [`Var`] handles and replays the
//! recorded operations in reverse to populate leaf gradients. Everything is
//! 64-bit: at the grid sizes this crate targets, precision is cheaper than
//! chasing numerical drift, and the finite-difference gradient checks rely
//! on it.

mod adam;
pub mod gradcheck;
mod nn;
mod store;
mod tape;

pub use adam::{Adam, AdamConfig, AdamSnapshot};
pub use nn::{BnMode, RunningStats, BN_MOMENTUM, BN_VARIANCE_FLOOR};
pub use store::{NamedTensors, TensorRecord};
pub use tape::{Tape, Var};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} input, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("adam: non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("adam: gradient for `{name}` has {grad_len} elements, parameter has {param_len}")]
    GradientSizeMismatch {
        name: String,
        grad_len: usize,
        param_len: usize,
    },
    #[error("tensor store: blob of {blob_len} bytes ends before `{name}` at byte range {start}..{end}")]
    TruncatedBlob {
        name: String,
        start: u64,
        end: u64,
        blob_len: u64,
    },
    #[error("tensor store: record `{name}` shape {shape:?} disagrees with count {count}")]
    RecordShapeMismatch {
        name: String,
        shape: Vec<usize>,
        count: u64,
    },
    #[error("tensor store: duplicate tensor name `{0}`")]
    DuplicateName(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Immutable dense N-dimensional array of f64, row-major.
///
/// The buffer is shared (`Arc`), so clones are cheap and recorded operations
/// can capture the values they need for their backward pass without copying.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                actual: self.numel(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub(crate) fn shared(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4, 2]).is_err());
    }
}
