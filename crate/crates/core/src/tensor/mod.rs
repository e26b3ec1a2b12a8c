//! Minimal dense-tensor engine: row-major tensors, a reverse-mode tape and Adam.

mod adam;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, GruVars, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: unsupported axis {axis}")]
    Axis { op: &'static str, axis: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called on a value with no recorded graph")]
    NoGraph,
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("parameter {0} requires grad but has no gradient")]
    MissingGrad(usize),
}
