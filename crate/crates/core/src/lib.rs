//! Multilingual multi-speaker text-to-speech on synthetic languages, built on a small
//! reverse-mode autodiff engine. Everything numeric is generic over [`tensor::Scalar`]
//! (`f32` or `f64`); the aliases below fix the precision used by the command-line tool.

pub mod analysis;
pub mod audio;
pub mod dataset;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod phoneme;
pub mod synthlang;
pub mod tensor;
pub mod training;

/// Working precision of the command-line tool.
pub type Real = f32;
pub type Tensor = tensor::Tensor<Real>;
pub type Params = model::ModelParams<Real>;
pub type Example = dataset::Example<Real>;
/// Double precision, used by gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Params64 = model::ModelParams<f64>;
