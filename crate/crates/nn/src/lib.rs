//! A small convolutional network for per-pixel depth regression, written
//! against plain `Vec` storage with matrix products delegated to
//! `matrixmultiply`.
//!
//! Training runs in `f32`; every routine is generic over [`Scalar`] so the
//! same code can be checked in `f64` against finite differences.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use model::{DepthNetConfig, Gradients, Init, LayerSpec, ModelSpec, ModelState, Param};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{split_groups, train, train_with_observer, Dataset, TrainConfig, TrainOutcome};
