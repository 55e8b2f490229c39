//! Core of the focal-depth toolkit: raster types and file formats, a
//! thin-lens focal-stack simulator, the depth/augmentation preprocessing
//! pipeline and a classical shape-from-focus baseline.

pub mod classic;
pub mod error;
pub mod imaging;
pub mod lens;
pub mod preprocess;

pub use error::{Error, Result};
pub use imaging::{DepthMap, FocalStack, Image};
