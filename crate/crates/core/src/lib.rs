pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod metrics;
pub mod srr;
pub mod survey;
pub mod synthetic;
pub mod tiling;

pub use crabwatch_nn::{Scalar, Tensor};
pub use error::{Error, Result};
pub use imaging::ImageBuffer;

pub type ImageF32 = ImageBuffer<f32>;
pub type ImageF64 = ImageBuffer<f64>;
pub type SrModelF32 = srr::SrModel<f32>;
pub type SrModelF64 = srr::SrModel<f64>;
pub type DetectorF32 = detector::Detector<f32>;
pub type DetectorF64 = detector::Detector<f64>;
