//! Illuminant estimation for single and multiple light sources.

pub mod aggregate;
pub mod classic;
pub mod cnn;
pub mod datagen;
pub mod detect;
pub mod error;
pub mod filter;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Real;

/// Single-precision aliases used by the command-line tool.
pub type Image = image::LinearImage<f32>;
pub type Illum = image::Illuminant<f32>;
pub type Map = image::EstimateMap<f32>;
pub type Cnn = cnn::CnnModel<f32>;
pub type Truth = io::GroundTruth<f32>;

pub type Image64 = image::LinearImage<f64>;
pub type Illum64 = image::Illuminant<f64>;
pub type Map64 = image::EstimateMap<f64>;
pub type Cnn64 = cnn::CnnModel<f64>;
