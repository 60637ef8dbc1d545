//! Stroke extraction for Chinese-character images: registration against a
//! reference layout, prior-guided segmentation and per-stroke extraction.

pub mod data;
pub mod error;
pub mod extractnet;
pub mod field;
pub mod metrics;
pub mod nn;
pub mod overlay;
pub mod pipeline;
pub mod prior;
pub mod raster;
pub mod recognition;
pub mod sdnet;
pub mod segnet;
pub mod similarity;

pub use error::{Error, Result};
