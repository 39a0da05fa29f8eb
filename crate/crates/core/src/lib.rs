//! Core data model and algorithms for LiDAR-labeled shrubland mapping:
//! rasters, canopy height labeling, predictor stacks, sampling, evaluation
//! and seeded synthetic landscapes.

pub mod chm;
pub mod evaluation;
pub mod error;
pub mod kv;
pub mod predictors;
pub mod raster;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
