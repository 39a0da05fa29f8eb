//! The predictor cube: spectral indices, temporal segmentation and
//! disturbance history, terrain derivatives, and stack assembly.

pub mod indices;
pub mod segmentation;
pub mod stack;
pub mod terrain;

pub use indices::{nbr, tasseled_cap, TasseledCap, TasseledCapCoefficients};
pub use segmentation::{
    delta_lag1, disturbance_from_fit, fit_to_vertices, segment_series, AnnualSeries, Disturbance,
    SegmentedFit,
};
pub use stack::{
    assemble_stack, Epoch, PredictorStack, StackInputs, StackParams, DEFAULT_FEATURES, STACK_BANDS,
};
pub use terrain::{slope_aspect, twi};
