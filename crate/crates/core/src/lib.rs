//! Tree crown detection in aerial imagery.
//!
//! The traditional branch turns an RGB tile into crown centers
//! ([`features`] → [`probmap`] → [`segmentation`]). Detector boxes from an
//! external model ensemble are merged with [`wbf`], and [`integrate`]
//! cross-validates both streams. [`eval`] scores results against ground truth
//! and [`synth`] renders scenes with known crowns.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod features;
mod fft;
pub mod integrate;
pub mod pipeline;
pub mod probmap;
pub mod raster;
pub mod segmentation;
pub mod synth;
pub mod wbf;

pub use error::{Error, Result};
