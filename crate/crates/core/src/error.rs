use thiserror::Error;

/// Errors produced by the detection pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate histogram: no threshold splits the map")]
    DegenerateHistogram,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("frequency too high for raster: {frequency} cycles gives sigma {sigma:.3} px")]
    FrequencyTooHigh { frequency: f64, sigma: f64 },
    #[error("image too small: {width}x{height} is smaller than the {kernel}x{kernel} kernel")]
    ImageTooSmall { width: usize, height: usize, kernel: usize },
    #[error("no crown statistics: no contours found inside the accepted boxes")]
    NoCrownStatistics,
    #[error("no ground truth")]
    NoGroundTruth,
    #[error("model id {model_id} out of range for {n_models} models")]
    InvalidModelId { model_id: usize, n_models: usize },
    #[error("crown {index} at ({cx}, {cy}) radius {radius} lies outside the scene")]
    CrownOutOfBounds {
        index: usize,
        cx: f64,
        cy: f64,
        radius: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
