//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MiscatError {
    #[error("dimension mismatch: expected d={expected}, got d={found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension d={0}")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probe smoothness insufficient: beta={beta} on axis {axis}, need at least {required}")]
    InsufficientSmoothness {
        axis: usize,
        beta: u32,
        required: u32,
    },

    #[error("scale constraint violated: K/h = {ratio:.6} is below sqrt(e)")]
    ScaleConstraint { ratio: f64 },

    #[error("stencil {stencil:?} does not fit a grid of size {n} with margin {margin}")]
    StencilTooLarge {
        stencil: Vec<usize>,
        n: usize,
        margin: usize,
    },

    #[error("non-positive variance {value} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("grid too coarse: half-maximum radius {radius_px:.3} px is below 2 px")]
    GridTooCoarse { radius_px: f64 },

    #[error("kernel tail mass {tail:.3e} exceeds 1e-6 on this grid")]
    HeavyTail { tail: f64 },

    #[error("value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("divergent quadrature: {0}")]
    Divergent(String),

    #[error("fingerprint mismatch: table {table}, configuration {config}")]
    FingerprintMismatch { table: String, config: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MiscatError>;
