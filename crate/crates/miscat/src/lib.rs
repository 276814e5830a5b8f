//! Multiscale scanning tests for inverse regression `Y = Tf + noise`.
//!
//! The crate builds probe dictionaries for deconvolution and the Radon
//! transform, evaluates calibrated local statistics over all positions
//! and scales with FFT correlation, simulates the Gaussian reference
//! statistic for quantiles, and reports rejection sets with family-wise
//! error control.

pub mod calibration;
pub mod error;
pub mod fft;
pub mod gauss;
pub mod grid;
pub mod kernel;
pub mod noise;
pub mod probe;
pub mod properties;
pub mod radon;
pub mod rng;
pub mod scan;
pub mod studies;

pub use error::{MiscatError, Result};
pub use grid::GridSignal;
