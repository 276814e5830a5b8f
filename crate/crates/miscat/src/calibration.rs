//! Scale calibration weights, calibration constants and Gumbel limits.

use crate::error::{MiscatError, Result};

/// Constants of the calibration `omega_h(K, C_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[allow(non_snake_case)]
pub struct CalibrationParams {
    pub K: f64,
    pub C_d: f64,
    pub gamma: f64,
    pub d: usize,
}

/// Density of the scale system, which fixes `C_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSystem {
    DenseFull,
    SingleScale,
    DenseSquares,
}

impl ScaleSystem {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense_full" => Ok(Self::DenseFull),
            "single_scale" => Ok(Self::SingleScale),
            "dense_squares" => Ok(Self::DenseSquares),
            _ => Err(MiscatError::Parse(format!("unknown scale system {s}"))),
        }
    }
}

pub fn select_cd(system: ScaleSystem, d: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(MiscatError::InvalidParameter(format!("gamma={gamma} outside (0, 1]")));
    }
    let d = d as f64;
    Ok(match system {
        ScaleSystem::DenseFull => 2.0 * d + d / gamma - 1.0,
        ScaleSystem::SingleScale => d / gamma - 1.0,
        ScaleSystem::DenseSquares => 1.0 + d / gamma,
    })
}

/// `sqrt(2 log(K/h)) + C_d log(sqrt(2 log(K/h))) / sqrt(2 log(K/h))`.
pub fn omega(params: &CalibrationParams, h_product: f64) -> Result<f64> {
    let ratio = params.K / h_product;
    // Tolerate roundoff exactly at the boundary.
    if !(ratio >= std::f64::consts::E.sqrt() * (1.0 - 1e-12)) {
        return Err(MiscatError::ScaleConstraint { ratio });
    }
    let r = (2.0 * ratio.ln()).max(1.0).sqrt();
    Ok(r + params.C_d * r.ln() / r)
}

/// `((-1)^(d-1) / (d-1)!) sum_k (-1)^k C(d,k) log(k delta + (d-k) Delta)`.
pub fn i_d_constant(delta: f64, big_delta: f64, d: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < big_delta && big_delta <= 1.0) {
        return Err(MiscatError::InvalidParameter(format!(
            "need 0 < delta < Delta <= 1, got {delta}, {big_delta}"
        )));
    }
    if d == 0 {
        return Err(MiscatError::UnsupportedDimension(d));
    }
    if d == 1 {
        return Ok((big_delta / delta).ln());
    }
    // Factor Delta out of every log; the alternating sum kills log(Delta).
    let r = delta / big_delta;
    let mut s = 0.0;
    let mut binom = 1.0;
    for k in 0..=d {
        if k > 0 {
            binom = binom * (d - k + 1) as f64 / k as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * binom * (k as f64 * r + (d - k) as f64).ln();
    }
    let fact: f64 = (1..d).map(|i| i as f64).product();
    let lead = if (d - 1) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(lead * s / fact)
}

pub fn gumbel_cdf(lambda: f64, prefactor: f64) -> f64 {
    (-(-lambda).exp() * prefactor).exp()
}

/// Inverse of [`gumbel_cdf`].
pub fn gumbel_quantile(p: f64, prefactor: f64) -> f64 {
    -(-(p.ln()) / prefactor).ln()
}

/// `K` giving a standard Gumbel limit when `gamma` is 1/2 or 1.
#[allow(non_snake_case)]
pub fn standard_K(gamma: f64, det_dxi_inv: f64, i_d: f64, d: usize) -> Result<f64> {
    if !(det_dxi_inv > 0.0 && i_d > 0.0) {
        return Err(MiscatError::InvalidParameter("determinant and I_d must be positive".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    if (gamma - 0.5).abs() < 1e-12 {
        Ok(det_dxi_inv * i_d / two_pi.sqrt())
    } else if (gamma - 1.0).abs() < 1e-12 {
        Ok(det_dxi_inv * i_d / two_pi.powf((d as f64 + 1.0) / 2.0))
    } else {
        Err(MiscatError::InvalidParameter(format!(
            "no Pickands constant available for gamma={gamma}"
        )))
    }
}

/// Scale exponents `(delta, Delta)` with `h_max = n^-delta`, `h_min = n^-Delta`.
pub fn scale_exponents(h_min: f64, h_max: f64, n: usize) -> (f64, f64) {
    let ln = (n as f64).ln();
    ((1.0 / h_max).ln() / ln, (1.0 / h_min).ln() / ln)
}
