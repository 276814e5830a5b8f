//! Mildly ill-posed convolution kernels and spread diagnostics.
//!
//! The kernel `k_{a,b}` is defined by its Fourier symbol
//! `(1 + b^2 |xi|^2)^(-a)` on the unit cube, with frequencies
//! `xi = 2 pi m` for integer `m`. Convolution is periodic.

use rustfft::num_complex::Complex64;

use crate::error::{MiscatError, Result};
use crate::fft::{FftBuffers, FftPlan};
use crate::grid::GridSignal;

/// Radially symmetric Fourier symbol on the unit cube.
pub trait RadialSymbol {
    fn dim(&self) -> usize;
    /// Symbol value at squared frequency norm `|xi|^2`.
    fn symbol_sq(&self, xi_sq: f64) -> f64;
}

/// `(1 + b^2 |xi|^2)^(-a)`. `a = 0` is the identity operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionKernelSpec {
    pub a: u32,
    pub b: f64,
    pub d: usize,
}

impl ConvolutionKernelSpec {
    pub fn new(a: u32, b: f64, d: usize) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(MiscatError::InvalidParameter(format!("kernel width b={b} must be positive")));
        }
        if d == 0 || d > 2 {
            return Err(MiscatError::UnsupportedDimension(d));
        }
        Ok(Self { a, b, d })
    }

    pub fn identity(d: usize) -> Self {
        Self { a: 0, b: 1.0, d }
    }
}

impl RadialSymbol for ConvolutionKernelSpec {
    fn dim(&self) -> usize {
        self.d
    }
    fn symbol_sq(&self, xi_sq: f64) -> f64 {
        (1.0 + self.b * self.b * xi_sq).powi(-(self.a as i32))
    }
}

/// Gaussian symbol `exp(-s^2 |xi|^2 / 2)`, spatial standard deviation `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSymbol {
    pub s: f64,
    pub d: usize,
}

impl RadialSymbol for GaussianSymbol {
    fn dim(&self) -> usize {
        self.d
    }
    fn symbol_sq(&self, xi_sq: f64) -> f64 {
        (-0.5 * self.s * self.s * xi_sq).exp()
    }
}

pub fn fourier_symbol(spec: &ConvolutionKernelSpec, xi: &[f64]) -> f64 {
    spec.symbol_sq(xi.iter().map(|x| x * x).sum())
}

fn lattice_sq(m: [i64; 2]) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    two_pi * two_pi * ((m[0] * m[0] + m[1] * m[1]) as f64)
}

/// Periodic convolution `k * f` on the grid of `f`.
pub fn convolve<S: RadialSymbol>(spec: &S, f: &GridSignal) -> Result<GridSignal> {
    if f.d != spec.dim() {
        return Err(MiscatError::DimensionMismatch {
            expected: spec.dim(),
            found: f.d,
        });
    }
    let plan = FftPlan::new(f.n, f.d)?;
    let mut buf = FftBuffers::default();
    let mut spec_f: Vec<Complex64> = Vec::new();
    plan.forward(&f.values, &mut spec_f, &mut buf);
    for (c, m) in spec_f.iter_mut().zip(plan.frequencies()) {
        *c *= spec.symbol_sq(lattice_sq(m));
    }
    let mut out = vec![0.0; f.values.len()];
    plan.inverse(&mut spec_f, &mut out, &mut buf);
    Ok(GridSignal {
        n: f.n,
        d: f.d,
        values: out,
        pixel_size: f.pixel_size,
    })
}

/// Spatial kernel on an `n`-grid with its peak moved to `(n/2, n/2)`.
pub fn spatial_kernel<S: RadialSymbol>(spec: &S, n: usize) -> Result<GridSignal> {
    let d = spec.dim();
    let mut impulse = GridSignal::zeros(n, d);
    let c = n / 2;
    let idx = if d == 1 { c } else { c * n + c };
    impulse.values[idx] = 1.0;
    convolve(spec, &impulse)
}

/// Full width at half maximum in physical units (`pixel_size` per pixel).
pub fn fwhm<S: RadialSymbol>(spec: &S, n: usize, pixel_size: f64) -> Result<f64> {
    let k = spatial_kernel(spec, n)?;
    let c = n / 2;
    let profile: Vec<f64> = match spec.dim() {
        1 => k.values[c..].to_vec(),
        _ => k.values[c * n + c..(c + 1) * n].to_vec(),
    };
    let half = 0.5 * profile[0];
    let mut radius = None;
    for r in 1..profile.len() {
        if profile[r] <= half {
            let (y0, y1) = (profile[r - 1], profile[r]);
            radius = Some((r - 1) as f64 + (y0 - half) / (y0 - y1));
            break;
        }
    }
    let radius = radius.ok_or(MiscatError::GridTooCoarse { radius_px: 0.0 })?;
    if radius < 2.0 {
        return Err(MiscatError::GridTooCoarse { radius_px: radius });
    }
    Ok(2.0 * radius * pixel_size)
}

fn centered_offsets(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 - (n / 2) as f64).collect()
}

fn tail_mass(k: &GridSignal) -> f64 {
    let n = k.n;
    let off = centered_offsets(n);
    let cut = 0.45 * n as f64;
    let total: f64 = k.values.iter().map(|v| v.abs()).sum();
    let mut tail = 0.0;
    match k.d {
        1 => {
            for (i, v) in k.values.iter().enumerate() {
                if off[i].abs() >= cut {
                    tail += v.abs();
                }
            }
        }
        _ => {
            for i0 in 0..n {
                for i1 in 0..n {
                    if off[i0].abs().max(off[i1].abs()) >= cut {
                        tail += k.at(i0, i1).abs();
                    }
                }
            }
        }
    }
    tail / total
}

/// Radial kurtosis `E|x|^4 / (E|x|^2)^2` of the normalized kernel.
///
/// For `d = 1` this is the ordinary kurtosis of the kernel.
pub fn kurtosis<S: RadialSymbol>(spec: &S, n: usize) -> Result<f64> {
    let k = spatial_kernel(spec, n)?;
    let tail = tail_mass(&k);
    if tail > 1e-6 {
        return Err(MiscatError::HeavyTail { tail });
    }
    let off = centered_offsets(n);
    let (mut m0, mut m2, mut m4) = (0.0, 0.0, 0.0);
    match k.d {
        1 => {
            for (i, v) in k.values.iter().enumerate() {
                let r2 = off[i] * off[i];
                m0 += v;
                m2 += v * r2;
                m4 += v * r2 * r2;
            }
        }
        _ => {
            for i0 in 0..n {
                for i1 in 0..n {
                    let v = k.at(i0, i1);
                    let r2 = off[i0] * off[i0] + off[i1] * off[i1];
                    m0 += v;
                    m2 += v * r2;
                    m4 += v * r2 * r2;
                }
            }
        }
    }
    let (m2, m4) = (m2 / m0, m4 / m0);
    Ok(m4 / (m2 * m2))
}

/// Kurtosis of the 1-D marginal of the normalized kernel.
pub fn marginal_kurtosis<S: RadialSymbol>(spec: &S, n: usize) -> Result<f64> {
    let k = spatial_kernel(spec, n)?;
    let tail = tail_mass(&k);
    if tail > 1e-6 {
        return Err(MiscatError::HeavyTail { tail });
    }
    let off = centered_offsets(n);
    let marginal: Vec<f64> = match k.d {
        1 => k.values.clone(),
        _ => (0..n).map(|i0| (0..n).map(|i1| k.at(i0, i1)).sum()).collect(),
    };
    let (mut m0, mut m2, mut m4) = (0.0, 0.0, 0.0);
    for (i, v) in marginal.iter().enumerate() {
        let x2 = off[i] * off[i];
        m0 += v;
        m2 += v * x2;
        m4 += v * x2 * x2;
    }
    let (m2, m4) = (m2 / m0, m4 / m0);
    Ok(m4 / (m2 * m2))
}
