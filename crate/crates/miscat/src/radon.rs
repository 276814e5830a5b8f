//! Radon transform on the unit square and the matching image-space dictionary.
//!
//! Offsets are signed distances from the centre `(1/2, 1/2)`: offset index
//! `l` carries `s_l = u_l - 1/2` with `u_l = (l - 1/2)/n`. Angles are
//! `theta_k = k pi / n_angles`, `k = 0..n_angles`; inner products over the
//! sinogram use weights `(1/n_offsets) * (2 pi / n_angles)`, which equals the
//! full-circle measure because `Tf(s, theta + pi) = Tf(-s, theta)`.

use std::f64::consts::PI;

use puruspe::Jn;
use rayon::prelude::*;

use crate::error::{MiscatError, Result};
use crate::grid::GridSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadonGrid {
    pub n_angles: usize,
    pub n_offsets: usize,
}

impl RadonGrid {
    pub fn new(n_angles: usize, n_offsets: usize) -> Result<Self> {
        if n_angles == 0 || n_offsets == 0 {
            return Err(MiscatError::InvalidParameter("empty Radon grid".into()));
        }
        Ok(Self { n_angles, n_offsets })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * PI / self.n_angles as f64
    }

    /// `u_l = (l - 1/2)/n` for `l = 1..=n`, stored zero-based.
    pub fn offset(&self, l: usize) -> f64 {
        (l as f64 + 0.5) / self.n_offsets as f64
    }

    pub fn signed_offset(&self, l: usize) -> f64 {
        self.offset(l) - 0.5
    }

    pub fn weight(&self) -> f64 {
        2.0 * PI / (self.n_angles as f64 * self.n_offsets as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub grid: RadonGrid,
    /// Angle-major: `values[k * n_offsets + l]`.
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.grid.n_offsets + l]
    }

    /// Row `k` as a slice over offsets.
    pub fn row(&self, k: usize) -> &[f64] {
        let m = self.grid.n_offsets;
        &self.values[k * m..(k + 1) * m]
    }

    /// PGRID export; needs as many angles as offsets.
    pub fn to_pgrid(&self, rho: f64) -> Result<String> {
        if self.grid.n_angles != self.grid.n_offsets {
            return Err(MiscatError::DimensionMismatch {
                expected: self.grid.n_offsets,
                found: self.grid.n_angles,
            });
        }
        let g = GridSignal::new(self.grid.n_offsets, 2, self.values.clone())?;
        Ok(g.to_pgrid(&[format!(
            "n_angles={} n_offsets={} rho={rho}",
            self.grid.n_angles, self.grid.n_offsets
        )]))
    }
}

fn bilinear(f: &GridSignal, x: f64, y: f64) -> f64 {
    let n = f.n;
    let fx = x * n as f64 - 0.5;
    let fy = y * n as f64 - 0.5;
    let (ix, iy) = (fx.floor(), fy.floor());
    let (wx, wy) = (fx - ix, fy - iy);
    let (ix, iy) = (ix as isize, iy as isize);
    let get = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
            0.0
        } else {
            f.values[r as usize * n + c as usize]
        }
    };
    (1.0 - wy) * ((1.0 - wx) * get(iy, ix) + wx * get(iy, ix + 1))
        + wy * ((1.0 - wx) * get(iy + 1, ix) + wx * get(iy + 1, ix + 1))
}

/// Line integrals of the bilinear interpolant of `f` (pixel centres at
/// `(j + 1/2)/n`, column = x, row = y), midpoint rule with step `1/(2n)`.
pub fn radon_forward(f: &GridSignal, grid: &RadonGrid) -> Result<Sinogram> {
    if f.d != 2 {
        return Err(MiscatError::UnsupportedDimension(f.d));
    }
    let step = 1.0 / (2.0 * f.n as f64);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let m = (2.0 * half / step).ceil() as usize;
    let t0 = -(m as f64) * step / 2.0;
    let mut values = vec![0.0; grid.n_angles * grid.n_offsets];
    values.par_chunks_mut(grid.n_offsets).enumerate().for_each(|(k, row)| {
        let th = grid.angle(k);
        let (c, s) = (th.cos(), th.sin());
        for (l, out) in row.iter_mut().enumerate() {
            let u = grid.signed_offset(l);
            let mut acc = 0.0;
            for j in 0..m {
                let tau = t0 + (j as f64 + 0.5) * step;
                acc += bilinear(f, 0.5 + u * c - tau * s, 0.5 + u * s + tau * c);
            }
            *out = acc * step;
        }
    });
    Ok(Sinogram { grid: *grid, values })
}

/// Radial probe `phi(x) = (1 - |x|^2 / R^2)^m` supported in the ball of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProbe {
    pub m: u32,
    pub radius: f64,
}

impl RadialProbe {
    pub fn bump(m: u32) -> Self {
        Self { m, radius: 1.0 }
    }

    pub fn profile(&self, r: f64) -> f64 {
        let q = r / self.radius;
        if q >= 1.0 {
            0.0
        } else {
            (1.0 - q * q).powi(self.m as i32)
        }
    }

    /// Tabulated samples on `r_j = (j + 1/2) R / nodes`.
    pub fn samples(&self, nodes: usize) -> Vec<(f64, f64)> {
        let dr = self.radius / nodes as f64;
        (0..nodes).map(|j| {
            let r = (j as f64 + 0.5) * dr;
            (r, self.profile(r))
        })
        .collect()
    }
}

/// Radial 2-D Fourier transform `F(s) = (F_2 phi)(s theta)` tabulated on `s_j = j ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    pub ds: f64,
    pub values: Vec<f64>,
}

impl RadialSpectrum {
    /// Hankel transform `F(s) = 2 pi int_0^R phi(r) J0(s r) r dr` by the midpoint rule.
    pub fn from_probe(probe: &RadialProbe, s_max: f64, ds: f64, r_nodes: usize) -> Result<Self> {
        if !(ds > 0.0 && s_max > ds) || r_nodes < 16 {
            return Err(MiscatError::InvalidParameter("bad Hankel quadrature".into()));
        }
        let samples = probe.samples(r_nodes);
        let dr = probe.radius / r_nodes as f64;
        let count = (s_max / ds).round() as usize + 1;
        let values: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|j| {
                let s = j as f64 * ds;
                2.0 * PI * dr * samples.iter().map(|&(r, p)| p * Jn(0, s * r) * r).sum::<f64>()
            })
            .collect();
        let spec = Self { ds, values };
        spec.check_integrable()?;
        Ok(spec)
    }

    pub fn from_fn(f: impl Fn(f64) -> f64, s_max: f64, ds: f64) -> Result<Self> {
        let count = (s_max / ds).round() as usize + 1;
        let spec = Self { ds, values: (0..count).map(|j| f(j as f64 * ds)).collect() };
        spec.check_integrable()?;
        Ok(spec)
    }

    pub fn s_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.ds
    }

    fn check_integrable(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(MiscatError::Divergent("non-finite spectrum".into()));
        }
        Ok(())
    }

    /// Trapezoid rule for `int_0^{s_max} g(s, F(s)) ds`.
    fn integrate(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        let last = self.values.len() - 1;
        let mut acc = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            let w = if j == 0 || j == last { 0.5 } else { 1.0 };
            acc += w * g(j as f64 * self.ds, v);
        }
        acc * self.ds
    }

    /// Relative weight of the last tenth of the table in `int F^2 s^4 ds`.
    pub fn tail_fraction(&self) -> f64 {
        let cut = 0.9 * self.s_max();
        let total = self.integrate(|s, f| f * f * s.powi(4));
        let tail = self.integrate(|s, f| if s >= cut { f * f * s.powi(4) } else { 0.0 });
        tail / total
    }
}

/// `Phi(x) = (1/(4 pi^2)) int_0^inf F(s) s cos(s x) ds`, the even image-space
/// function with `<f, phi> = <Tf, Phi>` over offsets and the full circle.
pub fn radon_phi_from_spectrum(spec: &RadialSpectrum, x_grid: &[f64]) -> Vec<f64> {
    x_grid
        .par_iter()
        .map(|&x| spec.integrate(|s, f| f * s * (s * x).cos()) / (4.0 * PI * PI))
        .collect()
}

/// Default spectral resolution for a probe of radius `R`.
pub fn default_spectrum(probe: &RadialProbe) -> Result<RadialSpectrum> {
    let r = probe.radius;
    RadialSpectrum::from_probe(probe, 120.0 / r, 0.01 / r, 2000)
}

pub fn radon_phi(probe: &RadialProbe, d: usize, x_grid: &[f64]) -> Result<Vec<f64>> {
    if d != 2 {
        return Err(MiscatError::UnsupportedDimension(d));
    }
    Ok(radon_phi_from_spectrum(&default_spectrum(probe)?, x_grid))
}

/// `Phi` tabulated on a uniform grid, evaluated with cubic interpolation and
/// zero outside the truncated support.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    pub dx: f64,
    /// Values at `x_j = j dx`, `j >= 0`; `Phi` is even.
    pub values: Vec<f64>,
}

impl PhiTable {
    pub fn new(spec: &RadialSpectrum, x_max: f64, dx: f64) -> Self {
        let count = (x_max / dx).ceil() as usize + 1;
        let xs: Vec<f64> = (0..count).map(|j| j as f64 * dx).collect();
        let mut values = radon_phi_from_spectrum(spec, &xs);
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(last) = values.iter().rposition(|v| v.abs() >= 1e-8 * peak) {
            values.truncate(last + 1);
        }
        Self { dx, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = x.abs() / self.dx;
        let j = p.floor() as usize;
        if j + 1 >= self.values.len() {
            return 0.0;
        }
        let t = p - j as f64;
        let g = |i: isize| self.values[i.unsigned_abs().min(self.values.len() - 1)];
        let (p0, p1, p2, p3) = (g(j as isize - 1), g(j as isize), g(j as isize + 1), g(j as isize + 2));
        // Catmull-Rom.
        p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)))
    }
}

/// `<Y, Phi_i>` over the sinogram for the element at position `t` (object
/// coordinates in `[0, 1]^2`) and scale `h`, with `Phi_i(s, theta) =
/// h^{-1} Phi((s - <theta, t - c>)/h)` paired with `phi_i(x) = h^{-1} phi((x - t)/h)`.
pub fn image_inner_product(sino: &Sinogram, table: &PhiTable, t: [f64; 2], h: f64) -> f64 {
    let g = &sino.grid;
    let mut acc = 0.0;
    for k in 0..g.n_angles {
        let th = g.angle(k);
        let a = (t[0] - 0.5) * th.cos() + (t[1] - 0.5) * th.sin();
        let row = sino.row(k);
        for (l, y) in row.iter().enumerate() {
            acc += y * table.eval((g.signed_offset(l) - a) / h);
        }
    }
    acc * g.weight() / h
}

/// `sum_j f(x_j) phi_i(x_j) / n^2` on pixel centres.
pub fn object_inner_product(f: &GridSignal, probe: &RadialProbe, t: [f64; 2], h: f64) -> f64 {
    let n = f.n;
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            let x = (c as f64 + 0.5) / n as f64 - t[0];
            let y = (r as f64 + 0.5) / n as f64 - t[1];
            acc += f.values[r * n + c] * probe.profile((x * x + y * y).sqrt() / h);
        }
    }
    acc / (h * (n * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadonDxi {
    /// Diagonal of `D_Xi^{-2}`, replicated per axis.
    pub diag: Vec<f64>,
    /// `C_phi,d int w1 w2 |w| |F|^2 dw`, zero by symmetry.
    pub offdiag: f64,
    pub c_phi: f64,
}

impl RadonDxi {
    pub fn det(&self) -> f64 {
        self.diag.iter().product()
    }
}

/// Diagonal matrix `D_Xi^{-2}` in polar coordinates (`d = 2`).
pub fn radon_dxi_from_spectrum(spec: &RadialSpectrum, n_theta: usize) -> Result<RadonDxi> {
    if spec.tail_fraction() > 1e-3 {
        return Err(MiscatError::Divergent("spectral moment does not settle; probe too rough".into()));
    }
    // ||F_1[F(|s|) |s|]||^2 over R x S^1 = 2 pi * 2 int F^2 s^2 ds * 2 pi.
    let norm = 2.0 * PI * 2.0 * spec.integrate(|s, f| f * f * s * s) * 2.0 * PI;
    let c_phi = 4.0 * PI / norm;
    let radial = spec.integrate(|s, f| f * f * s.powi(4));
    let dth = 2.0 * PI / n_theta as f64;
    let (mut cc, mut cs) = (0.0, 0.0);
    for k in 0..n_theta {
        let th = k as f64 * dth;
        cc += th.cos().powi(2) * dth;
        cs += th.cos() * th.sin() * dth;
    }
    let v = c_phi * cc * radial;
    Ok(RadonDxi { diag: vec![v; 2], offdiag: c_phi * cs * radial, c_phi })
}

pub fn radon_dxi(probe: &RadialProbe, d: usize) -> Result<RadonDxi> {
    if d != 2 {
        return Err(MiscatError::UnsupportedDimension(d));
    }
    radon_dxi_from_spectrum(&default_spectrum(probe)?, 720)
}

#[allow(non_snake_case)]
/// `K = (1 - rho)^d (2 pi)^{-(d+1)/2} det(D_Xi^{-2})^{1/2} log(Delta / delta)`.
pub fn radon_gumbel_K(rho: f64, delta: f64, delta_max: f64, dxi_diag: &[f64], d: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(MiscatError::InvalidParameter(format!("rho={rho} outside [0, 1)")));
    }
    if !(delta > 0.0 && delta < delta_max && delta_max <= 1.0) {
        return Err(MiscatError::InvalidParameter(format!("need 0 < delta={delta} < Delta={delta_max} <= 1")));
    }
    if dxi_diag.len() != d {
        return Err(MiscatError::DimensionMismatch { expected: d, found: dxi_diag.len() });
    }
    let det: f64 = dxi_diag.iter().product();
    Ok((1.0 - rho).powi(d as i32)
        * (2.0 * PI).powf(-(d as f64 + 1.0) / 2.0)
        * det.sqrt()
        * (delta_max / delta).ln())
}
