//! Local statistics over all positions and scales, rejection sets,
//! significance maps and closed-form power diagnostics.
//!
//! A position is the index `t` of the last pixel of a box; the box covers
//! pixels `t - k + 1 ..= t` on every axis. Coefficients are
//! `n^-d sum_j Y_j Phi_i(x_j)` and local variances
//! `n^-2d sum_j sigma_j^2 Phi_i(x_j)^2`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{omega, CalibrationParams};
use crate::error::{MiscatError, Result};
use crate::fft::{FftBuffers, FftPlan};
use crate::grid::GridSignal;
use crate::probe::{DictionaryElement, Scale};

// ----------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub n: usize,
    pub d: usize,
    pub scales: Vec<Scale>,
    pub calibration: CalibrationParams,
    pub alpha: f64,
    pub boundary_margin_px: usize,
    /// Use `|<Y, Phi_i>|` in the data statistic.
    pub two_sided: bool,
    /// Skip boxes in which every observation is zero.
    pub prune_zero_boxes: bool,
}

impl ScanConfig {
    pub fn new(n: usize, d: usize, scales: Vec<Scale>, calibration: CalibrationParams, alpha: f64) -> Self {
        Self {
            n,
            d,
            scales,
            calibration,
            alpha,
            boundary_margin_px: 0,
            two_sided: false,
            prune_zero_boxes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 2 {
            return Err(MiscatError::UnsupportedDimension(self.d));
        }
        if self.scales.is_empty() {
            return Err(MiscatError::InvalidParameter("empty scale list".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MiscatError::InvalidParameter(format!("alpha={} outside (0, 1]", self.alpha)));
        }
        for s in &self.scales {
            if s.d() != self.d {
                return Err(MiscatError::DimensionMismatch { expected: self.d, found: s.d() });
            }
            if s.pixels.iter().any(|&k| k == 0 || k + 2 * self.boundary_margin_px > self.n) {
                return Err(MiscatError::StencilTooLarge {
                    stencil: s.pixels.clone(),
                    n: self.n,
                    margin: self.boundary_margin_px,
                });
            }
            omega(&self.calibration, s.h_product())?;
        }
        Ok(())
    }

    pub fn omegas(&self) -> Result<Vec<f64>> {
        self.scales
            .iter()
            .map(|s| omega(&self.calibration, s.h_product()))
            .collect()
    }

    /// First position and window size for a stencil.
    pub fn window(&self, pixels: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let m = self.boundary_margin_px;
        let origin = pixels.iter().map(|k| m + k - 1).collect();
        let dims = pixels.iter().map(|k| self.n - k - 2 * m + 1).collect();
        (origin, dims)
    }
}

/// Values over a rectangular window of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionField {
    /// Position `t` of the first entry.
    pub origin: Vec<usize>,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl PositionField {
    pub fn position(&self, idx: usize) -> Vec<usize> {
        if self.dims.len() == 1 {
            vec![self.origin[0] + idx]
        } else {
            vec![self.origin[0] + idx / self.dims[1], self.origin[1] + idx % self.dims[1]]
        }
    }

    /// Value at position `t`, if inside the window.
    pub fn get(&self, t: &[usize]) -> Option<f64> {
        let mut idx = 0;
        for l in 0..self.dims.len() {
            if t[l] < self.origin[l] || t[l] >= self.origin[l] + self.dims[l] {
                return None;
            }
            idx = idx * self.dims[l] + (t[l] - self.origin[l]);
        }
        Some(self.values[idx])
    }
}

// ----------------------------------------------------------------------
// Correlation engine

/// Scratch memory for one worker.
#[derive(Default)]
pub struct Workspace {
    pub buf: FftBuffers,
    field: Vec<Complex64>,
    var: Vec<Complex64>,
    stencil: Vec<Complex64>,
    work: Vec<Complex64>,
    real: Vec<f64>,
    pub scratch: Vec<f64>,
}

struct Prepared {
    field: Vec<Complex64>,
    var: Vec<Complex64>,
    homogeneous: Option<f64>,
    nonzero: Option<SummedArea>,
}

/// Dictionary prepared for repeated scanning on one grid.
pub struct Scanner {
    pub config: ScanConfig,
    pub dict: Vec<DictionaryElement>,
    pub omegas: Vec<f64>,
    plan: FftPlan,
    spectra: Vec<Vec<Complex64>>,
    sum_sq: Vec<f64>,
}

/// Stencil spectra are cached when they fit in this many bytes.
const SPECTRUM_CACHE_BYTES: usize = 1 << 30;

impl Scanner {
    pub fn new(config: ScanConfig, dict: Vec<DictionaryElement>) -> Result<Self> {
        config.validate()?;
        if dict.len() != config.scales.len() {
            return Err(MiscatError::InvalidParameter(format!(
                "{} dictionary elements for {} scales",
                dict.len(),
                config.scales.len()
            )));
        }
        for (e, s) in dict.iter().zip(&config.scales) {
            if e.scale.pixels != s.pixels {
                return Err(MiscatError::InvalidParameter(format!(
                    "dictionary scale {:?} does not match configured {:?}",
                    e.scale.pixels, s.pixels
                )));
            }
        }
        let plan = FftPlan::new(config.n, config.d)?;
        let omegas = config.omegas()?;
        let sum_sq = dict.iter().map(|e| e.sum_sq()).collect();
        let bytes = dict.len() * plan.spectrum_len() * std::mem::size_of::<Complex64>();
        let spectra = if bytes <= SPECTRUM_CACHE_BYTES {
            dict.par_iter()
                .map_init(FftBuffers::default, |buf, e| {
                    let mut s = Vec::new();
                    plan.stencil_spectrum(&e.stencil, e.pixels(), &mut s, buf);
                    s
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            dict,
            omegas,
            plan,
            spectra,
            sum_sq,
        })
    }

    pub fn plan(&self) -> &FftPlan {
        &self.plan
    }

    fn check_grid(&self, g: &GridSignal) -> Result<()> {
        if g.d != self.config.d {
            return Err(MiscatError::DimensionMismatch { expected: self.config.d, found: g.d });
        }
        if g.n != self.config.n {
            return Err(MiscatError::InvalidParameter(format!(
                "grid size {} does not match configured {}",
                g.n, self.config.n
            )));
        }
        Ok(())
    }

    /// Full circular correlation of the field spectrum in `ws.field`
    /// with element `i`, written to `ws.real`.
    fn correlate_with(&self, i: usize, ws: &mut Workspace, squared: bool, use_var: bool) {
        let e = &self.dict[i];
        if squared {
            let sq: Vec<f64> = e.stencil.iter().map(|v| v * v).collect();
            self.plan.stencil_spectrum(&sq, e.pixels(), &mut ws.stencil, &mut ws.buf);
        } else if self.spectra.is_empty() {
            self.plan.stencil_spectrum(&e.stencil, e.pixels(), &mut ws.stencil, &mut ws.buf);
        }
        let st: &[Complex64] = if squared || self.spectra.is_empty() {
            &ws.stencil
        } else {
            &self.spectra[i]
        };
        let src: &[Complex64] = if use_var { &ws.var } else { &ws.field };
        self.plan
            .correlate_full(src, st, &mut ws.work, &mut ws.real, &mut ws.buf);
    }

    /// Copies the configured window of `ws.real` for element `i`.
    fn extract(&self, i: usize, real: &[f64]) -> PositionField {
        let (origin, dims) = self.config.window(self.dict[i].pixels());
        let n = self.config.n;
        let k = self.dict[i].pixels();
        let p0: Vec<usize> = origin.iter().zip(k).map(|(t, k)| t + 1 - k).collect();
        let mut values = Vec::with_capacity(dims.iter().product());
        if self.config.d == 1 {
            values.extend_from_slice(&real[p0[0]..p0[0] + dims[0]]);
        } else {
            for r in 0..dims[0] {
                let row = (p0[0] + r) * n + p0[1];
                values.extend_from_slice(&real[row..row + dims[1]]);
            }
        }
        PositionField { origin, dims, values }
    }

    /// Coefficients `n^-d sum Y Phi_i` of element `i` over its window.
    pub fn coefficients(&self, y: &GridSignal, i: usize, ws: &mut Workspace) -> Result<PositionField> {
        self.check_grid(y)?;
        self.plan.forward(&y.values, &mut ws.field, &mut ws.buf);
        self.correlate_with(i, ws, false, false);
        let mut f = self.extract(i, &ws.real);
        let s = (self.config.n as f64).powi(-(self.config.d as i32));
        f.values.iter_mut().for_each(|v| *v *= s);
        Ok(f)
    }

    /// Local variances `n^-2d sum sigma^2 Phi_i^2` over the window.
    pub fn variances(&self, var: &GridSignal, i: usize, ws: &mut Workspace) -> Result<PositionField> {
        self.check_grid(var)?;
        check_positive(var)?;
        let s = (self.config.n as f64).powi(-2 * self.config.d as i32);
        if let Some(c) = constant_value(var) {
            let (origin, dims) = self.config.window(self.dict[i].pixels());
            let len = dims.iter().product();
            return Ok(PositionField { origin, dims, values: vec![c * self.sum_sq[i] * s; len] });
        }
        self.plan.forward(&var.values, &mut ws.var, &mut ws.buf);
        self.correlate_with(i, ws, true, true);
        let mut f = self.extract(i, &ws.real);
        f.values.iter_mut().for_each(|v| *v = (*v * s).max(0.0));
        Ok(f)
    }

    fn prepare(&self, y: &GridSignal, var: &GridSignal) -> Result<Prepared> {
        self.check_grid(y)?;
        self.check_grid(var)?;
        check_positive(var)?;
        let mut ws = Workspace::default();
        self.plan.forward(&y.values, &mut ws.field, &mut ws.buf);
        let homogeneous = constant_value(var);
        if homogeneous.is_none() {
            self.plan.forward(&var.values, &mut ws.var, &mut ws.buf);
        }
        let nonzero = if self.config.prune_zero_boxes {
            Some(SummedArea::new(&y.map(|v| if v != 0.0 { 1.0 } else { 0.0 })))
        } else {
            None
        };
        Ok(Prepared { field: ws.field, var: ws.var, homogeneous, nonzero })
    }

    fn with_prepared<T: Send>(&self, p: &Prepared, f: impl Fn(ScaleStatistics) -> T + Sync + Send) -> Vec<T> {
        (0..self.dict.len())
            .into_par_iter()
            .map_init(Workspace::default, |w, i| {
                w.field.clone_from(&p.field);
                w.var.clone_from(&p.var);
                f(self.scale_statistics(i, w, p.homogeneous, p.nonzero.as_ref()))
            })
            .collect()
    }

    /// All local statistics.
    pub fn local_statistics(&self, y: &GridSignal, var: &GridSignal) -> Result<LocalStatistics> {
        let p = self.prepare(y, var)?;
        let scales = self.with_prepared(&p, |s| s);
        let max = scales
            .iter()
            .flat_map(|s| s.stat.iter().cloned())
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(LocalStatistics { scales, max })
    }

    /// Rejections above `q` without keeping the local fields in memory.
    pub fn scan(&self, y: &GridSignal, var: &GridSignal, q: f64) -> Result<ScanResult> {
        let p = self.prepare(y, var)?;
        let parts = self.with_prepared(&p, |s| {
            let stats = LocalStatistics { max: s.stat.iter().cloned().fold(f64::NEG_INFINITY, f64::max), scales: vec![s] };
            reject_set(&stats, q)
        });
        let mut out = ScanResult { max_statistic: f64::NEG_INFINITY, rejections: Vec::new(), quantile_used: q };
        for r in parts {
            out.max_statistic = out.max_statistic.max(r.max_statistic);
            out.rejections.extend(r.rejections);
        }
        Ok(out)
    }

    fn scale_statistics(
        &self,
        i: usize,
        ws: &mut Workspace,
        homogeneous: Option<f64>,
        nonzero: Option<&SummedArea>,
    ) -> ScaleStatistics {
        let n = self.config.n as f64;
        let d = self.config.d as i32;
        self.correlate_with(i, ws, false, false);
        let mut coef = self.extract(i, &ws.real);
        coef.values.iter_mut().for_each(|v| *v *= n.powi(-d));
        let sigma: Vec<f64> = match homogeneous {
            Some(c) => vec![(c * self.sum_sq[i]).sqrt() * n.powi(-d); coef.values.len()],
            None => {
                self.correlate_with(i, ws, true, true);
                let v = self.extract(i, &ws.real);
                v.values.iter().map(|x| (x.max(0.0)).sqrt() * n.powi(-d)).collect()
            }
        };
        let w = self.omegas[i];
        let k = self.dict[i].pixels().to_vec();
        let stat: Vec<f64> = coef
            .values
            .iter()
            .zip(&sigma)
            .enumerate()
            .map(|(idx, (&c, &s))| {
                if let Some(sa) = nonzero {
                    let t = coef.position(idx);
                    if sa.box_sum(&t, &k) == 0.0 {
                        return f64::NEG_INFINITY;
                    }
                }
                let z = if self.config.two_sided { c.abs() } else { c } / s;
                w * (z - w)
            })
            .collect();
        ScaleStatistics {
            scale_index: i,
            scale: self.dict[i].scale.clone(),
            omega: w,
            origin: coef.origin,
            dims: coef.dims,
            coef: coef.values,
            sigma,
            stat,
        }
    }

    /// Maximum of the data statistic under a homogeneous variance
    /// `sigma2`, without keeping the local fields.
    pub fn max_statistic_homogeneous(&self, y: &GridSignal, sigma2: f64, ws: &mut Workspace) -> Result<f64> {
        self.check_grid(y)?;
        self.plan.forward(&y.values, &mut ws.field, &mut ws.buf);
        let two_sided = self.config.two_sided;
        Ok(self.max_over_scales(ws, |i, c| {
            let z = c / (sigma2 * self.sum_sq[i]).sqrt();
            if two_sided {
                z.abs()
            } else {
                z
            }
        }))
    }

    /// One draw of the Gaussian reference statistic from white noise `zeta`:
    /// `max_i omega_i (|sum zeta Phi_i| / sqrt(sum Phi_i^2) - omega_i)`.
    pub fn reference_statistic(&self, zeta: &[f64], ws: &mut Workspace) -> f64 {
        self.plan.forward(zeta, &mut ws.field, &mut ws.buf);
        self.max_over_scales(ws, |i, c| c.abs() / self.sum_sq[i].sqrt())
    }

    /// Per-scale maxima of the reference statistic.
    pub fn reference_scale_maxima(&self, zeta: &[f64], ws: &mut Workspace) -> Vec<f64> {
        self.plan.forward(zeta, &mut ws.field, &mut ws.buf);
        (0..self.dict.len())
            .map(|i| {
                self.correlate_with(i, ws, false, false);
                let w = self.omegas[i];
                let m = self.window_max(i, &ws.real, |c| c.abs() / self.sum_sq[i].sqrt());
                w * (m - w)
            })
            .collect()
    }

    fn max_over_scales(&self, ws: &mut Workspace, z: impl Fn(usize, f64) -> f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.dict.len() {
            self.correlate_with(i, ws, false, false);
            let w = self.omegas[i];
            let m = self.window_max(i, &ws.real, |c| z(i, c));
            best = best.max(w * (m - w));
        }
        best
    }

    /// Largest `z(raw correlation)` over the configured window.
    fn window_max(&self, i: usize, real: &[f64], z: impl Fn(f64) -> f64) -> f64 {
        let (origin, dims) = self.config.window(self.dict[i].pixels());
        let k = self.dict[i].pixels();
        let n = self.config.n;
        let mut best = f64::NEG_INFINITY;
        if self.config.d == 1 {
            let p = origin[0] + 1 - k[0];
            for &c in &real[p..p + dims[0]] {
                best = best.max(z(c));
            }
        } else {
            let (p0, p1) = (origin[0] + 1 - k[0], origin[1] + 1 - k[1]);
            for r in 0..dims[0] {
                let row = (p0 + r) * n + p1;
                for &c in &real[row..row + dims[1]] {
                    best = best.max(z(c));
                }
            }
        }
        best
    }
}

fn check_positive(var: &GridSignal) -> Result<()> {
    if let Some((index, &value)) = var.values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(MiscatError::NonPositiveVariance { index, value });
    }
    Ok(())
}

fn constant_value(g: &GridSignal) -> Option<f64> {
    let c = g.values[0];
    g.values.iter().all(|&v| v == c).then_some(c)
}

// ----------------------------------------------------------------------
// Statistics containers

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStatistics {
    pub scale_index: usize,
    pub scale: Scale,
    pub omega: f64,
    pub origin: Vec<usize>,
    pub dims: Vec<usize>,
    pub coef: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Penalized statistics; pruned boxes hold `-inf`.
    pub stat: Vec<f64>,
}

impl ScaleStatistics {
    pub fn position(&self, idx: usize) -> Vec<usize> {
        PositionField {
            origin: self.origin.clone(),
            dims: self.dims.clone(),
            values: Vec::new(),
        }
        .position(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalStatistics {
    pub scales: Vec<ScaleStatistics>,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub position: Vec<usize>,
    pub pixels: Vec<usize>,
    pub statistic: f64,
}

impl Rejection {
    /// Pixel index range `[t - k + 1, t]` on each axis.
    pub fn box_ranges(&self) -> Vec<(usize, usize)> {
        self.position
            .iter()
            .zip(&self.pixels)
            .map(|(&t, &k)| (t + 1 - k, t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub max_statistic: f64,
    pub rejections: Vec<Rejection>,
    pub quantile_used: f64,
}

impl ScanResult {
    /// CSV with a `# max_statistic=.. quantile=..` line and columns
    /// `t_row, t_col, k_row, k_col, statistic` (`t_col = 0`, `k_col = 1` in 1-D).
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# max_statistic={:.16e} quantile={:.16e}\nt_row,t_col,k_row,k_col,statistic\n",
            self.max_statistic, self.quantile_used
        );
        for r in &self.rejections {
            let (t1, k1) = if r.position.len() > 1 { (r.position[1], r.pixels[1]) } else { (0, 1) };
            out.push_str(&format!(
                "{},{},{},{},{:.16e}\n",
                r.position[0], t1, r.pixels[0], k1, r.statistic
            ));
        }
        out
    }

    /// Inverse of [`ScanResult::to_csv`] for 2-D results.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| MiscatError::Parse(format!("scan result: {m}"));
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty"))?;
        let mut max_statistic = None;
        let mut quantile_used = None;
        for tok in head.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("max_statistic", v)) => max_statistic = v.parse().ok(),
                Some(("quantile", v)) => quantile_used = v.parse().ok(),
                _ => {}
            }
        }
        let mut rejections = Vec::new();
        for line in lines.skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
            rejections.push(Rejection {
                position: vec![u(f[0])?, u(f[1])?],
                pixels: vec![u(f[2])?, u(f[3])?],
                statistic: f[4].parse().map_err(|_| bad(f[4]))?,
            });
        }
        Ok(Self {
            max_statistic: max_statistic.ok_or_else(|| bad("missing max_statistic"))?,
            rejections,
            quantile_used: quantile_used.ok_or_else(|| bad("missing quantile"))?,
        })
    }
}

pub fn reject_set(stats: &LocalStatistics, q: f64) -> ScanResult {
    let mut rejections = Vec::new();
    for s in &stats.scales {
        for (idx, &v) in s.stat.iter().enumerate() {
            if v > q {
                rejections.push(Rejection {
                    position: s.position(idx),
                    pixels: s.scale.pixels.clone(),
                    statistic: v,
                });
            }
        }
    }
    ScanResult {
        max_statistic: stats.max,
        rejections,
        quantile_used: q,
    }
}

/// Smallest rejected box area covering each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMap {
    pub n: usize,
    pub d: usize,
    pub area: Vec<Option<usize>>,
}

impl SignificanceMap {
    /// Areas as a grid, `-1` for pixels outside every rejected box.
    pub fn to_grid(&self) -> GridSignal {
        GridSignal {
            n: self.n,
            d: self.d,
            values: self
                .area
                .iter()
                .map(|a| a.map(|v| v as f64).unwrap_or(-1.0))
                .collect(),
            pixel_size: None,
        }
    }
}

pub fn significance_map(result: &ScanResult, n: usize) -> SignificanceMap {
    let d = result.rejections.first().map(|r| r.position.len()).unwrap_or(2);
    let mut area: Vec<Option<usize>> = vec![None; n.pow(d as u32)];
    for r in &result.rejections {
        let a: usize = r.pixels.iter().product();
        let ranges = r.box_ranges();
        let mut mark = |idx: usize| {
            area[idx] = Some(area[idx].map_or(a, |v| v.min(a)));
        };
        if d == 1 {
            for i in ranges[0].0..=ranges[0].1 {
                mark(i);
            }
        } else {
            for i0 in ranges[0].0..=ranges[0].1 {
                for i1 in ranges[1].0..=ranges[1].1 {
                    mark(i0 * n + i1);
                }
            }
        }
    }
    SignificanceMap { n, d, area }
}

// ----------------------------------------------------------------------
// Free-function front ends

fn single_scanner(n: usize, d: usize, element: &DictionaryElement) -> Result<Scanner> {
    let cal = CalibrationParams { K: 1.0, C_d: 0.0, gamma: 1.0, d };
    // The window does not depend on calibration; use a scale-free K.
    let cal = CalibrationParams { K: cal.K.max(2.0 * element.scale.h_product()), ..cal };
    let cfg = ScanConfig::new(n, d, vec![element.scale.clone()], cal, 0.1);
    Scanner::new(cfg, vec![element.clone()])
}

pub fn empirical_coefficients(y: &GridSignal, element: &DictionaryElement) -> Result<PositionField> {
    let sc = single_scanner(y.n, y.d, element)?;
    sc.coefficients(y, 0, &mut Workspace::default())
}

/// `sigma_i^2` over all positions.
pub fn local_variances(var: &GridSignal, element: &DictionaryElement) -> Result<PositionField> {
    let sc = single_scanner(var.n, var.d, element)?;
    sc.variances(var, 0, &mut Workspace::default())
}

pub fn scan_statistic(
    y: &GridSignal,
    var: &GridSignal,
    config: &ScanConfig,
    dict: &[DictionaryElement],
) -> Result<(LocalStatistics, f64)> {
    let sc = Scanner::new(config.clone(), dict.to_vec())?;
    let stats = sc.local_statistics(y, var)?;
    let m = stats.max;
    Ok((stats, m))
}

// ----------------------------------------------------------------------
// Box sums and the direct baseline

/// Inclusive prefix sums for O(1) box sums.
pub struct SummedArea {
    n: usize,
    d: usize,
    s: Vec<f64>,
}

impl SummedArea {
    pub fn new(g: &GridSignal) -> Self {
        let n = g.n;
        let w = n + 1;
        if g.d == 1 {
            let mut s = vec![0.0; w];
            for i in 0..n {
                s[i + 1] = s[i] + g.values[i];
            }
            return Self { n, d: 1, s };
        }
        let mut s = vec![0.0; w * w];
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += g.values[i * n + j];
                s[(i + 1) * w + j + 1] = s[i * w + j + 1] + row;
            }
        }
        Self { n, d: 2, s }
    }

    /// Sum over the box with last pixel `t` and extents `k`.
    pub fn box_sum(&self, t: &[usize], k: &[usize]) -> f64 {
        if self.d == 1 {
            return self.s[t[0] + 1] - self.s[t[0] + 1 - k[0]];
        }
        let w = self.n + 1;
        let (a0, b0) = (t[0] + 1 - k[0], t[0] + 1);
        let (a1, b1) = (t[1] + 1 - k[1], t[1] + 1);
        self.s[b0 * w + b1] - self.s[a0 * w + b1] - self.s[b0 * w + a1] + self.s[a0 * w + a1]
    }
}

/// Direct scan over indicator boxes with the classical log-log calibration:
/// `max sqrt(log(3/h)) / log(log(3/h)) (S_box / sqrt(#box) - sqrt(2 log(3/h)))`.
pub fn direct_ds_statistic(y: &GridSignal, scales: &[Scale]) -> Result<f64> {
    let sa = SummedArea::new(y);
    let n = y.n;
    let mut best = f64::NEG_INFINITY;
    for s in scales {
        let h = s.h_product();
        let l = (3.0 / h).ln();
        if !(l > 1.0) {
            return Err(MiscatError::InvalidParameter(format!(
                "scale {:?} too large: 3/h = {:.4} must exceed e",
                s.pixels,
                3.0 / h
            )));
        }
        if s.pixels.iter().any(|&k| k > n || k == 0) {
            return Err(MiscatError::StencilTooLarge { stencil: s.pixels.clone(), n, margin: 0 });
        }
        let pre = l.sqrt() / l.ln();
        let pen = (2.0 * l).sqrt();
        let root = (s.area_px() as f64).sqrt();
        let k = &s.pixels;
        let mut m = f64::NEG_INFINITY;
        if y.d == 1 {
            for t in k[0] - 1..n {
                m = m.max(sa.box_sum(&[t], k));
            }
        } else {
            for t0 in k[0] - 1..n {
                for t1 in k[1] - 1..n {
                    m = m.max(sa.box_sum(&[t0, t1], k));
                }
            }
        }
        best = best.max(pre * (m / root - pen));
    }
    Ok(best)
}

// ----------------------------------------------------------------------
// Closed-form diagnostics

/// Largest homogeneous noise level at which a unit signal on the box is
/// detected with probability at least `1 - alpha`.
///
/// The signal strength `<phi_i, 1_box>` enters through the mean probe
/// value, which is 1 for the indicator.
pub fn detection_threshold_sigma(element: &DictionaryElement, q: f64, omega_i: f64, n: usize) -> f64 {
    let d = element.scale.d() as i32;
    let vol = element.scale.h_product() * (n as f64).powi(d);
    element.probe_l1_norm * vol.sqrt() / element.l2_norm / (2.0 * (q / omega_i + omega_i))
}

pub fn normal_tail(x: f64) -> f64 {
    Normal::standard().sf(x)
}

/// `alpha + (1 - alpha) Psi_bar(sqrt(2 log(1/h*)) - mu/sigma)`.
pub fn oracle_power(mu: f64, sigma_at_tstar: f64, h_star_product: f64, alpha: f64, _q: f64) -> f64 {
    let pen = (2.0 * (1.0 / h_star_product).ln()).sqrt();
    alpha + (1.0 - alpha) * normal_tail(pen - mu / sigma_at_tstar)
}

/// Boxes guaranteed detectable: `<phi_i, f> > 2 (q/omega_i + omega_i) sigma_i`.
///
/// `probes[i]` holds the probe samples of scale `i` (object space) and
/// `scanner` the matching image-space dictionary. Returns `(t, scale index)`.
pub fn large_components(
    f: &GridSignal,
    var: &GridSignal,
    scanner: &Scanner,
    probes: &[DictionaryElement],
    q: f64,
) -> Result<Vec<(Vec<usize>, usize)>> {
    let mut ws = Workspace::default();
    let probe_scanner = Scanner::new(scanner.config.clone(), probes.to_vec())?;
    let mut out = Vec::new();
    for i in 0..scanner.dict.len() {
        let inner = probe_scanner.coefficients(f, i, &mut ws)?;
        let var_i = scanner.variances(var, i, &mut ws)?;
        let w = scanner.omegas[i];
        for (idx, (&c, &v)) in inner.values.iter().zip(&var_i.values).enumerate() {
            if c > 2.0 * (q / w + w) * v.sqrt() {
                out.push((inner.position(idx), i));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ConvolutionKernelSpec;
    use crate::probe::{build_phi_h, ProbeSpec};
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> GridSignal {
        let mut rng = crate::rng::substream(seed, 0);
        GridSignal::new(n, 2, (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    fn random_stencil(k: [usize; 2], seed: u64) -> DictionaryElement {
        let mut rng = crate::rng::substream(seed, 1);
        let st = (0..k[0] * k[1]).map(|_| rng.random::<f64>() - 0.3).collect();
        DictionaryElement::from_stencil(Scale::from_pixels(&k, 64), st, 1.0).unwrap()
    }

    pub(crate) fn brute_coef(y: &GridSignal, e: &DictionaryElement, t: &[usize]) -> f64 {
        let n = y.n;
        let k = e.pixels();
        let mut s = 0.0;
        for a in 0..k[0] {
            for b in 0..k[1] {
                s += y.at(t[0] + 1 - k[0] + a, t[1] + 1 - k[1] + b) * e.stencil[a * k[1] + b];
            }
        }
        s / (n * n) as f64
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn coefficients_match_brute_force() {
        let y = noise(64, 3);
        let e = random_stencil([6, 4], 4);
        let c = empirical_coefficients(&y, &e).unwrap();
        assert_eq!(c.dims, vec![59, 61]);
        let mut rng = crate::rng::substream(5, 0);
        for _ in 0..20 {
            let t = [rng.random_range(5..64), rng.random_range(3..64)];
            let b = brute_coef(&y, &e, &t);
            assert!(rel(c.get(&t).unwrap(), b) < 1e-9);
        }
    }

    #[test]
    fn trivial_coefficients() {
        let e = random_stencil([5, 5], 1);
        let z = empirical_coefficients(&GridSignal::zeros(32, 2), &e).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-15));
        let o = empirical_coefficients(&GridSignal::filled(32, 2, 1.0), &e).unwrap();
        let expect = e.stencil.iter().sum::<f64>() / (32.0 * 32.0);
        assert!(o.values.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn variances_match_brute_force() {
        let n = 64;
        let ramp = GridSignal::new(n, 2, (0..n * n).map(|i| 0.5 + (i % n) as f64 / n as f64 + (i / n) as f64 / 10.0).collect()).unwrap();
        let e = random_stencil([7, 3], 9);
        let v = local_variances(&ramp, &e).unwrap();
        let mut rng = crate::rng::substream(6, 0);
        for _ in 0..20 {
            let t = [rng.random_range(6..64), rng.random_range(2..64)];
            let mut s = 0.0;
            for a in 0..7 {
                for b in 0..3 {
                    s += ramp.at(t[0] - 6 + a, t[1] - 2 + b) * e.stencil[a * 3 + b].powi(2);
                }
            }
            s /= (n as f64).powi(4);
            assert!(rel(v.get(&t).unwrap(), s) < 1e-9);
        }
        let c = local_variances(&GridSignal::filled(n, 2, 2.5), &e).unwrap();
        let base = e.sum_sq() / (n as f64).powi(4);
        assert!(c.values.iter().all(|x| rel(*x, 2.5 * base) < 1e-12));
        let bad = GridSignal::zeros(n, 2);
        assert!(matches!(local_variances(&bad, &e), Err(MiscatError::NonPositiveVariance { .. })));
    }

    fn setup(n: usize, pixels: &[[usize; 2]]) -> (ScanConfig, Vec<DictionaryElement>) {
        let probe = ProbeSpec::isotropic(4, 2);
        let kernel = ConvolutionKernelSpec::new(2, 0.0243 * 512.0 / n as f64, 2).unwrap();
        let scales: Vec<Scale> = pixels.iter().map(|p| Scale::from_pixels(p, n)).collect();
        let dict = scales.iter().map(|s| build_phi_h(&probe, &kernel, s).unwrap()).collect();
        let cal = CalibrationParams { K: 3.94, C_d: 1.0, gamma: 1.0, d: 2 };
        (ScanConfig::new(n, 2, scales, cal, 0.1), dict)
    }

    #[test]
    fn scan_matches_brute_force() {
        let (cfg, dict) = setup(64, &[[4, 4], [6, 10], [12, 8]]);
        let y = noise(64, 11);
        let var = GridSignal::new(64, 2, (0..64 * 64).map(|i| 1.0 + 0.3 * ((i % 7) as f64)).collect()).unwrap();
        let (stats, max) = scan_statistic(&y, &var, &cfg, &dict).unwrap();
        let mut brute_max = f64::NEG_INFINITY;
        for s in &stats.scales {
            let e = &dict[s.scale_index];
            let k = e.pixels();
            for (idx, &v) in s.stat.iter().enumerate() {
                let t = s.position(idx);
                let c = brute_coef(&y, e, &t);
                let mut vv = 0.0;
                for a in 0..k[0] {
                    for b in 0..k[1] {
                        vv += var.at(t[0] + 1 - k[0] + a, t[1] + 1 - k[1] + b) * e.stencil[a * k[1] + b].powi(2);
                    }
                }
                let sig = vv.sqrt() / (64.0 * 64.0);
                let w = s.omega;
                let expect = w * (c / sig - w);
                assert!(rel(v, expect) < 1e-9, "{v} {expect}");
                brute_max = brute_max.max(expect);
            }
        }
        assert!(rel(max, brute_max) < 1e-9);
    }

    #[test]
    fn zero_data_statistic() {
        let (cfg, dict) = setup(32, &[[4, 4], [8, 8]]);
        let (stats, max) = scan_statistic(&GridSignal::zeros(32, 2), &GridSignal::filled(32, 2, 1.0), &cfg, &dict).unwrap();
        let w = cfg.omegas().unwrap();
        let expect = w.iter().map(|x| -x * x).fold(f64::NEG_INFINITY, f64::max);
        assert!((max - expect).abs() < 1e-12);
        assert!(stats.scales[0].stat.iter().all(|v| (v + w[0] * w[0]).abs() < 1e-12));
    }

    #[test]
    fn single_position_scalar_formula() {
        let (cfg, dict) = setup(8, &[[8, 8]]);
        let y = noise(8, 2);
        let (stats, _) = scan_statistic(&y, &GridSignal::filled(8, 2, 4.0), &cfg, &dict).unwrap();
        assert_eq!(stats.scales[0].stat.len(), 1);
        let c = brute_coef(&y, &dict[0], &[7, 7]);
        let sig = 2.0 * dict[0].sum_sq().sqrt() / 64.0;
        let w = stats.scales[0].omega;
        assert!(rel(stats.scales[0].stat[0], w * (c / sig - w)) < 1e-12);
    }

    #[test]
    fn homogeneity_and_equivariance() {
        let (cfg, dict) = setup(32, &[[6, 6]]);
        let y = noise(32, 8);
        let var = GridSignal::new(32, 2, (0..1024).map(|i| 1.0 + (i % 5) as f64).collect()).unwrap();
        let (s1, _) = scan_statistic(&y, &var, &cfg, &dict).unwrap();
        let (s2, _) = scan_statistic(&y.map(|v| 3.0 * v), &var.map(|v| 9.0 * v), &cfg, &dict).unwrap();
        let top = s2.scales[0].coef.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in s1.scales[0].coef.iter().zip(&s2.scales[0].coef) {
            assert!((3.0 * a - b).abs() < 1e-12 * top);
        }
        for (a, b) in s1.scales[0].stat.iter().zip(&s2.scales[0].stat) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejection_filters_and_monotonicity() {
        let (cfg, dict) = setup(32, &[[4, 4], [8, 6]]);
        let y = noise(32, 21).map(|v| v * 40.0);
        let (stats, _) = scan_statistic(&y, &GridSignal::filled(32, 2, 1.0), &cfg, &dict).unwrap();
        assert!(reject_set(&stats, f64::INFINITY).rejections.is_empty());
        let min = stats.scales.iter().flat_map(|s| s.stat.iter().cloned()).fold(f64::INFINITY, f64::min);
        let total: usize = stats.scales.iter().map(|s| s.stat.len()).sum();
        assert_eq!(reject_set(&stats, min - 1.0).rejections.len(), total);
        let q = 2.0;
        let r = reject_set(&stats, q);
        let direct = stats.scales.iter().flat_map(|s| s.stat.iter()).filter(|&&v| v > q).count();
        assert_eq!(r.rejections.len(), direct);
        assert!(r.rejections.iter().all(|x| x.statistic > q));
        let r2 = reject_set(&stats, q + 1.0);
        for x in &r2.rejections {
            assert!(r.rejections.contains(x));
        }
        // Ties do not reject.
        let tie = r.rejections[0].statistic;
        assert!(!reject_set(&stats, tie).rejections.iter().any(|x| x.statistic == tie));
    }

    #[test]
    fn significance_examples() {
        let empty = ScanResult { max_statistic: 0.0, rejections: vec![], quantile_used: 1.0 };
        assert!(significance_map(&empty, 16).area.iter().all(|a| a.is_none()));
        let one = Rejection { position: vec![5, 9], pixels: vec![4, 6], statistic: 3.0 };
        let m = significance_map(&ScanResult { max_statistic: 3.0, rejections: vec![one.clone()], quantile_used: 1.0 }, 16);
        assert_eq!(m.area.iter().filter(|a| **a == Some(24)).count(), 24);
        assert_eq!(m.area.iter().filter(|a| a.is_some()).count(), 24);
        assert_eq!(m.area[2 * 16 + 4], Some(24));
        let big = Rejection { position: vec![10, 12], pixels: vec![10, 10], statistic: 4.0 };
        let m2 = significance_map(&ScanResult { max_statistic: 4.0, rejections: vec![big, one], quantile_used: 1.0 }, 16);
        let mut expect = vec![None; 256];
        for i in 1..=10 {
            for j in 3..=12 {
                expect[i * 16 + j] = Some(100);
            }
        }
        for i in 2..=5 {
            for j in 4..=9 {
                expect[i * 16 + j] = Some(24);
            }
        }
        assert_eq!(m2.area, expect);
        assert_eq!(m2.to_grid().values[0], -1.0);
    }

    #[test]
    fn direct_baseline() {
        let n = 64;
        let scales = vec![Scale::from_pixels(&[4, 4], n), Scale::from_pixels(&[3, 8], n)];
        let z = direct_ds_statistic(&GridSignal::zeros(n, 2), &scales).unwrap();
        let expect = scales
            .iter()
            .map(|s| {
                let l = (3.0 / s.h_product()).ln();
                -l.sqrt() * (2.0 * l).sqrt() / l.ln()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((z - expect).abs() < 1e-12);

        let y = noise(n, 4);
        let v = direct_ds_statistic(&y, &scales).unwrap();
        let mut best = f64::NEG_INFINITY;
        for s in &scales {
            let l = (3.0 / s.h_product()).ln();
            let (k0, k1) = (s.pixels[0], s.pixels[1]);
            for t0 in k0 - 1..n {
                for t1 in k1 - 1..n {
                    let mut sum = 0.0;
                    for a in t0 + 1 - k0..=t0 {
                        for b in t1 + 1 - k1..=t1 {
                            sum += y.at(a, b);
                        }
                    }
                    best = best.max(l.sqrt() / l.ln() * (sum / ((k0 * k1) as f64).sqrt() - (2.0 * l).sqrt()));
                }
            }
        }
        assert!(rel(v, best) < 1e-9);

        let whole = vec![Scale::from_pixels(&[8, 8], 8)];
        let c = direct_ds_statistic(&GridSignal::filled(8, 2, 0.5), &whole).unwrap();
        let l = 3f64.ln();
        assert!((c - l.sqrt() / l.ln() * (0.5 * 8.0 - (2.0 * l).sqrt())).abs() < 1e-12);
        let too_big = vec![Scale::from_pixels(&[8, 8], 8)];
        let _ = too_big;
        assert!(direct_ds_statistic(&GridSignal::zeros(8, 2), &[Scale { h: vec![1.0, 1.5], pixels: vec![8, 8] }]).is_err());
    }

    #[test]
    fn power_formula() {
        let h = 1.0 / 256.0;
        let pen = (2.0 * 256f64.ln()).sqrt();
        assert!((oracle_power(pen, 1.0, h, 0.1, 0.0) - 0.55).abs() < 1e-12);
        assert!((oracle_power(-100.0, 1.0, h, 0.1, 0.0) - 0.1).abs() < 1e-12);
        let p = oracle_power(pen + 3.0, 1.0, h, 0.1, 0.0);
        assert!((p - (0.1 + 0.9 * 0.998_650_101_968_369_9)).abs() < 1e-9);
    }

    #[test]
    fn detection_threshold_formula() {
        let (_, dict) = setup(512, &[[20, 20]]);
        let e = &dict[0];
        let v = detection_threshold_sigma(e, 5.88, 3.0, 512);
        assert!(v > 0.0);
        let mut e2 = e.clone();
        e2.l2_norm *= 2.0;
        assert!((detection_threshold_sigma(&e2, 5.88, 3.0, 512) / v - 0.5).abs() < 1e-14);
        assert!(detection_threshold_sigma(e, 1e12, 3.0, 512) < 1e-9 * v);
        assert!(detection_threshold_sigma(e, 6.5, 3.0, 512) < v);
    }

    #[test]
    fn pruning_skips_empty_boxes() {
        let (mut cfg, dict) = setup(32, &[[4, 4]]);
        cfg.prune_zero_boxes = true;
        let mut y = GridSignal::zeros(32, 2);
        y.values[10 * 32 + 10] = 5.0;
        let (stats, _) = scan_statistic(&y, &GridSignal::filled(32, 2, 1.0), &cfg, &dict).unwrap();
        let finite = stats.scales[0].stat.iter().filter(|v| v.is_finite()).count();
        assert_eq!(finite, 16);
    }

    #[test]
    fn margin_shrinks_window() {
        let (mut cfg, dict) = setup(32, &[[4, 4]]);
        cfg.boundary_margin_px = 3;
        let (stats, _) = scan_statistic(&noise(32, 1), &GridSignal::filled(32, 2, 1.0), &cfg, &dict).unwrap();
        assert_eq!(stats.scales[0].dims, vec![23, 23]);
        assert_eq!(stats.scales[0].origin, vec![6, 6]);
    }

    #[test]
    fn scan_result_csv_round_trip() {
        let r = ScanResult {
            max_statistic: 3.25,
            rejections: vec![Rejection { position: vec![10, 12], pixels: vec![4, 6], statistic: 1.0 / 3.0 }],
            quantile_used: 0.5,
        };
        let csv = r.to_csv();
        let back = ScanResult::from_csv(&csv).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_csv(), csv);
    }

    #[test]
    fn streaming_scan_matches_reject_set() {
        let (cfg, dict) = setup(48, &[[4, 4], [6, 8]]);
        let sc = Scanner::new(cfg, dict).unwrap();
        let y = noise(48, 21);
        let var = GridSignal::filled(48, 2, 1.0);
        let full = reject_set(&sc.local_statistics(&y, &var).unwrap(), -2.0);
        let streamed = sc.scan(&y, &var, -2.0).unwrap();
        assert_eq!(full, streamed);
        assert!(!full.rejections.is_empty());
    }
}
