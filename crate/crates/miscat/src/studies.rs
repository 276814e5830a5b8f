//! Simulation studies: preset setups, level, power, detection boundary and
//! support soundness on the phantom.

use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::calibration::{scale_exponents, select_cd, CalibrationParams, ScaleSystem};
use crate::error::{MiscatError, Result};
use crate::gauss::quantile_table;
use crate::grid::GridSignal;
use crate::kernel::ConvolutionKernelSpec;
use crate::noise::{NoiseSpec, PhantomLayout};
use crate::probe::{
    build_phi_h, build_phi_h_relaxed, deconv_gumbel_K, rectangle_scales, DictionaryElement,
    ProbePreset, ProbeSpec, Scale,
};
use crate::properties::check_fwer;
use crate::rng::substream;
use crate::scan::{detection_threshold_sigma, oracle_power, ScanConfig, Scanner, SummedArea, Workspace};

/// Confidence levels and the corrected-probe quantile row of the reference table.
pub const REFERENCE_LEVELS: [f64; 6] = [0.1, 0.5, 0.8, 0.9, 0.95, 0.99];
pub const REFERENCE_QUANTILES: [f64; 6] = [3.3420, 4.4006, 5.3194, 5.8828, 6.4722, 7.6442];
/// Kernel width of the reference setup at `n = 512`.
pub const REFERENCE_B_512: f64 = 0.0243;

/// Deconvolution scan: kernel, probe, scales and calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSetup {
    pub n: usize,
    pub kernel: ConvolutionKernelSpec,
    pub probe: ProbeSpec,
    /// Build stencils without the `beta >= 2a` requirement.
    pub relaxed: bool,
    pub scales: Vec<Scale>,
    pub calibration: CalibrationParams,
    pub boundary_margin_px: usize,
    pub two_sided: bool,
}

/// Exponents `(delta, Delta)` spanned by the pixel sides of `scales`.
pub fn exponents_of(scales: &[Scale], n: usize) -> Result<(f64, f64)> {
    let sides = scales.iter().flat_map(|s| s.pixels.iter().copied());
    let (lo, hi) = sides.fold((usize::MAX, 0), |(lo, hi), k| (lo.min(k), hi.max(k)));
    if scales.is_empty() || lo == hi {
        return Err(MiscatError::InvalidParameter("scale range is degenerate".into()));
    }
    Ok(scale_exponents(lo as f64 / n as f64, hi as f64 / n as f64, n))
}

impl DeconvSetup {
    /// Reference setup: `a = 2`, `beta = 4`, all rectangles with sides
    /// `4, 6, ..., 30` px, `C_d = 1`, `gamma = 1`. The kernel is held fixed in
    /// pixel units, `b = 0.0243 * 512 / n`.
    pub fn reference(n: usize) -> Result<Self> {
        let kernel = ConvolutionKernelSpec::new(2, REFERENCE_B_512 * 512.0 / n as f64, 2)?;
        Self::deconvolution(n, kernel, ProbePreset::Correct, rectangle_scales(4, 30, 2, n), 1.0)
    }

    /// Deconvolution setup with `K` from the probe and the scale range.
    pub fn deconvolution(
        n: usize,
        kernel: ConvolutionKernelSpec,
        preset: ProbePreset,
        scales: Vec<Scale>,
        c_d: f64,
    ) -> Result<Self> {
        let probe = preset.spec(kernel.a, 2);
        let (delta, big_delta) = exponents_of(&scales, n)?;
        // K depends on the probe through derivatives only up to order 2a + 1.
        let k_probe = if preset == ProbePreset::Under { ProbePreset::Correct.spec(kernel.a, 2) } else { probe.clone() };
        #[allow(non_snake_case)]
        let K = deconv_gumbel_K(&k_probe, &kernel, delta, big_delta)?;
        Ok(Self {
            n,
            kernel,
            probe,
            relaxed: preset == ProbePreset::Under,
            scales,
            calibration: CalibrationParams { K, C_d: c_d, gamma: 1.0, d: 2 },
            boundary_margin_px: 0,
            two_sided: false,
        })
    }

    pub fn dictionary(&self) -> Result<Vec<DictionaryElement>> {
        self.scales
            .par_iter()
            .map(|s| {
                if self.relaxed {
                    build_phi_h_relaxed(&self.probe, &self.kernel, s)
                } else {
                    build_phi_h(&self.probe, &self.kernel, s)
                }
            })
            .collect()
    }

    pub fn config(&self) -> ScanConfig {
        let mut c = ScanConfig::new(self.n, 2, self.scales.clone(), self.calibration, 0.1);
        c.boundary_margin_px = self.boundary_margin_px;
        c.two_sided = self.two_sided;
        c
    }

    pub fn scanner(&self) -> Result<Scanner> {
        Scanner::new(self.config(), self.dictionary()?)
    }
}

// ----------------------------------------------------------------------
// Level

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub scenario: String,
    pub fwer: f64,
    pub reps: usize,
    pub moment_violation: bool,
}

/// Fraction of pure-noise runs with at least one rejection, per scenario.
pub fn level_study(scanner: &Scanner, q: f64, scenarios: &[NoiseSpec], reps: usize, seed: u64) -> Result<Vec<LevelRow>> {
    let zero = GridSignal::zeros(scanner.config.n, scanner.config.d);
    scenarios
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let r = check_fwer(scanner, spec, &zero, q, reps, seed.wrapping_add(1_000_003 * j as u64), (0.0, 1.0))?;
            Ok(LevelRow { scenario: spec.name(), fwer: r.value, reps, moment_violation: spec.violates_moment_condition() })
        })
        .collect()
}

pub fn level_csv(rows: &[LevelRow]) -> String {
    let mut out = String::from("scenario,fwer,reps,moment_violation\n");
    for r in rows {
        out.push_str(&format!("\"{}\",{},{},{}\n", r.scenario, r.fwer, r.reps, r.moment_violation));
    }
    out
}

// ----------------------------------------------------------------------
// Power

/// Block-signal power comparison on the direct problem with box indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub n: usize,
    /// Side of the true square box in pixels.
    pub k_star: usize,
    /// Square sides of the multiscale test.
    pub multiscale: Vec<usize>,
    /// Standardized signal `mu / sigma(t*)` per sweep point.
    pub snrs: Vec<f64>,
    pub alpha: f64,
    pub reps: usize,
    pub quantile_reps: usize,
    pub seed: u64,
}

impl PowerConfig {
    /// Sweep `penalty + {-1, 0, 1, 2, 3}` at a 16 px box.
    pub fn desk(n: usize, reps: usize) -> Self {
        let k_star = 16;
        let pen = penalty(k_star, n, 2);
        Self {
            n,
            k_star,
            multiscale: (4..=32).step_by(4).collect(),
            snrs: (-1..=3).map(|j| pen + j as f64).collect(),
            alpha: 0.1,
            reps,
            quantile_reps: reps,
            seed: 7,
        }
    }
}

/// `sqrt(2 log(1/h*))` for a square box of side `k` px.
pub fn penalty(k: usize, n: usize, d: usize) -> f64 {
    let h = (k as f64 / n as f64).powi(d as i32);
    (2.0 * (1.0 / h).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub snr: f64,
    pub predicted: f64,
    pub single: f64,
    pub multi: f64,
}

pub fn power_csv(rows: &[PowerRow]) -> String {
    let mut out = String::from("snr,predicted,single_scale,multiscale\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.snr, r.predicted, r.single, r.multi));
    }
    out
}

/// Indicator scanners for the oracle (single true scale) and the
/// multiscale test; both use the two-sided statistic, whose null law is
/// exactly that of the Gaussian reference.
pub fn power_scanners(cfg: &PowerConfig) -> Result<(Scanner, Scanner)> {
    let n = cfg.n;
    let make = |scales: Vec<Scale>, cal: CalibrationParams| -> Result<Scanner> {
        let dict = scales.iter().cloned().map(DictionaryElement::indicator).collect();
        let mut c = ScanConfig::new(n, 2, scales, cal, cfg.alpha);
        c.two_sided = true;
        Scanner::new(c, dict)
    };
    let single = make(
        vec![Scale::from_pixels(&[cfg.k_star, cfg.k_star], n)],
        CalibrationParams { K: 1.0, C_d: select_cd(ScaleSystem::SingleScale, 2, 0.5)?, gamma: 0.5, d: 2 },
    )?;
    let scales: Vec<Scale> = cfg.multiscale.iter().map(|&k| Scale::from_pixels(&[k, k], n)).collect();
    let multi = make(scales, CalibrationParams { K: 1.0, C_d: select_cd(ScaleSystem::DenseFull, 2, 0.5)?, gamma: 0.5, d: 2 })?;
    Ok((single, multi))
}

/// Empirical power of the single-scale and multiscale tests against the
/// oracle prediction, with unit Gaussian noise and `f = (snr/k) 1_box`.
pub fn power_study(cfg: &PowerConfig) -> Result<Vec<PowerRow>> {
    let (single, multi) = power_scanners(cfg)?;
    let level = [1.0 - cfg.alpha];
    let q1 = quantile_table(&single, cfg.quantile_reps, &level, cfg.seed)?.quantiles[0];
    let qm = quantile_table(&multi, cfg.quantile_reps, &level, cfg.seed.wrapping_add(1))?.quantiles[0];
    let n = cfg.n;
    let k = cfg.k_star;
    let c0 = n / 2 - k / 2;
    let h_star = (k as f64 / n as f64).powi(2);
    cfg.snrs
        .iter()
        .enumerate()
        .map(|(j, &snr)| {
            let amp = snr / k as f64;
            let hits: Vec<(bool, bool)> = (0..cfg.reps)
                .into_par_iter()
                .map_init(
                    || (Workspace::default(), vec![0.0; n * n]),
                    |(ws, buf), r| {
                        let mut rng = substream(cfg.seed ^ 0x5eed_0000_0000 ^ ((j as u64) << 32), r as u64);
                        for (idx, v) in buf.iter_mut().enumerate() {
                            let (row, col) = (idx / n, idx % n);
                            let inside = (c0..c0 + k).contains(&row) && (c0..c0 + k).contains(&col);
                            *v = rng.sample::<f64, _>(StandardNormal) + if inside { amp } else { 0.0 };
                        }
                        let y = GridSignal::new(n, 2, buf.clone()).expect("finite data");
                        let s1 = single.max_statistic_homogeneous(&y, 1.0, ws).expect("grid matches");
                        let sm = multi.max_statistic_homogeneous(&y, 1.0, ws).expect("grid matches");
                        (s1 > q1, sm > qm)
                    },
                )
                .collect();
            let m = cfg.reps as f64;
            Ok(PowerRow {
                snr,
                predicted: oracle_power(snr, 1.0, h_star, cfg.alpha, q1),
                single: hits.iter().filter(|h| h.0).count() as f64 / m,
                multi: hits.iter().filter(|h| h.1).count() as f64 / m,
            })
        })
        .collect()
}

// ----------------------------------------------------------------------
// Detection boundary

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRow {
    pub preset: &'static str,
    pub pixels: Vec<usize>,
    pub sigma_max: f64,
}

/// Largest noise level with guaranteed detection, per probe preset and scale.
pub fn detection_boundary(
    n: usize,
    kernel: &ConvolutionKernelSpec,
    scales: &[Scale],
    calibration: &CalibrationParams,
    q: f64,
) -> Result<Vec<BoundaryRow>> {
    let mut rows = Vec::new();
    for preset in ProbePreset::all() {
        let probe = preset.spec(kernel.a, 2);
        for s in scales {
            let e = if preset == ProbePreset::Under {
                build_phi_h_relaxed(&probe, kernel, s)?
            } else {
                build_phi_h(&probe, kernel, s)?
            };
            let w = crate::calibration::omega(calibration, s.h_product())?;
            rows.push(BoundaryRow {
                preset: preset.name(),
                pixels: s.pixels.clone(),
                sigma_max: detection_threshold_sigma(&e, q, w, n),
            });
        }
    }
    Ok(rows)
}

pub fn boundary_csv(rows: &[BoundaryRow]) -> String {
    let mut out = String::from("preset,k0,k1,sigma_max\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.preset, r.pixels[0], r.pixels[1], r.sigma_max));
    }
    out
}

// ----------------------------------------------------------------------
// Support soundness

#[derive(Debug, Clone, PartialEq)]
pub struct SupportOutcome {
    pub rejections: usize,
    /// Rejected boxes that miss the support of the object.
    pub false_boxes: usize,
    /// Per large circle: hit by at least one rejected box.
    pub circle_hits: Vec<bool>,
}

impl SupportOutcome {
    pub fn sound(&self) -> bool {
        self.false_boxes == 0
    }
}

/// Scans `y` with homogeneous variance `sigma2` and classifies every
/// rejected box against the support of `object` and the large circles of
/// `layout`, without materializing the local statistics.
pub fn support_check(
    scanner: &Scanner,
    y: &GridSignal,
    sigma2: f64,
    q: f64,
    object: &GridSignal,
    layout: &PhantomLayout,
    ws: &mut Workspace,
) -> Result<SupportOutcome> {
    let n = object.n;
    let support = SummedArea::new(&object.map(|v| if v != 0.0 { 1.0 } else { 0.0 }));
    let circles: Vec<SummedArea> = layout
        .large_circles()
        .iter()
        .map(|&c| {
            let mut m = GridSignal::zeros(n, 2);
            for r in 0..n {
                for col in 0..n {
                    if PhantomLayout::in_circle(c, r, col) {
                        m.values[r * n + col] = 1.0;
                    }
                }
            }
            SummedArea::new(&m)
        })
        .collect();
    let mut out = SupportOutcome { rejections: 0, false_boxes: 0, circle_hits: vec![false; circles.len()] };
    let scale = (n as f64).powi(-2);
    for i in 0..scanner.dict.len() {
        let coef = scanner.coefficients(y, i, ws)?;
        let sigma = (sigma2 * scanner.dict[i].sum_sq()).sqrt() * scale;
        let w = scanner.omegas[i];
        let k = scanner.dict[i].pixels();
        for (idx, &c) in coef.values.iter().enumerate() {
            let z = if scanner.config.two_sided { c.abs() } else { c } / sigma;
            if w * (z - w) <= q {
                continue;
            }
            let t = coef.position(idx);
            out.rejections += 1;
            if support.box_sum(&t, k) == 0.0 {
                out.false_boxes += 1;
            }
            for (hit, sa) in out.circle_hits.iter_mut().zip(&circles) {
                if !*hit && sa.box_sum(&t, k) > 0.0 {
                    *hit = true;
                }
            }
        }
    }
    Ok(out)
}

/// Noisy observation of the convolved phantom, for support studies.
pub fn noisy_observation(convolved: &GridSignal, sigma: f64, seed: u64) -> Result<GridSignal> {
    crate::noise::generate(convolved, &NoiseSpec::Gaussian { sigma }, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::convolve;
    use crate::probe::square_scales;
    use crate::noise::{phantom, PhantomKind};

    #[test]
    fn reference_setup_shape() {
        let s = DeconvSetup::reference(512).unwrap();
        assert_eq!(s.scales.len(), 196);
        assert!((s.calibration.K - 3.94).abs() < 0.01);
        assert_eq!(s.kernel.b, 0.0243);
        let small = DeconvSetup::reference(256).unwrap();
        assert!((small.kernel.b - 0.0486).abs() < 1e-15);
        assert!(small.config().validate().is_ok());
    }

    #[test]
    fn exponents_degenerate() {
        let one = vec![Scale::from_pixels(&[8, 8], 64)];
        assert!(exponents_of(&one, 64).is_err());
        let (d, dd) = exponents_of(&square_scales(4, 16, 4, 256, 2), 256).unwrap();
        assert!((d - 0.5).abs() < 1e-12 && (dd - 0.75).abs() < 1e-12);
    }

    #[test]
    fn boundary_orderings() {
        let n = 512;
        let kernel = ConvolutionKernelSpec::new(2, 0.0243, 2).unwrap();
        let scales: Vec<Scale> = (4..=30).step_by(2).map(|k| Scale::from_pixels(&[k, k], n)).collect();
        let cal = CalibrationParams { K: 3.94, C_d: 1.0, gamma: 1.0, d: 2 };
        let rows = detection_boundary(n, &kernel, &scales, &cal, 5.88).unwrap();
        let m = scales.len();
        let (c, o, u) = (&rows[..m], &rows[m..2 * m], &rows[2 * m..]);
        assert_eq!((c[0].preset, o[0].preset, u[0].preset), ("correct", "over", "under"));
        for j in 0..m {
            assert!(c[j].sigma_max > o[j].sigma_max, "scale {j}");
        }
        assert!(u[0].sigma_max > c[0].sigma_max);
        assert!(c[m - 1].sigma_max > c[0].sigma_max);
        let higher = detection_boundary(n, &kernel, &scales, &cal, 7.0).unwrap();
        assert!(higher.iter().zip(&rows).all(|(h, r)| h.sigma_max < r.sigma_max));
        assert!(boundary_csv(&rows).lines().count() == 3 * m + 1);
    }

    #[test]
    fn power_null_and_strong() {
        let mut cfg = PowerConfig::desk(128, 400);
        cfg.k_star = 8;
        cfg.multiscale = vec![4, 8, 12];
        let pen = penalty(8, 128, 2);
        cfg.snrs = vec![0.0, pen + 3.0];
        let rows = power_study(&cfg).unwrap();
        assert!((rows[0].single - 0.1).abs() < 0.06, "{}", rows[0].single);
        assert!(rows[1].single >= 0.95 && rows[1].multi >= 0.9);
        assert!((rows[1].predicted - (0.1 + 0.9 * 0.998_650_101_968_369_9)).abs() < 1e-9);
        assert_eq!(power_csv(&rows).lines().count(), 3);
    }

    #[test]
    fn level_always_reject() {
        let cfg = PowerConfig::desk(128, 100);
        let (single, _) = power_scanners(&PowerConfig { k_star: 8, multiscale: vec![4, 8, 12], ..cfg }).unwrap();
        let rows = level_study(&single, f64::NEG_INFINITY, &[NoiseSpec::Gaussian { sigma: 1.0 }], 20, 1).unwrap();
        assert_eq!(rows[0].fwer, 1.0);
        let rows = level_study(&single, f64::INFINITY, &[NoiseSpec::StudentT { nu: 3.0 }], 20, 1).unwrap();
        assert_eq!(rows[0].fwer, 0.0);
        assert!(rows[0].moment_violation);
        assert!(level_csv(&rows).contains("student_t"));
    }

    #[test]
    fn support_noiseless() {
        let n = 128;
        let kernel = ConvolutionKernelSpec::new(2, 0.0243, 2).unwrap();
        let f = phantom(PhantomKind::CirclesSquaresLines, n).unwrap();
        let g = convolve(&kernel, &f).unwrap();
        let setup =
            DeconvSetup::deconvolution(n, kernel, ProbePreset::Correct, square_scales(8, 24, 4, n, 2), 1.0).unwrap();
        let sc = setup.scanner().unwrap();
        let lay = PhantomLayout::new(n).unwrap();
        let out = support_check(&sc, &g, 0.02f64.powi(2), 0.0, &f, &lay, &mut Workspace::default()).unwrap();
        assert!(out.rejections > 0);
        assert!(out.circle_hits.iter().all(|&h| h));
        assert!(out.sound(), "{} false of {}", out.false_boxes, out.rejections);
    }
}
