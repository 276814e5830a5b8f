//! Executable checks of the structural identities behind the scan.

use rand::RngExt;
use rayon::prelude::*;

use crate::error::Result;
use crate::grid::GridSignal;
use crate::kernel::ConvolutionKernelSpec;
use crate::noise::{generate, variance_truth, NoiseSpec};
use crate::probe::{binomial, build_phi_h, probe_partial, DictionaryElement, ProbeSpec, Scale};
use crate::rng::substream;
use crate::scan::{Scanner, Workspace};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub id: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl PropertyReport {
    pub fn new(id: impl Into<String>, value: f64, tolerance: f64, pass: bool, seed: u64) -> Self {
        Self { id: id.into(), pass, value, tolerance, seed }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.10e},{:.10e},{}",
            self.id,
            if self.pass { "pass" } else { "fail" },
            self.value,
            self.tolerance,
            self.seed
        )
    }
}

pub fn reports_to_csv(reports: &[PropertyReport]) -> String {
    let mut out = String::from("id,status,value,tolerance,seed\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// `sum_z (S(z) - S(z - shift))^2` for a stencil on the pixel lattice.
fn shifted_difference(e: &DictionaryElement, shift: &[isize]) -> f64 {
    let k = e.pixels();
    let get = |idx: &[isize]| -> f64 {
        if idx.iter().zip(k).any(|(&i, &kk)| i < 0 || i >= kk as isize) {
            0.0
        } else {
            let mut flat = 0usize;
            for (&i, &kk) in idx.iter().zip(k) {
                flat = flat * kk + i as usize;
            }
            e.stencil[flat]
        }
    };
    let lo: Vec<isize> = shift.iter().map(|&s| s.min(0)).collect();
    let hi: Vec<isize> = shift.iter().zip(k).map(|(&s, &kk)| kk as isize + s.max(0)).collect();
    let mut acc = 0.0;
    let mut idx = lo.clone();
    loop {
        let moved: Vec<isize> = idx.iter().zip(shift).map(|(i, s)| i - s).collect();
        acc += (get(&idx) - get(&moved)).powi(2);
        let mut ax = idx.len();
        loop {
            if ax == 0 {
                return acc;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < hi[ax] {
                break;
            }
            idx[ax] = lo[ax];
        }
    }
}

/// Average Hoelder condition on the unit-box profile:
/// `int |Phi(t - z) - Phi(s - z)|^2 dz <= L |t - s|^(2 gamma) ||Phi||^2`,
/// with shifts on the stencil lattice. `value` is the largest ratio with
/// the given `l`; the empirical constant is `value * l`.
pub fn check_ahc(element: &DictionaryElement, gamma: f64, l: f64, sample_pairs: usize, seed: u64) -> PropertyReport {
    let k = element.pixels();
    let mut rng = substream(seed, 0);
    let norm = element.sum_sq();
    let mut worst: f64 = 0.0;
    for _ in 0..sample_pairs {
        let shift: Vec<isize> = k.iter().map(|&kk| rng.random_range(-(kk as i64) + 1..kk as i64) as isize).collect();
        if shift.iter().all(|&s| s == 0) {
            continue;
        }
        let dist2: f64 = shift.iter().zip(k).map(|(&s, &kk)| (s as f64 / kk as f64).powi(2)).sum();
        let ratio = shifted_difference(element, &shift) / (l * dist2.powf(gamma) * norm);
        worst = worst.max(ratio);
    }
    PropertyReport::new(format!("ahc_gamma{gamma}_L{l}"), worst, 1.0 + 1e-3, worst <= 1.0 + 1e-3, seed)
}

/// Discretization gap of the empirical coefficient.
///
/// Compares `n^-d sum_j Tf(x_j) Phi(x_j)` over the box ending at pixel `t`
/// with the same sum on a grid refined `fine_factor` times; `build` turns a
/// scale into its stencil. `value = n^(d/2) |gap| / ||Phi_i||_2`, checked
/// against `log(n)^-2 loglog(n)^-2`.
pub fn check_bias(
    truth: &dyn Fn(&[f64]) -> f64,
    build: &dyn Fn(&Scale) -> Result<DictionaryElement>,
    scale: &Scale,
    n: usize,
    t: &[usize],
    fine_factor: usize,
) -> Result<PropertyReport> {
    let coarse = build(scale)?;
    let fine_px: Vec<usize> = scale.pixels.iter().map(|k| k * fine_factor).collect();
    let fine_scale = Scale::from_pixels(&fine_px, n * fine_factor);
    let fine = build(&fine_scale)?;
    let inner = |e: &DictionaryElement, m: usize, start: Vec<usize>| -> f64 {
        let k = e.pixels();
        let d = k.len();
        let mut acc = 0.0;
        for (j, s) in e.stencil.iter().enumerate() {
            let mut rem = j;
            let mut x = vec![0.0; d];
            for ax in (0..d).rev() {
                let off = rem % k[ax];
                rem /= k[ax];
                x[ax] = (start[ax] + off) as f64 + 0.5;
                x[ax] /= m as f64;
            }
            acc += truth(&x) * s;
        }
        acc / (m as f64).powi(d as i32)
    };
    let start: Vec<usize> = t.iter().zip(&scale.pixels).map(|(t, k)| t + 1 - k).collect();
    let fine_start: Vec<usize> = start.iter().map(|s| s * fine_factor).collect();
    let gap = inner(&coarse, n, start) - inner(&fine, n * fine_factor, fine_start);
    let d = scale.d() as i32;
    let l2 = coarse.l2_norm * scale.h_product().sqrt();
    let value = (n as f64).powf(d as f64 / 2.0) * gap.abs() / l2;
    let ln = (n as f64).ln();
    let target = 1.0 / (ln * ln * ln.ln().powi(2));
    Ok(PropertyReport::new(format!("bias_n{n}"), value, target, value < target, 0))
}

/// `sum_{|alpha| = j} C(j, k) d^(2k, 2(j-k)) phi` at `x` (2-D) or `d^(2j) phi` (1-D).
fn laplacian_power(probe: &ProbeSpec, j: u32, x: &[f64]) -> f64 {
    if x.len() == 1 {
        return probe_partial(probe, &[2 * j], x);
    }
    (0..=j).map(|k| binomial(j, k) * probe_partial(probe, &[2 * k, 2 * (j - k)], x)).sum()
}

/// Scaling identity `h^(2a) ||Phi_h|| = ||Xi~ + h^2 Xi_res||` on square
/// scales `h = k/n` for every `n` in `grids`, with `Xi~` and `Xi_res`
/// expanded independently from the probe derivatives. `value` is the
/// worst relative mismatch; the second report is the relative distance
/// to `||Xi~||` at the finest `h`.
pub fn check_scaling_identity(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    k: usize,
    grids: &[usize],
) -> Result<(PropertyReport, PropertyReport)> {
    let a = kernel.a;
    let b2 = kernel.b * kernel.b;
    let d = probe.d();
    let nodes: Vec<f64> = (0..k).map(|j| (k as f64 - j as f64 - 0.5) / k as f64).collect();
    let points: Vec<Vec<f64>> = if d == 1 {
        nodes.iter().map(|&x| vec![x]).collect()
    } else {
        nodes.iter().flat_map(|&x0| nodes.iter().map(move |&x1| vec![x0, x1])).collect()
    };
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let sgn = |j: u32| if j % 2 == 0 { 1.0 } else { -1.0 };
    let xi: Vec<f64> = points.iter().map(|x| sgn(a) * b2.powi(a as i32) * laplacian_power(probe, a, x)).collect();
    let xi_norm = rms(&xi);
    let mut worst: f64 = 0.0;
    let mut last_gap = f64::NAN;
    for &n in grids {
        let scale = Scale::from_pixels(&vec![k; d], n);
        let h = k as f64 / n as f64;
        let e = build_phi_h(probe, kernel, &scale)?;
        let lhs = h.powi(2 * a as i32) * e.l2_norm;
        let rhs_vals: Vec<f64> = points
            .iter()
            .zip(&xi)
            .map(|(x, &xv)| {
                let res: f64 = (0..a)
                    .map(|j| {
                        binomial(a, j) * sgn(j) * b2.powi(j as i32) * h.powi(2 * (a - j - 1) as i32)
                            * laplacian_power(probe, j, x)
                    })
                    .sum();
                xv + h * h * res
            })
            .collect();
        let rhs = rms(&rhs_vals);
        worst = worst.max((lhs - rhs).abs() / rhs);
        last_gap = (lhs - xi_norm).abs() / xi_norm;
    }
    Ok((
        PropertyReport::new(format!("scaling_identity_a{a}"), worst, 1e-10, worst < 1e-10, 0),
        PropertyReport::new(format!("scaling_limit_a{a}"), last_gap, 1e-2, last_gap < 1e-2, 0),
    ))
}

/// Empirical family-wise error under `f = truth` with known variance.
///
/// Any rejection counts as an error, which is exact for `truth = 0`.
/// Passes when the empirical rate lies in `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
pub fn check_fwer(
    scanner: &Scanner,
    noise: &NoiseSpec,
    truth: &GridSignal,
    q: f64,
    reps: usize,
    seed: u64,
    band: (f64, f64),
) -> Result<PropertyReport> {
    let var = variance_truth(noise, truth)?;
    let constant = var.values.iter().all(|&v| v == var.values[0]).then_some(var.values[0]);
    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map_init(Workspace::default, |ws, r| -> Result<bool> {
            let y = generate(truth, noise, seed.wrapping_add(r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?;
            let max = match constant {
                Some(c) => scanner.max_statistic_homogeneous(&y, c, ws)?,
                None => scanner.local_statistics(&y, &var)?.max,
            };
            Ok(max > q)
        })
        .collect::<Result<_>>()?;
    let rate = hits.iter().filter(|&&h| h).count() as f64 / reps as f64;
    Ok(PropertyReport::new(
        format!("fwer_{}", noise.name()),
        rate,
        band.1,
        rate >= band.0 && rate <= band.1,
        seed,
    ))
}

/// Normal-approximation band `alpha +- z sqrt(alpha (1 - alpha) / reps)`.
pub fn binomial_band(alpha: f64, reps: usize, z: f64) -> (f64, f64) {
    let half = z * (alpha * (1.0 - alpha) / reps as f64).sqrt();
    ((alpha - half).max(0.0), (alpha + half).min(1.0))
}
