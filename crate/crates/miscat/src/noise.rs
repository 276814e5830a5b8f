//! Synthetic data: noise scenarios, variance fields and phantom images.

use rand::RngExt;
use rand_distr::{Binomial, ChiSquared, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{MiscatError, Result};
use crate::grid::GridSignal;
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    StudentT { nu: f64 },
    /// `Y = Poi(t (Tf + b)) / t - b + N(0, sigma^2)`.
    PoissonGauss { t: f64, b: f64, sigma: f64 },
    /// Raw counts `Y ~ Bin(t, Tf)`.
    BinomialSted { t: u64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MiscatError::InvalidParameter(m));
        match *self {
            NoiseSpec::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad(format!("sigma={sigma}")),
            NoiseSpec::StudentT { nu } if !(nu > 2.0 && nu.is_finite()) => bad(format!("nu={nu} must exceed 2")),
            NoiseSpec::PoissonGauss { t, b, sigma } if !(t >= 1.0 && b >= 0.0 && sigma >= 0.0) => {
                bad(format!("t={t} b={b} sigma={sigma}"))
            }
            NoiseSpec::BinomialSted { t } if t == 0 => bad("t must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// True when the errors lack the exponential moments the scan theory needs.
    pub fn violates_moment_condition(&self) -> bool {
        matches!(self, NoiseSpec::StudentT { .. })
    }

    pub fn name(&self) -> String {
        match *self {
            NoiseSpec::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            NoiseSpec::StudentT { nu } => format!("student_t(nu={nu})"),
            NoiseSpec::PoissonGauss { t, b, sigma } => format!("poisson_gauss(t={t},b={b},sigma={sigma})"),
            NoiseSpec::BinomialSted { t } => format!("binomial(t={t})"),
        }
    }

    /// Parses `gaussian:0.05`, `student_t:3`, `poisson_gauss:1000,0.005,0.01`, `binomial:1000`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = args
            .split(',')
            .filter(|a| !a.is_empty())
            .map(|a| a.trim().parse::<f64>().map_err(|_| MiscatError::Parse(format!("bad number {a}"))))
            .collect::<Result<_>>()?;
        let spec = match (kind, nums.as_slice()) {
            ("gaussian", [s]) => NoiseSpec::Gaussian { sigma: *s },
            ("student_t", [nu]) => NoiseSpec::StudentT { nu: *nu },
            ("poisson_gauss", [t, b, s]) => NoiseSpec::PoissonGauss { t: *t, b: *b, sigma: *s },
            ("binomial", [t]) if t.fract() == 0.0 && *t >= 0.0 => NoiseSpec::BinomialSted { t: *t as u64 },
            _ => return Err(MiscatError::Parse(format!("unknown noise spec {s}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn check_truth(&self, truth: &GridSignal) -> Result<()> {
        self.validate()?;
        match self {
            NoiseSpec::BinomialSted { .. } => {
                if let Some((i, &v)) = truth.values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(MiscatError::OutOfRange { index: i, value: v });
                }
            }
            NoiseSpec::PoissonGauss { b, .. } => {
                if let Some((i, &v)) = truth.values.iter().enumerate().find(|(_, v)| **v + b < 0.0) {
                    return Err(MiscatError::OutOfRange { index: i, value: v });
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn draw(&self, truth: f64, rng: &mut StreamRng) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } => truth + sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseSpec::StudentT { nu } => truth + student_t(nu, rng),
            NoiseSpec::PoissonGauss { t, b, sigma } => {
                let lambda = t * (truth + b);
                let count = if lambda > 0.0 { rng.sample(Poisson::new(lambda).unwrap()) } else { 0.0 };
                count / t - b + sigma * rng.sample::<f64, _>(StandardNormal)
            }
            NoiseSpec::BinomialSted { t } => rng.sample(Binomial::new(t, truth).unwrap()) as f64,
        }
    }
}

/// `Z / sqrt(chi2_nu / nu)`; the chi-square is a sum of squared normals for integer `nu`.
fn student_t(nu: f64, rng: &mut StreamRng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let chi2 = if nu.fract() == 0.0 && nu <= 64.0 {
        (0..nu as usize).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).sum()
    } else {
        rng.sample(ChiSquared::new(nu).unwrap())
    };
    z / (chi2 / nu).sqrt()
}

/// Noisy observation of `truth` (already convolved). Row `r` uses stream `(seed, r)`.
pub fn generate(truth: &GridSignal, spec: &NoiseSpec, seed: u64) -> Result<GridSignal> {
    spec.check_truth(truth)?;
    let row = truth.n;
    let mut values = vec![0.0; truth.len()];
    values
        .par_chunks_mut(row)
        .zip(truth.values.par_chunks(row))
        .enumerate()
        .for_each(|(r, (out, tr))| {
            let mut rng = substream(seed, r as u64);
            for (o, &t) in out.iter_mut().zip(tr) {
                *o = spec.draw(t, &mut rng);
            }
        });
    let mut g = GridSignal::new(truth.n, truth.d, values)?;
    g.pixel_size = truth.pixel_size;
    Ok(g)
}

/// Exact per-pixel variance.
pub fn variance_truth(spec: &NoiseSpec, truth: &GridSignal) -> Result<GridSignal> {
    spec.check_truth(truth)?;
    Ok(truth.map(|v| match *spec {
        NoiseSpec::Gaussian { sigma } => sigma * sigma,
        NoiseSpec::StudentT { nu } => nu / (nu - 2.0),
        NoiseSpec::PoissonGauss { t, b, sigma } => (v + b) / t + sigma * sigma,
        NoiseSpec::BinomialSted { t } => t as f64 * v * (1.0 - v),
    }))
}

/// Point-wise plug-in variance estimate with a half-count clamp.
pub fn variance_mle(y: &GridSignal, spec: &NoiseSpec) -> Result<GridSignal> {
    spec.validate()?;
    match *spec {
        NoiseSpec::BinomialSted { t } => {
            let tf = t as f64;
            let lo = 1.0 / (2.0 * tf);
            Ok(y.map(|v| {
                let p = (v / tf).clamp(lo, 1.0 - lo);
                tf * p * (1.0 - p)
            }))
        }
        NoiseSpec::PoissonGauss { t, b, sigma } => Ok(y.map(|v| {
            let lambda = (v + b).max(b + 1.0 / (2.0 * t));
            lambda / t + sigma * sigma
        })),
        _ => Err(MiscatError::InvalidParameter(format!("no variance estimator for {}", spec.name()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    CirclesSquaresLines,
    Origami,
}

impl PhantomKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "circles_squares_lines" => Ok(PhantomKind::CirclesSquaresLines),
            "origami" => Ok(PhantomKind::Origami),
            _ => Err(MiscatError::Parse(format!("unknown phantom {s}"))),
        }
    }
}

/// Geometry of the circles/squares/line test image in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomLayout {
    /// `(row, col, radius)` of every circle, large ones first.
    pub circles: Vec<(f64, f64, f64)>,
    /// `(row0, col0, side)` of every square.
    pub squares: Vec<(usize, usize, usize)>,
    /// First and last row and the column range of the line.
    pub line_rows: (usize, usize),
    pub line_cols: (usize, usize),
}

impl PhantomLayout {
    pub fn new(n: usize) -> Result<Self> {
        if n < 128 {
            return Err(MiscatError::InvalidParameter(format!("phantom needs n >= 128, got {n}")));
        }
        let s = n as f64 / 512.0;
        let px = |v: f64| (v * s).round() as usize;
        let mut circles = Vec::new();
        for (count, row, radius) in [(3usize, 80.0, 40.0), (6, 185.0, 20.0), (12, 250.0, 10.0)] {
            let pitch = 512.0 / count as f64;
            for i in 0..count {
                circles.push((row * s, (i as f64 + 0.5) * pitch * s, radius * s));
            }
        }
        let side = px(36.0);
        let top = px(300.0);
        let squares = (0..5).map(|i| (top, px(36.0 + 96.0 * i as f64), side)).collect();
        let gap = px(9.0);
        let line_top = top + side + gap;
        Ok(Self {
            circles,
            squares,
            line_rows: (line_top, line_top + px(6.0).max(1) - 1),
            line_cols: (px(36.0), px(476.0)),
        })
    }

    pub fn large_circles(&self) -> &[(f64, f64, f64)] {
        &self.circles[..3]
    }

    /// Pixel `(row, col)` lies inside the circle `c`.
    pub fn in_circle(c: (f64, f64, f64), row: usize, col: usize) -> bool {
        let dy = row as f64 + 0.5 - c.0;
        let dx = col as f64 + 0.5 - c.1;
        dx * dx + dy * dy <= c.2 * c.2
    }
}

/// Deterministic binary test image.
pub fn phantom(kind: PhantomKind, n: usize) -> Result<GridSignal> {
    if n < 128 {
        return Err(MiscatError::InvalidParameter(format!("phantom needs n >= 128, got {n}")));
    }
    let mut v = vec![0.0; n * n];
    match kind {
        PhantomKind::CirclesSquaresLines => {
            let lay = PhantomLayout::new(n)?;
            for r in 0..n {
                for c in 0..n {
                    if lay.circles.iter().any(|&ci| PhantomLayout::in_circle(ci, r, c)) {
                        v[r * n + c] = 1.0;
                    }
                }
            }
            for &(r0, c0, side) in &lay.squares {
                for r in r0..r0 + side {
                    for c in c0..c0 + side {
                        v[r * n + c] = 1.0;
                    }
                }
            }
            for r in lay.line_rows.0..=lay.line_rows.1 {
                for c in lay.line_cols.0..=lay.line_cols.1 {
                    v[r * n + c] = 1.0;
                }
            }
        }
        PhantomKind::Origami => {
            // Pairs of vertical strands, 71 nm apart at 10 nm pixels for n = 600.
            let sep = (7.1 * n as f64 / 600.0).round().max(2.0) as usize;
            let width = (n / 300).max(1);
            let pitch = n / 6;
            let (r0, r1) = (n / 8, n - n / 8);
            for p in 0..5 {
                let left = pitch * (p + 1) - sep / 2;
                for strand in [left, left + sep] {
                    for r in r0..r1 {
                        for c in strand..strand + width {
                            v[r * n + c] = 1.0;
                        }
                    }
                }
            }
        }
    }
    GridSignal::new(n, 2, v)
}
