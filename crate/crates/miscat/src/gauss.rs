//! Monte-Carlo calibration with the Gaussian reference statistic.
//!
//! `S(W) = max_i omega_i (|sum_j zeta_j Phi_i(x_j)| / sqrt(sum_j Phi_i(x_j)^2) - omega_i)`
//! with i.i.d. standard normal `zeta`. Under homogeneous Gaussian noise
//! this is the exact null law of the two-sided data statistic.

use std::fs;
use std::path::Path;

use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::calibration::gumbel_cdf;
use crate::error::{MiscatError, Result};
use crate::probe::DictionaryElement;
use crate::rng::{substream, StreamRng};
use crate::scan::{ScanConfig, Scanner, Workspace};

/// Confidence levels reported by default.
pub const DEFAULT_LEVELS: [f64; 6] = [0.1, 0.5, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub fingerprint: String,
}

impl QuantileTable {
    /// Quantile at `level`, if the table carries it.
    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .map(|i| self.quantiles[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# reps={} seed={} fingerprint={}\nlevel,quantile\n",
            self.reps, self.seed, self.fingerprint
        );
        for (l, q) in self.levels.iter().zip(&self.quantiles) {
            out.push_str(&format!("{l},{q:.16e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MiscatError::Parse("empty table".into()))?;
        let mut reps = None;
        let mut seed = None;
        let mut fingerprint = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            match tok.split_once('=') {
                Some(("reps", v)) => reps = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("fingerprint", v)) => fingerprint = Some(v.to_string()),
                _ => {}
            }
        }
        let (reps, seed, fingerprint) = match (reps, seed, fingerprint) {
            (Some(r), Some(s), Some(f)) => (r, s, f),
            _ => return Err(MiscatError::Parse(format!("bad table header: {header}"))),
        };
        let mut levels = Vec::new();
        let mut quantiles = Vec::new();
        for line in lines.skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (l, q) = line
                .split_once(',')
                .ok_or_else(|| MiscatError::Parse(format!("bad row: {line}")))?;
            levels.push(l.parse().map_err(|_| MiscatError::Parse(format!("bad level {l}")))?);
            quantiles.push(q.parse().map_err(|_| MiscatError::Parse(format!("bad quantile {q}")))?);
        }
        Ok(Self { levels, quantiles, reps, seed, fingerprint })
    }
}

/// Content hash of a scan configuration and its dictionary.
pub fn fingerprint(config: &ScanConfig, dict: &[DictionaryElement]) -> String {
    let mut h = Sha256::new();
    let c = &config.calibration;
    h.update(format!(
        "n={};d={};margin={};two_sided={};prune={};K={:e};C_d={:e};gamma={:e};",
        config.n,
        config.d,
        config.boundary_margin_px,
        config.two_sided,
        config.prune_zero_boxes,
        c.K,
        c.C_d,
        c.gamma
    ));
    for e in dict {
        h.update(format!("{:?};", e.scale.pixels));
        for v in &e.stencil {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

fn fill_normal(rng: &mut StreamRng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// One draw of `S(W)`.
pub fn simulate_sw_draw(scanner: &Scanner, rng: &mut StreamRng) -> f64 {
    let len = scanner.config.n.pow(scanner.config.d as u32);
    let mut zeta = vec![0.0; len];
    fill_normal(rng, &mut zeta);
    scanner.reference_statistic(&zeta, &mut Workspace::default())
}

/// `reps` draws; replication `r` uses stream `(seed, r)`.
pub fn simulate_sw(scanner: &Scanner, reps: usize, seed: u64) -> Vec<f64> {
    let len = scanner.config.n.pow(scanner.config.d as u32);
    (0..reps)
        .into_par_iter()
        .map_init(
            || (Workspace::default(), vec![0.0; len]),
            |(ws, zeta), r| {
                let mut rng = substream(seed, r as u64);
                fill_normal(&mut rng, zeta);
                scanner.reference_statistic(zeta, ws)
            },
        )
        .collect()
}

/// Upper order statistic `x_(ceil(level * N))`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let k = ((level * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

pub fn quantiles_from_samples(samples: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    levels.iter().map(|&l| empirical_quantile(&sorted, l)).collect()
}

pub fn quantile_table(scanner: &Scanner, reps: usize, levels: &[f64], seed: u64) -> Result<QuantileTable> {
    Ok(quantile_table_with_samples(scanner, reps, levels, seed)?.0)
}

pub fn quantile_table_with_samples(
    scanner: &Scanner,
    reps: usize,
    levels: &[f64],
    seed: u64,
) -> Result<(QuantileTable, Vec<f64>)> {
    if reps < 100 {
        return Err(MiscatError::InvalidParameter(format!("reps={reps} < 100")));
    }
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(MiscatError::InvalidParameter("levels must lie in (0, 1)".into()));
    }
    let samples = simulate_sw(scanner, reps, seed);
    let table = QuantileTable {
        levels: levels.to_vec(),
        quantiles: quantiles_from_samples(&samples, levels),
        reps,
        seed,
        fingerprint: fingerprint(&scanner.config, &scanner.dict),
    };
    Ok((table, samples))
}

/// Environment variable naming the quantile cache directory.
pub const CACHE_ENV: &str = "MISCAT_CACHE_DIR";

/// Quantile table from `dir` when a table with the same fingerprint,
/// replication count, seed and levels is stored there; simulated and
/// stored otherwise. The flag reports a cache hit.
pub fn cached_quantile_table(
    scanner: &Scanner,
    reps: usize,
    levels: &[f64],
    seed: u64,
    dir: &Path,
) -> Result<(QuantileTable, bool)> {
    let fp = fingerprint(&scanner.config, &scanner.dict);
    let path = dir.join(format!("{fp}-r{reps}-s{seed}.csv"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(t) = QuantileTable::from_csv(&text) {
            if t.fingerprint == fp && t.reps == reps && t.seed == seed && t.levels == levels {
                return Ok((t, true));
            }
        }
    }
    let t = quantile_table(scanner, reps, levels, seed)?;
    fs::create_dir_all(dir)?;
    fs::write(&path, t.to_csv())?;
    Ok((t, false))
}

/// Kolmogorov distance between the sample ECDF and `gumbel_cdf(., prefactor)`.
pub fn gumbel_compare(samples: &[f64], prefactor: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = gumbel_cdf(s[i], prefactor);
        d = d.max((f - i as f64 / n).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Tightest prefactors `(D_lo, D_hi)` with
/// `gumbel_cdf(x, D_hi) <= ECDF(x) <= gumbel_cdf(x, D_lo)` for `x` between
/// the sample quantiles `(1 - central)/2` and `(1 + central)/2`.
pub fn gumbel_sandwich(samples: &[f64], central: f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let tail = (1.0 - central) / 2.0;
    let first = ((tail * n as f64).ceil() as usize).max(1);
    let last = ((1.0 - tail) * n as f64).floor() as usize;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in first..last.min(n - 1) {
        // ECDF equals i/n on [s[i-1], s[i]).
        let f = i as f64 / n as f64;
        let nl = -f.ln();
        lo = lo.min(nl * s[i - 1].exp());
        hi = hi.max(nl * s[i].exp());
    }
    (lo, hi)
}
