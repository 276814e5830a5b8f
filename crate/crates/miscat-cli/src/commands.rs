use std::fs;
use std::path::{Path, PathBuf};

use miscat::gauss::{cached_quantile_table, fingerprint, QuantileTable, CACHE_ENV, DEFAULT_LEVELS};
use miscat::kernel::{convolve, fwhm, kurtosis, marginal_kurtosis, GaussianSymbol, RadialSymbol};
use miscat::noise::{generate, phantom, variance_truth, NoiseSpec};
use miscat::scan::{significance_map, Scanner};
use miscat::studies::{
    boundary_csv, detection_boundary, level_csv, level_study, power_csv, power_study, PowerConfig,
};
use miscat::{GridSignal, MiscatError, Result};

use crate::config::RunConfig;

/// What a command found, for the exit code.
pub enum Outcome {
    Done,
    Rejections(usize),
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.join(name))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| cfg.out.join(".miscat-cache"))
}

/// Table levels: the reference levels plus `1 - alpha`.
fn levels(alpha: f64) -> Vec<f64> {
    let mut l = DEFAULT_LEVELS.to_vec();
    let p = 1.0 - alpha;
    if p > 0.0 && !l.iter().any(|&x| (x - p).abs() < 1e-12) {
        l.push(p);
        l.sort_by(f64::total_cmp);
    }
    l
}

fn quantile_at(table: &QuantileTable, alpha: f64) -> Result<f64> {
    if alpha >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    table
        .quantile(1.0 - alpha)
        .ok_or_else(|| MiscatError::InvalidParameter(format!("quantile table has no level {}", 1.0 - alpha)))
}

fn table_for(cfg: &RunConfig, scanner: &Scanner) -> Result<QuantileTable> {
    let (t, hit) = cached_quantile_table(scanner, cfg.reps, &levels(cfg.alpha), cfg.seed, &cache_dir(cfg))?;
    eprintln!("quantiles: {}", if hit { "cache hit" } else { "simulated" });
    Ok(t)
}

fn meta(cfg: &RunConfig, what: &str) -> Vec<String> {
    vec![
        format!("kind={what}"),
        format!("phantom={:?}", cfg.phantom),
        format!("a={} b={}", cfg.a, cfg.b()),
        format!("noise={}", cfg.noise.name()),
        format!("seed={}", cfg.seed),
    ]
}

pub fn gen_data(cfg: &RunConfig) -> Result<Outcome> {
    cfg.noise.validate()?;
    let truth = phantom(cfg.phantom, cfg.n)?.with_pixel_size(cfg.pixel_size);
    let mut conv = convolve(&cfg.kernel()?, &truth)?;
    if matches!(cfg.noise, NoiseSpec::BinomialSted { .. }) {
        // Roundoff of the FFT leaves values a few ulp outside [0, 1].
        conv = conv.map(|v| if v.abs() < 1e-12 { 0.0 } else if (v - 1.0).abs() < 1e-12 { 1.0 } else { v });
    }
    let data = generate(&conv, &cfg.noise, cfg.seed)?;
    let var = variance_truth(&cfg.noise, &conv)?;
    for (g, name) in [(&truth, "truth"), (&conv, "convolved"), (&data, "data"), (&var, "variance")] {
        let p = out_file(cfg, &format!("{name}.pgrid"))?;
        g.write_pgrid(&p, &meta(cfg, name))?;
        eprintln!("wrote {}", p.display());
    }
    Ok(Outcome::Done)
}

pub fn quantiles(cfg: &RunConfig) -> Result<Outcome> {
    let scanner = cfg.setup(false)?.scanner()?;
    let t = table_for(cfg, &scanner)?;
    let p = cfg.quantiles.clone().map_or_else(|| out_file(cfg, "quantiles.csv"), Ok)?;
    write(&p, &t.to_csv())?;
    for (l, q) in t.levels.iter().zip(&t.quantiles) {
        println!("{l}\t{q:.4}");
    }
    Ok(Outcome::Done)
}

pub fn scan(cfg: &RunConfig) -> Result<Outcome> {
    let scanner = cfg.setup(false)?.scanner()?;
    let qpath = cfg.quantiles.clone().unwrap_or_else(|| cfg.out.join("quantiles.csv"));
    let table = QuantileTable::from_csv(&fs::read_to_string(&qpath)?)?;
    let fp = fingerprint(&scanner.config, &scanner.dict);
    if table.fingerprint != fp {
        return Err(MiscatError::FingerprintMismatch { table: table.fingerprint, config: fp });
    }
    let q = quantile_at(&table, cfg.alpha)?;
    let dpath = cfg.data.clone().unwrap_or_else(|| cfg.out.join("data.pgrid"));
    let (y, _) = GridSignal::read_pgrid(&dpath)?;
    let var = match &cfg.variance {
        Some(p) => GridSignal::read_pgrid(p)?.0,
        None => variance_truth(&cfg.noise, &GridSignal::zeros(y.n, y.d))?,
    };
    let result = scanner.scan(&y, &var, q)?;
    write(&out_file(cfg, "rejections.csv")?, &result.to_csv())?;
    let map = significance_map(&result, y.n).to_grid();
    let p = out_file(cfg, "significance.pgrid")?;
    map.write_pgrid(&p, &[format!("kind=significance alpha={} quantile={q}", cfg.alpha)])?;
    eprintln!("wrote {}", p.display());
    println!("max_statistic={:.4} quantile={q:.4} rejections={}", result.max_statistic, result.rejections.len());
    Ok(Outcome::Rejections(result.rejections.len()))
}

pub fn level(cfg: &RunConfig) -> Result<Outcome> {
    let scanner = cfg.setup(true)?.scanner()?;
    let q = quantile_at(&table_for(cfg, &scanner)?, cfg.alpha)?;
    let rows = level_study(&scanner, q, &cfg.scenarios, cfg.reps, cfg.seed)?;
    let csv = level_csv(&rows);
    write(&out_file(cfg, "level_study.csv")?, &csv)?;
    print!("{csv}");
    Ok(Outcome::Done)
}

pub fn power(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check_grid()?;
    let pc = PowerConfig { alpha: cfg.alpha, seed: cfg.seed, ..PowerConfig::desk(cfg.n, cfg.reps) };
    let csv = power_csv(&power_study(&pc)?);
    write(&out_file(cfg, "power_study.csv")?, &csv)?;
    print!("{csv}");
    Ok(Outcome::Done)
}

pub fn boundary(cfg: &RunConfig) -> Result<Outcome> {
    let setup = cfg.setup(false)?;
    let q = match &cfg.quantiles {
        Some(p) => quantile_at(&QuantileTable::from_csv(&fs::read_to_string(p)?)?, cfg.alpha)?,
        None => quantile_at(&table_for(cfg, &setup.scanner()?)?, cfg.alpha)?,
    };
    let rows = detection_boundary(cfg.n, &setup.kernel, &setup.scales, &setup.calibration, q)?;
    write(&out_file(cfg, "detection_boundary.csv")?, &boundary_csv(&rows))?;
    Ok(Outcome::Done)
}

fn report<S: RadialSymbol>(label: &str, spec: &S, cfg: &RunConfig) -> Result<()> {
    let px = fwhm(spec, cfg.n, 1.0)?;
    println!("kernel={label} n={}", cfg.n);
    println!("fwhm_px={px:.4}");
    println!("fwhm_physical={:.4}", px * cfg.pixel_size);
    println!("kurtosis={:.4}", kurtosis(spec, cfg.n)?);
    println!("marginal_kurtosis={:.4}", marginal_kurtosis(spec, cfg.n)?);
    Ok(())
}

pub fn fwhm_report(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.gaussian_s {
        Some(s) => report(&format!("gaussian(s={s})"), &GaussianSymbol { s, d: 2 }, cfg)?,
        None => report(&format!("a={},b={}", cfg.a, cfg.b()), &cfg.kernel()?, cfg)?,
    }
    Ok(Outcome::Done)
}
