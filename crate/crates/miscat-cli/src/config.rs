//! Flat `key=value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use miscat::calibration::{select_cd, ScaleSystem};
use miscat::kernel::ConvolutionKernelSpec;
use miscat::noise::{NoiseSpec, PhantomKind};
use miscat::probe::{rectangle_scales, square_scales, ProbePreset, ProbeSpec, Scale};
use miscat::studies::{DeconvSetup, REFERENCE_B_512};
use miscat::{MiscatError, Result};

pub const KEYS: &[&str] = &[
    "experiment",
    "n",
    "a",
    "b",
    "probe",
    "beta",
    "shape",
    "k_min",
    "k_max",
    "k_step",
    "c_d",
    "scale_system",
    "alpha",
    "reps",
    "seed",
    "noise",
    "scenarios",
    "phantom",
    "out",
    "data",
    "variance",
    "quantiles",
    "pixel_size",
    "two_sided",
    "margin",
    "gaussian_s",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: String,
    pub n: usize,
    pub a: u32,
    pub b: Option<f64>,
    pub probe: ProbePreset,
    pub beta: Option<u32>,
    pub squares: bool,
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    pub c_d: f64,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub scenarios: Vec<NoiseSpec>,
    pub phantom: PhantomKind,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub variance: Option<PathBuf>,
    pub quantiles: Option<PathBuf>,
    pub pixel_size: f64,
    pub two_sided: Option<bool>,
    pub margin: usize,
    pub gaussian_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "run".into(),
            n: 256,
            a: 2,
            b: None,
            probe: ProbePreset::Correct,
            beta: None,
            squares: false,
            k_min: 4,
            k_max: 30,
            k_step: 2,
            c_d: 1.0,
            alpha: 0.1,
            reps: 2000,
            seed: 1,
            noise: NoiseSpec::Gaussian { sigma: 0.05 },
            scenarios: vec![
                NoiseSpec::Gaussian { sigma: 1.0 },
                NoiseSpec::StudentT { nu: 3.0 },
                NoiseSpec::PoissonGauss { t: 1000.0, b: 0.005, sigma: 0.01 },
            ],
            phantom: PhantomKind::CirclesSquaresLines,
            out: PathBuf::from("."),
            data: None,
            variance: None,
            quantiles: None,
            pixel_size: 10.0,
            two_sided: None,
            margin: 0,
            gaussian_s: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| MiscatError::Parse(format!("{key}={v}: {e}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(MiscatError::Parse(format!("{key}={v}: expected true or false"))),
    }
}

fn preset(v: &str) -> Result<ProbePreset> {
    ProbePreset::all()
        .into_iter()
        .find(|p| p.name() == v)
        .ok_or_else(|| MiscatError::Parse(format!("probe={v}: expected correct, over or under")))
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once('=').ok_or_else(|| MiscatError::Parse(format!("expected key=value, got {l}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

impl RunConfig {
    /// Defaults, then the file, then the overrides.
    pub fn load(file: Option<&Path>, overrides: &[String], full: bool) -> Result<Self> {
        let mut cfg = Self::default();
        if full {
            cfg.n = 512;
            cfg.reps = 10_000;
        }
        if let Some(p) = file {
            for (k, v) in parse_pairs(&std::fs::read_to_string(p)?)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in parse_pairs(&overrides.join("\n"))? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = v.to_string(),
            "n" => self.n = num(key, v)?,
            "a" => self.a = num(key, v)?,
            "b" => self.b = Some(num(key, v)?),
            "probe" => self.probe = preset(v)?,
            "beta" => self.beta = Some(num(key, v)?),
            "shape" => {
                self.squares = match v {
                    "rectangles" => false,
                    "squares" => true,
                    _ => return Err(MiscatError::Parse(format!("shape={v}: expected rectangles or squares"))),
                }
            }
            "k_min" => self.k_min = num(key, v)?,
            "k_max" => self.k_max = num(key, v)?,
            "k_step" => self.k_step = num(key, v)?,
            "c_d" => self.c_d = num(key, v)?,
            "scale_system" => self.c_d = select_cd(ScaleSystem::parse(v)?, 2, 1.0)?,
            "alpha" => self.alpha = num(key, v)?,
            "reps" => self.reps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "noise" => self.noise = NoiseSpec::parse(v)?,
            "scenarios" => {
                self.scenarios = v.split(';').filter(|s| !s.trim().is_empty()).map(|s| NoiseSpec::parse(s.trim())).collect::<Result<_>>()?
            }
            "phantom" => self.phantom = PhantomKind::parse(v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = Some(PathBuf::from(v)),
            "variance" => self.variance = Some(PathBuf::from(v)),
            "quantiles" => self.quantiles = Some(PathBuf::from(v)),
            "pixel_size" => self.pixel_size = num(key, v)?,
            "two_sided" => self.two_sided = Some(flag(key, v)?),
            "margin" => self.margin = num(key, v)?,
            "gaussian_s" => self.gaussian_s = Some(num(key, v)?),
            _ => return Err(MiscatError::Parse(format!("unknown key {key}; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Kernel width, by default held fixed in pixels.
    pub fn b(&self) -> f64 {
        self.b.unwrap_or(REFERENCE_B_512 * 512.0 / self.n as f64)
    }

    pub fn kernel(&self) -> Result<ConvolutionKernelSpec> {
        ConvolutionKernelSpec::new(self.a, self.b(), 2)
    }

    pub fn check_grid(&self) -> Result<()> {
        if !(self.n.is_power_of_two() && (64..=2048).contains(&self.n)) {
            return Err(MiscatError::InvalidParameter(format!("n={} must be a power of two in 64..=2048", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MiscatError::InvalidParameter(format!("alpha={} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn scales(&self) -> Result<Vec<Scale>> {
        if self.k_step == 0 || self.k_min == 0 || self.k_min > self.k_max {
            return Err(MiscatError::InvalidParameter(format!(
                "empty scale list: k_min={} k_max={} k_step={}",
                self.k_min, self.k_max, self.k_step
            )));
        }
        let s = if self.squares {
            square_scales(self.k_min, self.k_max, self.k_step, self.n, 2)
        } else {
            rectangle_scales(self.k_min, self.k_max, self.k_step, self.n)
        };
        if s.is_empty() {
            return Err(MiscatError::InvalidParameter("empty scale list".into()));
        }
        Ok(s)
    }

    /// Deconvolution setup. `beta` overrides the probe preset; with
    /// `beta < 2a` the stencils are built relaxed and `K` uses `beta = 2a`.
    pub fn setup(&self, default_two_sided: bool) -> Result<DeconvSetup> {
        self.check_grid()?;
        let kernel = self.kernel()?;
        let mut s = DeconvSetup::deconvolution(self.n, kernel, self.probe, self.scales()?, self.c_d)?;
        if let Some(beta) = self.beta {
            let floor = ProbePreset::Correct.spec(self.a, 2);
            let probe = ProbeSpec::isotropic(beta, 2);
            let k_probe = if beta < 2 * self.a { floor.clone() } else { probe.clone() };
            let (delta, big_delta) = miscat::studies::exponents_of(&s.scales, self.n)?;
            s.calibration.K = miscat::probe::deconv_gumbel_K(&k_probe, &kernel, delta, big_delta)?;
            s.relaxed = beta < 2 * self.a;
            s.probe = probe;
        }
        s.boundary_margin_px = self.margin;
        s.two_sided = self.two_sided.unwrap_or(default_two_sided);
        Ok(s)
    }
}
