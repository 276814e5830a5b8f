//! Regular-grid fields and the PGRID text format.
//!
//! PGRID layout: a header line `PGRID d n pixel_size`, optional lines
//! starting with `#` carrying metadata, then `n^d` whitespace-separated
//! values in row-major order. Values are written with 17 significant
//! digits so a read after a write is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{MiscatError, Result};

/// Field of real values on an `n^d` grid, `d` in {1, 2}.
///
/// For `d = 2` the value at `(i0, i1)` sits at `values[i0 * n + i1]`;
/// axis 0 is the image row.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
    pub pixel_size: Option<f64>,
}

impl GridSignal {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(MiscatError::UnsupportedDimension(d));
        }
        let len = n.pow(d as u32);
        if values.len() != len {
            return Err(MiscatError::InvalidParameter(format!(
                "expected {len} values for n={n}, d={d}, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MiscatError::InvalidParameter(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            n,
            d,
            values,
            pixel_size: None,
        })
    }

    pub fn filled(n: usize, d: usize, value: f64) -> Self {
        Self {
            n,
            d,
            values: vec![value; n.pow(d as u32)],
            pixel_size: None,
        }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self::filled(n, d, 0.0)
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Self {
        self.pixel_size = Some(pixel_size);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a 2-D index.
    pub fn at(&self, i0: usize, i1: usize) -> f64 {
        self.values[i0 * self.n + i1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| f(v)).collect(),
            pixel_size: self.pixel_size,
        }
    }

    // ------------------------------------------------------------------
    // PGRID

    pub fn to_pgrid(&self, metadata: &[String]) -> String {
        let mut out = String::with_capacity(self.values.len() * 25 + 64);
        let px = match self.pixel_size {
            Some(p) => format!("{p:.16e}"),
            None => "-".to_string(),
        };
        writeln!(out, "PGRID {} {} {}", self.d, self.n, px).unwrap();
        for line in metadata {
            writeln!(out, "# {line}").unwrap();
        }
        let row = if self.d == 2 { self.n } else { self.values.len().max(1) };
        for chunk in self.values.chunks(row) {
            let mut first = true;
            for v in chunk {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses PGRID text, returning the field and its metadata lines.
    pub fn from_pgrid(text: &str) -> Result<(Self, Vec<String>)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| MiscatError::Parse("empty PGRID input".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "PGRID" {
            return Err(MiscatError::Parse(format!("bad PGRID header: {header}")));
        }
        let d: usize = parts[1]
            .parse()
            .map_err(|_| MiscatError::Parse(format!("bad dimension {}", parts[1])))?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| MiscatError::Parse(format!("bad size {}", parts[2])))?;
        let pixel_size = if parts[3] == "-" {
            None
        } else {
            Some(
                parts[3]
                    .parse::<f64>()
                    .map_err(|_| MiscatError::Parse(format!("bad pixel size {}", parts[3])))?,
            )
        };
        let mut metadata = Vec::new();
        let mut values = Vec::with_capacity(n.pow(d as u32));
        for line in lines {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('#') {
                metadata.push(rest.trim().to_string());
                continue;
            }
            for tok in t.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| MiscatError::Parse(format!("bad value {tok}")))?,
                );
            }
        }
        let mut g = GridSignal::new(n, d, values)?;
        g.pixel_size = pixel_size;
        Ok((g, metadata))
    }

    pub fn write_pgrid(&self, path: &Path, metadata: &[String]) -> Result<()> {
        fs::write(path, self.to_pgrid(metadata))?;
        Ok(())
    }

    pub fn read_pgrid(path: &Path) -> Result<(Self, Vec<String>)> {
        Self::from_pgrid(&fs::read_to_string(path)?)
    }

    /// 8-bit binary PGM, linearly scaled from min to max.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        if self.d != 2 {
            return Err(MiscatError::UnsupportedDimension(self.d));
        }
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.n, self.n).into_bytes();
        out.extend(
            self.values
                .iter()
                .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8),
        );
        Ok(out)
    }
}
