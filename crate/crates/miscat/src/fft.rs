//! Real-input FFTs on `n^d` grids and valid-window cross-correlation.
//!
//! 2-D spectra are stored column-major over the half-spectrum: entry
//! `(u, v)` (u over axis 0, v in `0..=n/2` over axis 1) sits at
//! `v * n + u`, which keeps the axis-0 transforms contiguous.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{MiscatError, Result};

/// Per-thread scratch memory for [`FftPlan`].
#[derive(Default)]
pub struct FftBuffers {
    rows: Vec<Complex64>,
    real: Vec<f64>,
    scratch: Vec<Complex64>,
}

/// FFT plans for one grid shape. Shareable across threads.
#[derive(Clone)]
pub struct FftPlan {
    n: usize,
    d: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FftPlan {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(MiscatError::UnsupportedDimension(d));
        }
        if n < 2 {
            return Err(MiscatError::InvalidParameter(format!("grid size {n} too small")));
        }
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Ok(Self {
            n,
            d,
            r2c: rp.plan_fft_forward(n),
            c2r: rp.plan_fft_inverse(n),
            col_fwd: cp.plan_fft_forward(n),
            col_inv: cp.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn half(&self) -> usize {
        self.n / 2 + 1
    }

    /// Number of complex coefficients in a spectrum.
    pub fn spectrum_len(&self) -> usize {
        match self.d {
            1 => self.half(),
            _ => self.half() * self.n,
        }
    }

    fn ensure(&self, buf: &mut FftBuffers) {
        let h = self.half();
        if buf.rows.len() != h * self.n {
            buf.rows.resize(h * self.n, Complex64::new(0.0, 0.0));
        }
        if buf.real.len() != self.n {
            buf.real.resize(self.n, 0.0);
        }
        let need = self
            .r2c
            .get_scratch_len()
            .max(self.c2r.get_scratch_len())
            .max(self.col_fwd.get_inplace_scratch_len())
            .max(self.col_inv.get_inplace_scratch_len());
        if buf.scratch.len() < need {
            buf.scratch.resize(need, Complex64::new(0.0, 0.0));
        }
    }

    /// Forward transform of a real field (length `n^d`) into `out`.
    pub fn forward(&self, input: &[f64], out: &mut Vec<Complex64>, buf: &mut FftBuffers) {
        let n = self.n;
        let h = self.half();
        assert_eq!(input.len(), n.pow(self.d as u32));
        self.ensure(buf);
        out.resize(self.spectrum_len(), Complex64::new(0.0, 0.0));
        if self.d == 1 {
            buf.real.copy_from_slice(input);
            self.r2c
                .process_with_scratch(&mut buf.real, out, &mut buf.scratch)
                .expect("forward length");
            return;
        }
        for (i0, row) in input.chunks_exact(n).enumerate() {
            buf.real.copy_from_slice(row);
            let dst = &mut buf.rows[i0 * h..(i0 + 1) * h];
            self.r2c
                .process_with_scratch(&mut buf.real, dst, &mut buf.scratch)
                .expect("forward length");
        }
        for i0 in 0..n {
            for v in 0..h {
                out[v * n + i0] = buf.rows[i0 * h + v];
            }
        }
        self.col_fwd.process_with_scratch(out, &mut buf.scratch);
    }

    /// Inverse transform, normalized so that `inverse(forward(x)) == x`.
    /// The spectrum is consumed as workspace.
    pub fn inverse(&self, spec: &mut [Complex64], out: &mut [f64], buf: &mut FftBuffers) {
        let n = self.n;
        let h = self.half();
        assert_eq!(spec.len(), self.spectrum_len());
        assert_eq!(out.len(), n.pow(self.d as u32));
        self.ensure(buf);
        if self.d == 1 {
            spec[0].im = 0.0;
            if n % 2 == 0 {
                spec[h - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(spec, out, &mut buf.scratch)
                .expect("inverse length");
            let s = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= s);
            return;
        }
        self.col_inv.process_with_scratch(spec, &mut buf.scratch);
        for v in 0..h {
            for i0 in 0..n {
                buf.rows[i0 * h + v] = spec[v * n + i0];
            }
        }
        let s = 1.0 / (n * n) as f64;
        for (i0, row) in out.chunks_exact_mut(n).enumerate() {
            let src = &mut buf.rows[i0 * h..(i0 + 1) * h];
            src[0].im = 0.0;
            if n % 2 == 0 {
                src[h - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(src, row, &mut buf.scratch)
                .expect("inverse length");
            row.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Signed integer frequency of spectrum index `u` along a full axis.
    pub fn signed_freq(&self, u: usize) -> i64 {
        if u <= (self.n - 1) / 2 {
            u as i64
        } else {
            u as i64 - self.n as i64
        }
    }

    /// Integer frequency pairs `(m0, m1)` for each spectrum slot.
    pub fn frequencies(&self) -> Vec<[i64; 2]> {
        let n = self.n;
        let h = self.half();
        match self.d {
            1 => (0..h).map(|v| [v as i64, 0]).collect(),
            _ => {
                let mut f = Vec::with_capacity(h * n);
                for v in 0..h {
                    for u in 0..n {
                        f.push([self.signed_freq(u), v as i64]);
                    }
                }
                f
            }
        }
    }

    /// Spectrum of a stencil placed at the grid origin (zero padded).
    pub fn stencil_spectrum(
        &self,
        stencil: &[f64],
        dims: &[usize],
        out: &mut Vec<Complex64>,
        buf: &mut FftBuffers,
    ) {
        let n = self.n;
        let mut padded = vec![0.0; n.pow(self.d as u32)];
        if self.d == 1 {
            padded[..dims[0]].copy_from_slice(stencil);
        } else {
            for (j0, row) in stencil.chunks_exact(dims[1]).enumerate() {
                padded[j0 * n..j0 * n + dims[1]].copy_from_slice(row);
            }
        }
        self.forward(&padded, out, buf);
    }

    /// Circular cross-correlation of a field with a stencil, from their
    /// spectra. The full `n^d` result is left in `real`; offset `p` holds
    /// `sum_m field[p + m] * stencil[m]` (indices mod `n`).
    pub fn correlate_full(
        &self,
        field_spec: &[Complex64],
        stencil_spec: &[Complex64],
        work: &mut Vec<Complex64>,
        real: &mut Vec<f64>,
        buf: &mut FftBuffers,
    ) {
        work.clear();
        work.extend(
            field_spec
                .iter()
                .zip(stencil_spec)
                .map(|(a, b)| a * b.conj()),
        );
        real.resize(self.n.pow(self.d as u32), 0.0);
        self.inverse(work, real, buf);
    }

    /// Valid-window cross-correlation from precomputed spectra.
    ///
    /// Returns `c[p] = sum_m field[p + m] * stencil[m]` for every offset
    /// `p` with the stencil fully inside the grid, laid out row-major
    /// over `(n - k0 + 1) x (n - k1 + 1)`.
    pub fn correlate_spectra(
        &self,
        field_spec: &[Complex64],
        stencil_spec: &[Complex64],
        dims: &[usize],
        work: &mut Vec<Complex64>,
        real: &mut Vec<f64>,
        buf: &mut FftBuffers,
    ) -> Vec<f64> {
        self.correlate_full(field_spec, stencil_spec, work, real, buf);
        let n = self.n;
        if self.d == 1 {
            real[..n - dims[0] + 1].to_vec()
        } else {
            let m0 = n - dims[0] + 1;
            let m1 = n - dims[1] + 1;
            let mut out = Vec::with_capacity(m0 * m1);
            for p0 in 0..m0 {
                out.extend_from_slice(&real[p0 * n..p0 * n + m1]);
            }
            out
        }
    }
}
