//! Tensor polynomial probes and the transformed deconvolution dictionary.
//!
//! A probe is `phi(x) = prod_l g_{beta_l}(x_l)` with
//! `g_beta(x) = x^(beta+1) (1-x)^(beta+1)` on `(0, 1)`. For the kernel
//! `k_{a,b}` the image-space element at scale `h` is
//! `Phi_h = (1 - sum_l (b/h_l)^2 d_l^2)^a phi`, expanded into
//! products of one-dimensional derivatives.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{MiscatError, Result};
use crate::kernel::ConvolutionKernelSpec;

/// Resolution per axis of the reference grid used for limit functions.
pub const REFERENCE_RESOLUTION: usize = 256;

/// Resolution per axis for the separable norms entering the Gumbel constant.
pub const GUMBEL_RESOLUTION: usize = 4096;

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

// ----------------------------------------------------------------------
// One-dimensional factors

/// Polynomial by monomial coefficients, `c[i]` multiplies `x^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub c: Vec<f64>,
}

impl Poly {
    /// `x^(beta+1) (1-x)^(beta+1)`.
    pub fn probe_factor(beta: u32) -> Self {
        let p = beta + 1;
        let mut c = vec![0.0; (2 * p + 1) as usize];
        for i in 0..=p {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            c[(p + i) as usize] = sign * binomial(p, i);
        }
        Self { c }
    }

    pub fn derivative(&self, order: u32) -> Self {
        let mut c = self.c.clone();
        for _ in 0..order {
            if c.len() <= 1 {
                return Self { c: vec![0.0] };
            }
            c = c.iter().enumerate().skip(1).map(|(i, v)| v * i as f64).collect();
        }
        Self { c }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, v| acc * x + v)
    }
}

/// Per-axis smoothness exponents.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProbeSpec {
    pub beta: Vec<u32>,
}

/// Named probe configurations for the `a = 2` simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbePreset {
    /// `beta = 2a`
    Correct,
    /// `beta = 10`
    Over,
    /// `beta = 1`
    Under,
}

impl ProbePreset {
    pub fn spec(self, a: u32, d: usize) -> ProbeSpec {
        let beta = match self {
            ProbePreset::Correct => 2 * a,
            ProbePreset::Over => 10,
            ProbePreset::Under => 1,
        };
        ProbeSpec::isotropic(beta, d)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbePreset::Correct => "correct",
            ProbePreset::Over => "over",
            ProbePreset::Under => "under",
        }
    }

    pub fn all() -> [ProbePreset; 3] {
        [ProbePreset::Correct, ProbePreset::Over, ProbePreset::Under]
    }
}

impl ProbeSpec {
    pub fn isotropic(beta: u32, d: usize) -> Self {
        Self { beta: vec![beta; d] }
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }

    fn factors(&self) -> Vec<Poly> {
        self.beta.iter().map(|&b| Poly::probe_factor(b)).collect()
    }

    fn require(&self, order: u32) -> Result<()> {
        for (axis, &beta) in self.beta.iter().enumerate() {
            if beta < order {
                return Err(MiscatError::InsufficientSmoothness {
                    axis,
                    beta,
                    required: order,
                });
            }
        }
        Ok(())
    }
}

fn inside(x: &[f64]) -> bool {
    x.iter().all(|&v| (0.0..=1.0).contains(&v))
}

pub fn probe_eval(spec: &ProbeSpec, x: &[f64]) -> f64 {
    probe_partial(spec, &vec![0; spec.d()], x)
}

/// Mixed partial derivative of the probe, zero outside `[0, 1]^d`.
pub fn probe_partial(spec: &ProbeSpec, orders: &[u32], x: &[f64]) -> f64 {
    assert_eq!(orders.len(), spec.d());
    assert_eq!(x.len(), spec.d());
    if !inside(x) {
        return 0.0;
    }
    spec.factors()
        .iter()
        .zip(orders)
        .zip(x)
        .map(|((p, &o), &xv)| p.derivative(o).eval(xv))
        .product()
}

// ----------------------------------------------------------------------
// Scales and dictionary elements

/// Box extents `h` (unit coordinates) and the matching pixel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    pub h: Vec<f64>,
    pub pixels: Vec<usize>,
}

impl Scale {
    pub fn from_pixels(pixels: &[usize], n: usize) -> Self {
        Self {
            h: pixels.iter().map(|&k| k as f64 / n as f64).collect(),
            pixels: pixels.to_vec(),
        }
    }

    /// `h_1 * ... * h_d`.
    pub fn h_product(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn area_px(&self) -> usize {
        self.pixels.iter().product()
    }

    pub fn d(&self) -> usize {
        self.pixels.len()
    }
}

/// All rectangles `k0 x k1` with both sides in `k_min..=k_max` by `step`.
pub fn rectangle_scales(k_min: usize, k_max: usize, step: usize, n: usize) -> Vec<Scale> {
    let sides: Vec<usize> = (k_min..=k_max).step_by(step.max(1)).collect();
    let mut out = Vec::with_capacity(sides.len() * sides.len());
    for &k0 in &sides {
        for &k1 in &sides {
            out.push(Scale::from_pixels(&[k0, k1], n));
        }
    }
    out
}

/// Squares only.
pub fn square_scales(k_min: usize, k_max: usize, step: usize, n: usize, d: usize) -> Vec<Scale> {
    (k_min..=k_max)
        .step_by(step.max(1))
        .map(|k| Scale::from_pixels(&vec![k; d], n))
        .collect()
}

/// Evaluated image-space stencil for one scale.
///
/// `stencil` is row-major over `pixels`; entry `j` belongs to the pixel
/// with offset `j` inside the box `[t - h, t]` and holds
/// `Phi_h((t - x_j) / h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryElement {
    pub scale: Scale,
    pub stencil: Vec<f64>,
    pub l2_norm: f64,
    pub probe_l1_norm: f64,
}

impl DictionaryElement {
    pub fn from_stencil(scale: Scale, stencil: Vec<f64>, probe_l1_norm: f64) -> Result<Self> {
        if stencil.len() != scale.area_px() {
            return Err(MiscatError::InvalidParameter(format!(
                "stencil length {} does not match scale {:?}",
                stencil.len(),
                scale.pixels
            )));
        }
        if stencil.iter().any(|v| !v.is_finite()) {
            return Err(MiscatError::InvalidParameter("non-finite stencil value".into()));
        }
        let l2_norm = (stencil.iter().map(|v| v * v).sum::<f64>() / stencil.len() as f64).sqrt();
        if !(l2_norm > 0.0) {
            return Err(MiscatError::InvalidParameter("stencil has zero norm".into()));
        }
        Ok(Self {
            scale,
            stencil,
            l2_norm,
            probe_l1_norm,
        })
    }

    /// Box indicator, the probe of the direct problem.
    pub fn indicator(scale: Scale) -> Self {
        let len = scale.area_px();
        Self::from_stencil(scale, vec![1.0; len], 1.0).expect("indicator stencil")
    }

    pub fn pixels(&self) -> &[usize] {
        &self.scale.pixels
    }

    /// `sum_j Phi(x_j)^2` over the stencil pixels.
    pub fn sum_sq(&self) -> f64 {
        self.stencil.iter().map(|v| v * v).sum()
    }
}

/// Stencil-grid samples `(k - j - 1/2) / k`, `j = 0..k`.
fn stencil_nodes(k: usize) -> Vec<f64> {
    (0..k).map(|j| (k as f64 - j as f64 - 0.5) / k as f64).collect()
}

/// Per-axis table `table[l][r][j] = g_l^(r)(node_j)`.
fn axis_tables(probe: &ProbeSpec, nodes: &[Vec<f64>], max_order: u32) -> Vec<Vec<Vec<f64>>> {
    probe
        .factors()
        .iter()
        .zip(nodes)
        .map(|(p, xs)| {
            (0..=max_order)
                .map(|r| {
                    let q = p.derivative(r);
                    xs.iter().map(|&x| q.eval(x)).collect()
                })
                .collect()
        })
        .collect()
}

/// Terms `(coefficient, per-axis derivative orders)` of
/// `(1 - sum_l c_l^2 d_l^2)^a` for `d` in {1, 2}.
fn operator_terms(a: u32, c: &[f64]) -> Vec<(f64, Vec<u32>)> {
    let mut terms = Vec::new();
    for j in 0..=a {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let cj = sign * binomial(a, j);
        if c.len() == 1 {
            terms.push((cj * c[0].powi(2 * j as i32), vec![2 * j]));
        } else {
            for k in 0..=j {
                let coef = cj
                    * binomial(j, k)
                    * c[0].powi(2 * k as i32)
                    * c[1].powi(2 * (j - k) as i32);
                terms.push((coef, vec![2 * k, 2 * (j - k)]));
            }
        }
    }
    terms
}

fn tensor_sum(
    terms: &[(f64, Vec<u32>)],
    tables: &[Vec<Vec<f64>>],
    dims: &[usize],
) -> Vec<f64> {
    let len: usize = dims.iter().product();
    let mut out = vec![0.0; len];
    for (coef, orders) in terms {
        if dims.len() == 1 {
            for (o, v) in out.iter_mut().zip(&tables[0][orders[0] as usize]) {
                *o += coef * v;
            }
        } else {
            let ax0 = &tables[0][orders[0] as usize];
            let ax1 = &tables[1][orders[1] as usize];
            for (j0, a0) in ax0.iter().enumerate() {
                let row = &mut out[j0 * dims[1]..(j0 + 1) * dims[1]];
                let s = coef * a0;
                for (o, a1) in row.iter_mut().zip(ax1) {
                    *o += s * a1;
                }
            }
        }
    }
    out
}

fn check_dims(probe: &ProbeSpec, kernel: &ConvolutionKernelSpec, scale: &Scale) -> Result<()> {
    let d = probe.d();
    if d == 0 || d > 2 {
        return Err(MiscatError::UnsupportedDimension(d));
    }
    if kernel.d != d {
        return Err(MiscatError::DimensionMismatch { expected: d, found: kernel.d });
    }
    if scale.d() != d {
        return Err(MiscatError::DimensionMismatch { expected: d, found: scale.d() });
    }
    Ok(())
}

fn probe_samples(probe: &ProbeSpec, dims: &[usize]) -> Vec<f64> {
    let nodes: Vec<Vec<f64>> = dims.iter().map(|&k| stencil_nodes(k)).collect();
    let tables = axis_tables(probe, &nodes, 0);
    tensor_sum(&[(1.0, vec![0; dims.len()])], &tables, dims)
}

/// `Phi_h` stencil; requires `beta_l >= 2a` on every axis.
pub fn build_phi_h(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    scale: &Scale,
) -> Result<DictionaryElement> {
    probe.require(2 * kernel.a)?;
    build_phi_h_relaxed(probe, kernel, scale)
}

/// Same expansion as [`build_phi_h`] without the smoothness requirement.
///
/// For `beta < 2a` the derivatives of the probe do not vanish on the box
/// boundary, so the result is not an exact preimage of the probe.
pub fn build_phi_h_relaxed(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    scale: &Scale,
) -> Result<DictionaryElement> {
    check_dims(probe, kernel, scale)?;
    let dims = &scale.pixels;
    let nodes: Vec<Vec<f64>> = dims.iter().map(|&k| stencil_nodes(k)).collect();
    let tables = axis_tables(probe, &nodes, 2 * kernel.a);
    let c: Vec<f64> = scale.h.iter().map(|h| kernel.b / h).collect();
    let a = if kernel.a == 0 { 0 } else { kernel.a };
    let stencil = tensor_sum(&operator_terms(a, &c), &tables, dims);
    let samples = probe_samples(probe, dims);
    let l1 = samples.iter().map(|v| v.abs()).sum::<f64>() / samples.len() as f64;
    DictionaryElement::from_stencil(scale.clone(), stencil, l1)
}

/// Independent construction of `Phi_h` by Fourier division.
///
/// The probe is sampled on a grid refined `oversample` times per stencil
/// pixel inside a periodic domain of twice the box length, multiplied by
/// `(1 + sum_l (b/h_l)^2 xi_l^2)^a` in frequency, transformed back and
/// read off at the stencil pixel centres. Even `oversample` is raised to
/// the next odd value so the pixel centres lie on the fine grid.
pub fn build_phi_h_fourier_oracle(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    scale: &Scale,
    oversample: usize,
) -> Result<DictionaryElement> {
    check_dims(probe, kernel, scale)?;
    if oversample < 4 {
        return Err(MiscatError::InvalidParameter(format!("oversample {oversample} < 4")));
    }
    let os = if oversample % 2 == 0 { oversample + 1 } else { oversample };
    let d = probe.d();
    let dims = &scale.pixels;
    let fine: Vec<usize> = dims.iter().map(|k| k * os).collect();
    let full: Vec<usize> = fine.iter().map(|m| 2 * m).collect();
    let factors = probe.factors();
    let axis_vals: Vec<Vec<f64>> = (0..d)
        .map(|l| {
            (0..full[l])
                .map(|i| {
                    if i < fine[l] {
                        factors[l].eval((i as f64 + 0.5) / fine[l] as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let n1 = if d == 2 { full[1] } else { 1 };
    let mut data: Vec<Complex64> = Vec::with_capacity(full[0] * n1);
    for i0 in 0..full[0] {
        for i1 in 0..n1 {
            let v = if d == 2 { axis_vals[0][i0] * axis_vals[1][i1] } else { axis_vals[0][i0] };
            data.push(Complex64::new(v, 0.0));
        }
    }
    // Domain length 2 per axis: xi = 2 pi m / 2.
    let xi = |m: usize, len: usize| -> f64 {
        let s = if m <= len / 2 { m as f64 } else { m as f64 - len as f64 };
        std::f64::consts::PI * s
    };
    let c: Vec<f64> = scale.h.iter().map(|h| kernel.b / h).collect();
    let mut planner = FftPlanner::<f64>::new();
    fft_nd(&mut planner, &mut data, full[0], n1, false);
    for i0 in 0..full[0] {
        for i1 in 0..n1 {
            let mut q = (c[0] * xi(i0, full[0])).powi(2);
            if d == 2 {
                q += (c[1] * xi(i1, full[1])).powi(2);
            }
            data[i0 * n1 + i1] *= (1.0 + q).powi(kernel.a as i32);
        }
    }
    fft_nd(&mut planner, &mut data, full[0], n1, true);
    let norm = (full[0] * n1) as f64;
    // Pixel j of the stencil holds the value at (k - j - 1/2)/k.
    let pick = |j: usize, k: usize| (k - 1 - j) * os + (os - 1) / 2;
    let mut stencil = Vec::with_capacity(scale.area_px());
    if d == 1 {
        for j in 0..dims[0] {
            stencil.push(data[pick(j, dims[0])].re / norm);
        }
    } else {
        for j0 in 0..dims[0] {
            for j1 in 0..dims[1] {
                stencil.push(data[pick(j0, dims[0]) * n1 + pick(j1, dims[1])].re / norm);
            }
        }
    }
    let samples = probe_samples(probe, dims);
    let l1 = samples.iter().map(|v| v.abs()).sum::<f64>() / samples.len() as f64;
    DictionaryElement::from_stencil(scale.clone(), stencil, l1)
}

fn fft_nd(planner: &mut FftPlanner<f64>, data: &mut [Complex64], n0: usize, n1: usize, inverse: bool) {
    let plan = |p: &mut FftPlanner<f64>, len: usize| -> Arc<dyn rustfft::Fft<f64>> {
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    };
    if n1 > 1 {
        plan(planner, n1).process(data);
    }
    let f0 = plan(planner, n0);
    let mut col = vec![Complex64::new(0.0, 0.0); n0];
    for i1 in 0..n1 {
        for i0 in 0..n0 {
            col[i0] = data[i0 * n1 + i1];
        }
        f0.process(&mut col);
        for i0 in 0..n0 {
            data[i0 * n1 + i1] = col[i0];
        }
    }
}

// ----------------------------------------------------------------------
// Limit function and Gumbel constant

/// Reference stencil of `sum_k C(a,k) d^(2k, 2(a-k)) phi` shifted by
/// `extra` derivative orders, on a `res^d` midpoint grid.
fn leading_operator(probe: &ProbeSpec, a: u32, extra: &[u32], res: usize) -> Vec<f64> {
    let d = probe.d();
    let dims = vec![res; d];
    let nodes: Vec<Vec<f64>> = dims.iter().map(|&k| stencil_nodes(k)).collect();
    let tables = axis_tables(probe, &nodes, 2 * a + 1);
    let terms: Vec<(f64, Vec<u32>)> = if d == 1 {
        vec![(1.0, vec![2 * a + extra[0]])]
    } else {
        (0..=a)
            .map(|k| (binomial(a, k), vec![2 * k + extra[0], 2 * (a - k) + extra[1]]))
            .collect()
    };
    tensor_sum(&terms, &tables, &dims)
}

fn quad_norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

/// Limit `Xi~ = (-1)^a b^(2a) sum_k C(a,k) d^(2k, 2(a-k)) phi` of
/// `h^(2a) Phi_h` for square scales, on the reference grid.
pub fn xi_limit(probe: &ProbeSpec, kernel: &ConvolutionKernelSpec) -> Result<(Vec<f64>, f64)> {
    xi_limit_on(probe, kernel, REFERENCE_RESOLUTION)
}

pub fn xi_limit_on(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    res: usize,
) -> Result<(Vec<f64>, f64)> {
    probe.require(2 * kernel.a)?;
    if kernel.d != probe.d() {
        return Err(MiscatError::DimensionMismatch { expected: probe.d(), found: kernel.d });
    }
    let sign = if kernel.a % 2 == 0 { 1.0 } else { -1.0 };
    let scale = sign * kernel.b.powi(2 * kernel.a as i32);
    let v: Vec<f64> = leading_operator(probe, kernel.a, &vec![0; probe.d()], res)
        .into_iter()
        .map(|x| x * scale)
        .collect();
    let norm = quad_norm_sq(&v).sqrt();
    Ok((v, norm))
}

/// Gumbel constant `K` for the square-scale deconvolution scan in `d = 2`.
///
/// `K = log(Delta/delta) (2 pi)^(-3/2) sqrt(G) / ||Xi~_1||^2` with `G` the
/// Gram determinant of the gradient components `phi_(1,0)`, `phi_(0,1)`
/// and `Xi~_1` the limit function for `b = 1`; the value does not depend
/// on `b`.
#[allow(non_snake_case)]
pub fn deconv_gumbel_K(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    delta: f64,
    big_delta: f64,
) -> Result<f64> {
    deconv_gumbel_K_on(probe, kernel, delta, big_delta, GUMBEL_RESOLUTION)
}

/// One-dimensional midpoint Gram matrix `G[r][s] = mean_j g^(r)(x_j) g^(s)(x_j)`.
fn axis_gram(factor: &Poly, max_order: u32, res: usize) -> Vec<Vec<f64>> {
    let xs = stencil_nodes(res);
    let vals: Vec<Vec<f64>> = (0..=max_order)
        .map(|r| {
            let q = factor.derivative(r);
            xs.iter().map(|&x| q.eval(x)).collect()
        })
        .collect();
    let m = res as f64;
    vals.iter()
        .map(|a| vals.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / m).collect())
        .collect()
}

/// Midpoint inner product of two separable sums on `[0, 1]^2`.
fn separable_inner(
    gram: &[Vec<Vec<f64>>],
    u: &[(f64, Vec<u32>)],
    v: &[(f64, Vec<u32>)],
) -> f64 {
    let mut s = 0.0;
    for (cu, ou) in u {
        for (cv, ov) in v {
            s += cu * cv * gram[0][ou[0] as usize][ov[0] as usize] * gram[1][ou[1] as usize][ov[1] as usize];
        }
    }
    s
}

#[allow(non_snake_case)]
pub fn deconv_gumbel_K_on(
    probe: &ProbeSpec,
    kernel: &ConvolutionKernelSpec,
    delta: f64,
    big_delta: f64,
    res: usize,
) -> Result<f64> {
    if !(delta > 0.0 && delta < big_delta && big_delta <= 1.0) {
        return Err(MiscatError::InvalidParameter(format!(
            "need 0 < delta < Delta <= 1, got {delta}, {big_delta}"
        )));
    }
    if probe.d() != 2 || kernel.d != 2 {
        return Err(MiscatError::UnsupportedDimension(probe.d()));
    }
    probe.require(2 * kernel.a)?;
    let a = kernel.a;
    let gram: Vec<Vec<Vec<f64>>> = probe
        .factors()
        .iter()
        .map(|f| axis_gram(f, 2 * a + 1, res))
        .collect();
    let terms = |extra: [u32; 2]| -> Vec<(f64, Vec<u32>)> {
        (0..=a)
            .map(|k| (binomial(a, k), vec![2 * k + extra[0], 2 * (a - k) + extra[1]]))
            .collect()
    };
    let (p10, p01, xi) = (terms([1, 0]), terms([0, 1]), terms([0, 0]));
    let n10 = separable_inner(&gram, &p10, &p10);
    let n01 = separable_inner(&gram, &p01, &p01);
    let cross = separable_inner(&gram, &p10, &p01);
    let gram_det = n10 * n01 - cross * cross;
    let xi_sq = separable_inner(&gram, &xi, &xi);
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok((big_delta / delta).ln() * two_pi.powf(-1.5) * gram_det.sqrt() / xi_sq)
}
