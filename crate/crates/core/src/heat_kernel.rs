//! Periodic heat kernel on `D = [-π, π)` and the heat semigroup on uniform
//! grids.
//!
//! The kernel is evaluated from its cosine series
//!
//! ```text
//!     G(t, x) = a₀ + Σ_{k≥1} a₁ e^{-k² t} cos(k x)
//! ```
//!
//! under one of two normalizations: [`Normalization::Paper`] with
//! `a₀ = (2π)^{-1/2}`, `a₁ = (2/π)^{1/2}` (so `|G(t,·)|_{L¹} = √(2π)`), and
//! [`Normalization::Probabilist`] with `a₀ = 1/(2π)`, `a₁ = 1/π`, the
//! mass-one kernel whose convolution is the heat flow. Everything that
//! evolves fields uses the mass-one convention.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest time at which the series is evaluated. Below this the
/// truncation order grows past ~10⁴ terms and cancellation erodes accuracy.
pub const MIN_KERNEL_TIME: f64 = 1e-6;

/// `1.1 × max_{t ∈ [1e-4, 1]} G_prob(t, 0) · t^{1/2}`, the empirical constant
/// in `sup_x ∫ G(t, x-y) v(y) dy ≤ C t^{-1/2} |v|_{L¹}`.
/// Recomputed by [`calibrate_smoothing_constant`].
pub const SMOOTHING_CONSTANT: f64 = 0.310_336_370_802_438_53;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `|G|_{L¹} = √(2π)`.
    Paper,
    /// Unit mass.
    Probabilist,
}

impl Normalization {
    fn constant_term(self) -> f64 {
        match self {
            Normalization::Paper => 1.0 / TAU.sqrt(),
            Normalization::Probabilist => 1.0 / TAU,
        }
    }

    fn mode_coefficient(self) -> f64 {
        match self {
            Normalization::Paper => (2.0 / PI).sqrt(),
            Normalization::Probabilist => 1.0 / PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub normalization: Normalization,
    pub truncation_tol: f64,
}

impl KernelSpec {
    pub fn new(normalization: Normalization, truncation_tol: f64) -> Result<Self> {
        if !(truncation_tol > 0.0 && truncation_tol.is_finite()) {
            return Err(Error::domain(format!(
                "truncation tolerance must be positive, got {truncation_tol}"
            )));
        }
        Ok(Self {
            normalization,
            truncation_tol,
        })
    }

    pub fn paper() -> Self {
        Self {
            normalization: Normalization::Paper,
            truncation_tol: 1e-14,
        }
    }

    pub fn probabilist() -> Self {
        Self {
            normalization: Normalization::Probabilist,
            truncation_tol: 1e-14,
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::probabilist()
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("kernel time must be positive, got {t}")));
    }
    if t < MIN_KERNEL_TIME {
        return Err(Error::domain(format!(
            "kernel time {t} is below the supported minimum {MIN_KERNEL_TIME}"
        )));
    }
    Ok(())
}

/// Upper bound on `∫_K^∞ e^{-x² t} dx`.
fn tail_bound(k: usize, t: f64) -> f64 {
    let k = k as f64;
    (-k * k * t).exp() / (2.0 * k * t)
}

/// Smallest `K ≥ 1` with `e^{-K²t} / (2Kt) ≤ tol`.
///
/// Since `Σ_{k>K} e^{-k²t} ≤ ∫_K^∞ e^{-x²t} dx`, truncating the series after
/// `K` terms leaves an error of at most `a₁ · tol`.
pub fn truncation_order(t: f64, tol: f64) -> Result<usize> {
    if !(t > 0.0 && t.is_finite()) || !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::domain(format!(
            "truncation order needs t > 0 and tol > 0, got t={t}, tol={tol}"
        )));
    }
    if tail_bound(1, t) <= tol {
        return Ok(1);
    }
    let mut hi = 2usize;
    while tail_bound(hi, t) > tol {
        hi *= 2;
    }
    let mut lo = hi / 2;
    // invariant: tail(lo) > tol >= tail(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail_bound(mid, t) <= tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn series(spec: &KernelSpec, t: f64, x: f64, order: usize) -> f64 {
    let a1 = spec.normalization.mode_coefficient();
    // Sum small terms first.
    let tail: f64 = (1..=order)
        .rev()
        .map(|k| {
            let k = k as f64;
            (-k * k * t).exp() * (k * x).cos()
        })
        .sum();
    spec.normalization.constant_term() + a1 * tail
}

/// Truncated cosine series for `G(t, x)`; `x` is reduced into `[-π, π)`.
pub fn eval_kernel(spec: &KernelSpec, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    let order = truncation_order(t, spec.truncation_tol)?;
    Ok(series(spec, t, wrap_angle(x), order))
}

fn wrap_angle(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        x
    } else {
        x - TAU * ((x + PI) / TAU).floor()
    }
}

/// Trapezoid approximation of `∫_{-π}^{π} |G(t, y)| dy` on `quadrature_n`
/// uniform periodic nodes.
pub fn kernel_l1_norm(spec: &KernelSpec, t: f64, quadrature_n: usize) -> Result<f64> {
    check_time(t)?;
    if quadrature_n < 64 {
        return Err(Error::domain(format!(
            "quadrature needs at least 64 points, got {quadrature_n}"
        )));
    }
    let order = truncation_order(t, spec.truncation_tol)?;
    let dx = TAU / quadrature_n as f64;
    let sum: f64 = (0..quadrature_n)
        .map(|j| series(spec, t, -PI + j as f64 * dx, order).abs())
        .sum();
    Ok(sum * dx)
}

/// `sup_x |G(t, x)| = G(t, 0)`.
pub fn kernel_sup(spec: &KernelSpec, t: f64) -> Result<f64> {
    eval_kernel(spec, t, 0.0)
}

/// The explicit bound `(2/π)^{1/2} + ½ t^{-1/2}` on `G_paper(t, 0)`.
pub fn paper_sup_bound(t: f64) -> f64 {
    (2.0 / PI).sqrt() + 0.5 / t.sqrt()
}

/// `(2π)^{-1/2} + (2t)^{-1/2}`, a bound on `G_paper(t, 0)` valid for all
/// `t > 0` from `Σ_{k≥1} e^{-k²t} ≤ ½(π/t)^{1/2}`.
pub fn sup_bound(t: f64) -> f64 {
    1.0 / TAU.sqrt() + 1.0 / (2.0 * t).sqrt()
}

/// Recomputes [`SMOOTHING_CONSTANT`] by scanning 400 log-spaced times in
/// `[1e-4, 1]`.
pub fn calibrate_smoothing_constant() -> f64 {
    let spec = KernelSpec::probabilist();
    let samples = 400;
    let max = (0..samples)
        .map(|i| {
            let t = 10f64.powf(-4.0 + 4.0 * i as f64 / (samples - 1) as f64);
            kernel_sup(&spec, t).expect("t in range") * t.sqrt()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    1.1 * max
}

/// Samples of a periodic function at `x_j = -π + j·2π/N`, `N` a power of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::domain(format!(
                "field length must be a power of two >= 2, got {n}"
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("field entry {j} is not finite")));
        }
        Ok(Self { values })
    }

    /// Field with `values[j] = f(x_j)`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = TAU / n as f64;
        Self::new((0..n).map(|j| f(-PI + j as f64 * dx)).collect())
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.len().is_power_of_two());
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dx(&self) -> f64 {
        TAU / self.values.len() as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -PI + (j % self.len()) as f64 * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Periodic index access.
    pub fn at(&self, j: isize) -> f64 {
        let n = self.len() as isize;
        self.values[j.rem_euclid(n) as usize]
    }

    /// Trapezoid `∫ |v|`; on a periodic grid this is `dx Σ |v_j|`.
    pub fn l1(&self) -> f64 {
        l1_norm(&self.values)
    }

    pub fn linf(&self) -> f64 {
        linf_norm(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn l1_norm(values: &[f64]) -> f64 {
    TAU / values.len() as f64 * values.iter().map(|v| v.abs()).sum::<f64>()
}

pub(crate) fn linf_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m: f64, v| {
        if v.is_nan() {
            f64::NAN
        } else {
            m.max(v.abs())
        }
    })
}

/// Signed integer wavenumber of DFT bin `j` on `n` points. The Nyquist bin
/// maps to `+n/2`.
pub fn wavenumber(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Forward/inverse FFT pair for one grid size with owned scratch space.
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Clone for Spectral {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            forward: Arc::clone(&self.forward),
            inverse: Arc::clone(&self.inverse),
            scratch: vec![Complex::default(); self.scratch.len()],
        }
    }
}

impl Spectral {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex::default(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform of a real signal into `out`.
    pub fn forward(&mut self, input: &[f64], out: &mut [Complex<f64>]) {
        for (o, &v) in out.iter_mut().zip(input) {
            *o = Complex::new(v, 0.0);
        }
        self.forward.process_with_scratch(out, &mut self.scratch);
    }

    /// Inverse transform (including the `1/n` factor), keeping real parts.
    pub fn inverse(&mut self, spectrum: &mut [Complex<f64>], out: &mut [f64]) {
        self.inverse.process_with_scratch(spectrum, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for (o, c) in out.iter_mut().zip(spectrum.iter()) {
            *o = c.re * scale;
        }
    }
}

/// Heat semigroup `S(t)` for a fixed grid and time: multiplies DFT mode `k`
/// by `e^{-k² t}`. Reusable across steps.
#[derive(Debug, Clone)]
pub struct HeatPropagator {
    spectral: Spectral,
    multipliers: Vec<f64>,
    buffer: Vec<Complex<f64>>,
}

impl HeatPropagator {
    pub fn new(n: usize, t: f64) -> Self {
        let multipliers = (0..n)
            .map(|j| {
                let k = wavenumber(j, n);
                (-k * k * t).exp()
            })
            .collect();
        Self {
            spectral: Spectral::new(n),
            multipliers,
            buffer: vec![Complex::default(); n],
        }
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Applies the semigroup in place.
    pub fn apply(&mut self, values: &mut [f64]) {
        debug_assert_eq!(values.len(), self.multipliers.len());
        self.spectral.forward(values, &mut self.buffer);
        for (c, m) in self.buffer.iter_mut().zip(&self.multipliers) {
            *c *= *m;
        }
        self.spectral.inverse(&mut self.buffer, values);
    }
}

/// `S(t) field`: exact heat flow of the grid's trigonometric interpolant.
pub fn semigroup_apply(t: f64, field: &Field) -> Result<Field> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("semigroup time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(field.clone());
    }
    let mut values = field.values.clone();
    HeatPropagator::new(field.len(), t).apply(&mut values);
    Ok(Field::from_raw(values))
}

/// Returns `(sup S(t)v, sup S(t)v · t^{1/2} / |v|_{L¹})` for a nonnegative
/// field; the ratio is to be compared against [`SMOOTHING_CONSTANT`].
pub fn smoothing_bound_check(t: f64, field: &Field) -> Result<(f64, f64)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("smoothing check needs t in (0, 1], got {t}")));
    }
    if field.values.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("smoothing check needs a nonnegative field"));
    }
    let mass = field.l1();
    if mass == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lhs = semigroup_apply(t, field)?.max();
    Ok((lhs, lhs * t.sqrt() / mass))
}
