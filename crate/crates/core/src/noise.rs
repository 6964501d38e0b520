//! Discretized space-time white noise.
//!
//! Each time step contributes one [`NoiseSlice`]: `N` independent centred
//! Gaussians with variance `dt·dx`, one per spatial cell. Replica `r` of an
//! experiment seeded with `master_seed` draws from ChaCha8 stream `r` of the
//! key derived from `master_seed`, so any replica can be regenerated on its
//! own, on any thread.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial points, a power of two.
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn new(n: usize, dt: f64, steps: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::config("grid.n", format!("must be a power of two >= 8, got {n}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("grid.dt", format!("must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::config("grid.steps", "must be at least 1"));
        }
        Ok(Self { n, dt, steps })
    }

    /// Grid whose step count is `horizon / dt` rounded to the nearest integer.
    pub fn with_horizon(n: usize, dt: f64, horizon: f64) -> Result<Self> {
        let steps = (horizon / dt).round();
        if !(steps >= 1.0) {
            return Err(Error::config("grid.horizon", format!("horizon {horizon} shorter than dt {dt}")));
        }
        Self::new(n, dt, steps as usize)
    }

    pub fn dx(&self) -> f64 {
        TAU / self.n as f64
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Same horizon with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n: self.n,
            dt: self.dt / factor as f64,
            steps: self.steps * factor,
        }
    }

    /// Standard deviation of one cell increment, `sqrt(dt·dx)`.
    pub fn increment_std(&self) -> f64 {
        (self.dt * self.dx()).sqrt()
    }
}

/// One time step of cell increments `W([t, t+dt) × cell_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSlice {
    pub increments: Vec<f64>,
}

impl NoiseSlice {
    pub fn zeros(n: usize) -> Self {
        Self {
            increments: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

/// Anything that yields successive noise slices.
pub trait NoiseSource {
    /// Writes the next slice into `out` (length `N`).
    fn fill(&mut self, out: &mut [f64]);

    fn next_slice(&mut self, n: usize) -> NoiseSlice {
        let mut slice = NoiseSlice::zeros(n);
        self.fill(&mut slice.increments);
        slice
    }
}

/// RNG for replica `stream` of an experiment keyed by `master_seed`.
pub fn substream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian white noise on a fixed grid.
#[derive(Debug, Clone)]
pub struct WhiteNoise {
    rng: ChaCha8Rng,
    scale: f64,
}

impl WhiteNoise {
    pub fn new(grid: &GridSpec, master_seed: u64, stream: u64) -> Self {
        Self {
            rng: substream_rng(master_seed, stream),
            scale: grid.increment_std(),
        }
    }

    pub fn sample_slice(&mut self, grid: &GridSpec) -> NoiseSlice {
        self.next_slice(grid.n)
    }
}

impl NoiseSource for WhiteNoise {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *v = self.scale * z;
        }
    }
}

/// Coarse-grid noise built by summing `factor` consecutive fine slices, so
/// that a coarse and a refined run see the same Brownian sheet.
#[derive(Debug, Clone)]
pub struct Aggregated<S> {
    inner: S,
    factor: usize,
    buffer: Vec<f64>,
}

impl<S: NoiseSource> Aggregated<S> {
    pub fn new(inner: S, factor: usize) -> Self {
        assert!(factor >= 1);
        Self {
            inner,
            factor,
            buffer: Vec::new(),
        }
    }
}

impl<S: NoiseSource> NoiseSource for Aggregated<S> {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
        self.buffer.resize(out.len(), 0.0);
        for _ in 0..self.factor {
            self.inner.fill(&mut self.buffer);
            for (o, b) in out.iter_mut().zip(&self.buffer) {
                *o += b;
            }
        }
    }
}

/// Replays recorded slices in order; panics when exhausted.
#[derive(Debug, Clone)]
pub struct Replay {
    slices: Vec<NoiseSlice>,
    next: usize,
}

impl Replay {
    pub fn new(slices: Vec<NoiseSlice>) -> Self {
        Self { slices, next: 0 }
    }
}

impl NoiseSource for Replay {
    fn fill(&mut self, out: &mut [f64]) {
        let slice = &self.slices[self.next];
        out.copy_from_slice(&slice.increments);
        self.next += 1;
    }
}

/// Draws all `grid.steps` slices of one replica.
pub fn sample_stream(grid: &GridSpec, master_seed: u64, stream: u64) -> Vec<NoiseSlice> {
    let mut noise = WhiteNoise::new(grid, master_seed, stream);
    (0..grid.steps).map(|_| noise.sample_slice(grid)).collect()
}

/// `Σ_s Σ_j φ(s, j) W_s(j)` for a step-function integrand, `phi[s]` holding
/// the cell values on step `s`.
pub fn walsh_integral(slices: &[NoiseSlice], phi: &[Vec<f64>]) -> Result<f64> {
    if slices.len() != phi.len() {
        return Err(Error::Shape {
            expected: slices.len(),
            actual: phi.len(),
        });
    }
    let mut acc = WalshIntegral::default();
    for (row, slice) in phi.iter().zip(slices) {
        acc.add(row, slice)?;
    }
    Ok(acc.value())
}

/// Running Walsh integral for integrands built on the fly. Feeding the row
/// for step `s` before looking at slice `s` keeps the integrand adapted.
#[derive(Debug, Clone, Copy, Default)]
pub struct WalshIntegral {
    value: f64,
}

impl WalshIntegral {
    pub fn add(&mut self, phi_row: &[f64], slice: &NoiseSlice) -> Result<()> {
        if phi_row.len() != slice.len() {
            return Err(Error::Shape {
                expected: slice.len(),
                actual: phi_row.len(),
            });
        }
        self.value += phi_row
            .iter()
            .zip(&slice.increments)
            .map(|(p, w)| p * w)
            .sum::<f64>();
        Ok(())
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub empirical_cov: f64,
    /// `∫₀ᵀ∫_D φψ` by the grid quadrature the noise is built on.
    pub target: f64,
    pub std_err: f64,
    pub replicas: usize,
    pub pass: bool,
}

impl CovarianceReport {
    pub fn z_score(&self) -> f64 {
        if self.std_err == 0.0 {
            if self.empirical_cov == self.target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical_cov - self.target) / self.std_err
        }
    }
}

/// Empirical covariance of `∫∫φ dW` and `∫∫ψ dW` across replicas versus the
/// deterministic target `∫∫φψ`. `phi` and `psi` are evaluated at the left
/// end of each time step and at the grid nodes. Passes at 3 standard errors.
pub fn covariance_test<F, G>(
    grid: &GridSpec,
    phi: F,
    psi: G,
    replicas: usize,
    master_seed: u64,
) -> Result<CovarianceReport>
where
    F: Fn(f64, f64) -> f64 + Sync,
    G: Fn(f64, f64) -> f64 + Sync,
{
    if replicas < 100 {
        return Err(Error::config("ensemble.replicas", format!("covariance test needs >= 100 replicas, got {replicas}")));
    }
    let dx = grid.dx();
    let xs: Vec<f64> = (0..grid.n).map(|j| -std::f64::consts::PI + j as f64 * dx).collect();
    let phi_tab = tabulate(grid, &xs, &phi);
    let psi_tab = tabulate(grid, &xs, &psi);
    let target: f64 = phi_tab
        .iter()
        .flatten()
        .zip(psi_tab.iter().flatten())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * grid.dt
        * dx;

    let pairs: Vec<(f64, f64)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut noise = WhiteNoise::new(grid, master_seed, r);
            let mut a = WalshIntegral::default();
            let mut b = WalshIntegral::default();
            for s in 0..grid.steps {
                let slice = noise.sample_slice(grid);
                a.add(&phi_tab[s], &slice).expect("shape");
                b.add(&psi_tab[s], &slice).expect("shape");
            }
            (a.value(), b.value())
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (empirical_cov, std_err) = stats::covariance_se(&xs, &ys);
    let pass = (empirical_cov - target).abs() <= 3.0 * std_err;
    Ok(CovarianceReport {
        empirical_cov,
        target,
        std_err,
        replicas,
        pass,
    })
}

fn tabulate(grid: &GridSpec, xs: &[f64], f: &dyn Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    (0..grid.steps)
        .map(|s| xs.iter().map(|&x| f(s as f64 * grid.dt, x)).collect())
        .collect()
}

/// Header shared by noise dumps and field snapshots: four little-endian
/// 8-byte words `N (u64), dt (f64), steps (u64), seed (u64)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub n: u64,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
}

impl BinaryHeader {
    pub const BYTES: usize = 32;

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.steps.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> std::io::Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        Ok(Self {
            n: u64::from_le_bytes(next(r)?),
            dt: f64::from_le_bytes(next(r)?),
            steps: u64::from_le_bytes(next(r)?),
            seed: u64::from_le_bytes(next(r)?),
        })
    }
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> std::io::Result<()> {
    let mut word = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut word)?;
        *v = f64::from_le_bytes(word);
    }
    Ok(())
}

/// Writes a replayable noise stream: header, then `steps × N` increments in
/// step-major order.
pub fn write_noise_dump(
    w: &mut impl Write,
    grid: &GridSpec,
    seed: u64,
    slices: &[NoiseSlice],
) -> Result<()> {
    if slices.len() != grid.steps {
        return Err(Error::Shape {
            expected: grid.steps,
            actual: slices.len(),
        });
    }
    BinaryHeader {
        n: grid.n as u64,
        dt: grid.dt,
        steps: grid.steps as u64,
        seed,
    }
    .write_to(w)?;
    for s in slices {
        if s.len() != grid.n {
            return Err(Error::Shape {
                expected: grid.n,
                actual: s.len(),
            });
        }
        write_f64s(w, &s.increments)?;
    }
    Ok(())
}

pub fn read_noise_dump(r: &mut impl Read) -> Result<(BinaryHeader, Vec<NoiseSlice>)> {
    let header = BinaryHeader::read_from(r)?;
    let n = header.n as usize;
    let mut slices = Vec::with_capacity(header.steps as usize);
    for _ in 0..header.steps {
        let mut s = NoiseSlice::zeros(n);
        read_f64s(r, &mut s.increments)?;
        slices.push(s);
    }
    Ok((header, slices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(16, 0.01, 100).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(12, 0.1, 1).is_err());
        assert!(GridSpec::new(4, 0.1, 1).is_err());
        assert!(GridSpec::new(8, 0.0, 1).is_err());
        assert!(GridSpec::new(8, 0.1, 0).is_err());
        let g = GridSpec::with_horizon(64, 1e-3, 0.5).unwrap();
        assert_eq!(g.steps, 500);
        assert_abs_diff_eq!(g.dx() * 64.0, TAU, epsilon = 1e-15);
    }

    #[test]
    fn same_seed_same_slices() {
        let g = grid();
        assert_eq!(sample_stream(&g, 42, 3), sample_stream(&g, 42, 3));
        assert_ne!(sample_stream(&g, 42, 3), sample_stream(&g, 42, 4));
        assert_ne!(sample_stream(&g, 41, 3), sample_stream(&g, 42, 3));
    }

    #[test]
    fn cell_variance_and_mean() {
        // 10⁵ draws of one cell; the variance estimator's standard error
        // for Gaussian data is s²·sqrt(2/(n-1)).
        let g = GridSpec::new(8, 0.02, 1).unwrap();
        let mut noise = WhiteNoise::new(&g, 7, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| noise.sample_slice(&g).increments[3])
            .collect();
        let target = g.dt * g.dx();
        let (var, se) = stats::variance_se(&draws);
        assert!((var - target).abs() <= 3.0 * se, "var={var} target={target} se={se}");
        let m = stats::mean_se(&draws);
        assert!(m.mean.abs() <= 3.0 * m.std_err);
    }

    #[test]
    fn halving_steps_quarters_cell_variance() {
        let g = GridSpec::new(32, 0.01, 1).unwrap();
        let fine = GridSpec::new(64, 0.005, 1).unwrap();
        assert_abs_diff_eq!(fine.increment_std().powi(2) * 4.0, g.increment_std().powi(2), epsilon = 1e-18);
    }

    #[test]
    fn walsh_integral_is_linear() {
        let g = grid();
        let slices = sample_stream(&g, 1, 0);
        let zero = vec![vec![0.0; g.n]; g.steps];
        assert_eq!(walsh_integral(&slices, &zero).unwrap(), 0.0);

        let phi: Vec<Vec<f64>> = (0..g.steps)
            .map(|s| (0..g.n).map(|j| (s * j) as f64 * 0.01).collect())
            .collect();
        let phi3: Vec<Vec<f64>> = phi.iter().map(|r| r.iter().map(|v| 3.0 * v).collect()).collect();
        let a = walsh_integral(&slices, &phi).unwrap();
        let b = walsh_integral(&slices, &phi3).unwrap();
        assert_abs_diff_eq!(b, 3.0 * a, epsilon = 1e-12);
    }

    #[test]
    fn walsh_integral_shape_mismatch() {
        let g = grid();
        let slices = sample_stream(&g, 1, 0);
        assert!(matches!(walsh_integral(&slices, &[vec![1.0; 16]]), Err(Error::Shape { .. })));
        let bad = vec![vec![1.0; 8]; g.steps];
        assert!(matches!(walsh_integral(&slices, &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn covariance_targets() {
        let g = GridSpec::new(32, 0.02, 50).unwrap();
        let r = covariance_test(&g, |_, _| 1.0, |_, _| 1.0, 2000, 9).unwrap();
        assert_abs_diff_eq!(r.target, TAU, epsilon = 1e-12);
        assert!(r.pass, "{r:?}");

        let r = covariance_test(&g, |_, x| x.cos(), |_, x| x.sin(), 2000, 9).unwrap();
        assert_abs_diff_eq!(r.target, 0.0, epsilon = 1e-12);
        assert!(r.pass, "{r:?}");

        // ∫₀¹∫_D cos² = π; the periodic trapezoid rule is exact for cos².
        let r = covariance_test(&g, |_, x| x.cos(), |_, x| x.cos(), 2000, 9).unwrap();
        assert_abs_diff_eq!(r.target, PI, epsilon = 1e-12);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn disjoint_supports_are_uncorrelated() {
        let g = GridSpec::new(32, 0.02, 50).unwrap();
        let r = covariance_test(
            &g,
            |t, x| if t < 0.5 && x < 0.0 { 1.0 } else { 0.0 },
            |t, x| if t >= 0.5 || x >= 0.0 { 1.0 } else { 0.0 },
            2000,
            5,
        )
        .unwrap();
        assert_eq!(r.target, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn covariance_needs_enough_replicas() {
        let g = grid();
        assert!(matches!(
            covariance_test(&g, |_, _| 1.0, |_, _| 1.0, 99, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn aggregated_noise_matches_manual_sums() {
        let fine = GridSpec::new(8, 0.001, 4);
        let fine = fine.unwrap();
        let slices = sample_stream(&fine, 3, 2);
        let mut agg = Aggregated::new(WhiteNoise::new(&fine, 3, 2), 4);
        let coarse = agg.next_slice(8);
        for j in 0..8 {
            let manual: f64 = slices.iter().map(|s| s.increments[j]).sum();
            assert_abs_diff_eq!(coarse.increments[j], manual, epsilon = 1e-15);
        }
    }

    #[test]
    fn dump_round_trip_is_bit_exact() {
        let g = grid();
        let slices = sample_stream(&g, 11, 0);
        let mut buf = Vec::new();
        write_noise_dump(&mut buf, &g, 11, &slices).unwrap();
        assert_eq!(buf.len(), BinaryHeader::BYTES + 8 * g.n * g.steps);
        assert_eq!(&buf[..8], &16u64.to_le_bytes());
        let (header, back) = read_noise_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(header.seed, 11);
        assert_eq!(header.dt, 0.01);
        assert_eq!(back, slices);
    }
}
