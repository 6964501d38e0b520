//! Exponential-Euler time stepping of the mild form
//!
//! ```text
//!     u(t+dt) = S(dt) u(t) + dt·f(u(t)) + σ(u(t))·ΔW/dx
//! ```
//!
//! where `S(dt)` multiplies Fourier mode `k` by `e^{-k² dt}`. The drift and the
//! noise are evaluated at the old field and added after smoothing.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{DriftSpec, SigmaFamily};
use crate::heat_kernel::{wavenumber, Field, HeatPropagator, Spectral};
use crate::noise::{write_f64s, Aggregated, BinaryHeader, GridSpec, NoiseSlice, NoiseSource, WhiteNoise};
use crate::stopping::{DoublingLog, Observation, StopEvent, StopKind, TrackerSet, Trackers};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    #[default]
    None,
    Constant {
        value: f64,
    },
    /// `f_ε(u) = max(ε, u)^{-α}`.
    Singular(DriftSpec),
}

impl Drift {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Drift::None => 0.0,
            Drift::Constant { value } => *value,
            Drift::Singular(spec) => spec.eval(u),
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Drift::Singular(spec) => Some(spec.epsilon_clamp),
            _ => None,
        }
    }
}

/// Coefficients of one equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Dynamics {
    /// `None` means `σ ≡ 0`.
    pub sigma: Option<SigmaFamily>,
    /// Clamp level `n` of `σ_n`.
    pub clamp_n: Option<f64>,
    pub drift: Drift,
    /// Equation of `v₋`: coefficient `σ(−·)` driven by `−dW`.
    pub mirrored: bool,
}

impl Dynamics {
    pub fn heat() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.sigma {
            s.validate()?;
        }
        if let Some(n) = self.clamp_n {
            if !(n > 0.0) {
                return Err(Error::config("clamp.n", format!("must be positive, got {n}")));
            }
        }
        if let Drift::Singular(spec) = &self.drift {
            spec.validate()?;
        }
        Ok(())
    }

    /// Signed multiplier of `ΔW/dx` at state value `u`.
    #[inline]
    pub fn noise_coefficient(&self, u: f64) -> f64 {
        let Some(family) = &self.sigma else {
            return 0.0;
        };
        let arg = if self.mirrored { -u } else { u };
        let arg = match self.clamp_n {
            Some(n) => arg.clamp(-n, n),
            None => arg,
        };
        let s = family.eval(arg);
        if self.mirrored {
            -s
        } else {
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub t_index: usize,
    pub field: Field,
    pub l1: f64,
    pub linf: f64,
    /// `Σ_s Σ_j σ(field)² dt dx` over the steps taken so far.
    pub qv_accum: f64,
}

impl TrajectoryState {
    pub fn new(field: Field) -> Self {
        let mut s = Self {
            t_index: 0,
            field,
            l1: 0.0,
            linf: 0.0,
            qv_accum: 0.0,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        self.l1 = self.field.l1();
        self.linf = self.field.linf();
    }

    pub fn observation(&self) -> Observation {
        Observation::from_values(self.t_index, self.field.values())
    }

    pub fn is_finite(&self) -> bool {
        self.field.values().iter().all(|v| v.is_finite())
    }
}

/// One-step map for a fixed grid and set of coefficients.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: GridSpec,
    dynamics: Dynamics,
    propagator: HeatPropagator,
    sigma_buf: Vec<f64>,
    drift_buf: Vec<f64>,
}

impl Stepper {
    pub fn new(grid: GridSpec, dynamics: Dynamics) -> Result<Self> {
        dynamics.validate()?;
        Ok(Self {
            grid,
            dynamics,
            propagator: HeatPropagator::new(grid.n, grid.dt),
            sigma_buf: vec![0.0; grid.n],
            drift_buf: vec![0.0; grid.n],
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Advances `state` by one step in place. A non-finite result is kept and
    /// left for the caller to flag as an explosion.
    pub fn step(&mut self, state: &mut TrajectoryState, slice: &NoiseSlice) -> Result<()> {
        let n = self.grid.n;
        if state.field.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: state.field.len(),
            });
        }
        if slice.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: slice.len(),
            });
        }
        if !state.is_finite() {
            return Err(Error::State(format!(
                "non-finite field at step {}",
                state.t_index
            )));
        }
        let dt = self.grid.dt;
        let dx = self.grid.dx();
        let values = state.field.values_mut();
        let mut sq = 0.0;
        for ((v, s), f) in values.iter().zip(&mut self.sigma_buf).zip(&mut self.drift_buf) {
            *s = self.dynamics.noise_coefficient(*v);
            *f = self.dynamics.drift.eval(*v);
            sq += *s * *s;
        }
        self.propagator.apply(values);
        for (((v, s), f), w) in values
            .iter_mut()
            .zip(&self.sigma_buf)
            .zip(&self.drift_buf)
            .zip(&slice.increments)
        {
            *v += dt * f + s * w / dx;
        }
        state.qv_accum += sq * dt * dx;
        state.t_index += 1;
        state.refresh();
        Ok(())
    }
}

/// Functional form of [`Stepper::step`].
pub fn step(state: &TrajectoryState, slice: &NoiseSlice, stepper: &mut Stepper) -> Result<TrajectoryState> {
    let mut next = state.clone();
    stepper.step(&mut next, slice)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// `mean + amplitude·cos(mode·x)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        mode: u32,
    },
    /// `mean + amplitude·Σ_{k≤modes} (a_k cos kx + b_k sin kx)/k` with
    /// `a_k, b_k` uniform on `[-1, 1]`.
    RandomTrig {
        mean: f64,
        amplitude: f64,
        modes: u32,
        seed: u64,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Constant { value: 1.0 }
    }
}

impl InitialData {
    pub fn realize(&self, n: usize) -> Result<Field> {
        match *self {
            InitialData::Constant { value } => Field::constant(n, value),
            InitialData::Cosine { mean, amplitude, mode } => {
                Field::from_fn(n, |x| mean + amplitude * (mode as f64 * x).cos())
            }
            InitialData::RandomTrig {
                mean,
                amplitude,
                modes,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let coef: Vec<(f64, f64)> = (0..modes)
                    .map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
                    .collect();
                Field::from_fn(n, |x| {
                    mean + amplitude
                        * coef
                            .iter()
                            .enumerate()
                            .map(|(i, (a, b))| {
                                let k = (i + 1) as f64;
                                (a * (k * x).cos() + b * (k * x).sin()) / k
                            })
                            .sum::<f64>()
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub dynamics: Dynamics,
    pub initial: InitialData,
    pub trackers: TrackerSet,
    /// Tracker kinds that end the run. Explosion always does.
    pub stop_on: Vec<StopKind>,
    /// Sampling stride of the recorded trajectory.
    pub stride: usize,
    /// Step indices at which the full field is kept.
    pub snapshots: Vec<usize>,
}

impl SolverConfig {
    pub fn new(grid: GridSpec, dynamics: Dynamics) -> Self {
        Self {
            grid,
            dynamics,
            initial: InitialData::default(),
            trackers: TrackerSet::default(),
            stop_on: Vec::new(),
            stride: 1,
            snapshots: Vec::new(),
        }
    }

    /// Checks every setting and returns the realized initial field.
    pub fn validate(&self) -> Result<Field> {
        self.dynamics.validate()?;
        self.trackers.validate()?;
        if self.stride == 0 {
            return Err(Error::config("experiment.stride", "must be at least 1"));
        }
        let field = self.initial.realize(self.grid.n)?;
        if field.linf() >= self.trackers.n_max {
            return Err(Error::config(
                "thresholds.n_max",
                format!(
                    "n_max = {} does not exceed the initial sup {}",
                    self.trackers.n_max,
                    field.linf()
                ),
            ));
        }
        for eps in [self.trackers.epsilon, self.dynamics.drift.epsilon()].into_iter().flatten() {
            if eps >= field.min() {
                return Err(Error::config(
                    "clamp.epsilon",
                    format!("epsilon = {eps} is not below the initial minimum {}", field.min()),
                ));
            }
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_index: usize,
    pub t: f64,
    pub l1: f64,
    pub linf: f64,
    pub qv_accum: f64,
    /// Events fired up to and including this index.
    pub events_fired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    /// Every `stride`-th index, plus the last index reached.
    pub samples: Vec<Sample>,
    pub events: Vec<StopEvent>,
    pub doubling: DoublingLog,
    pub final_state: TrajectoryState,
    /// The event that ended the run, if any.
    pub terminal: Option<StopEvent>,
    /// `max_t |v(t)|_{L¹}` over every visited index.
    pub sup_l1: f64,
    /// `min_{t,x} v(t,x)` over every visited index.
    pub min_value: f64,
    pub snapshots: Vec<(usize, Field)>,
}

impl SimulationResult {
    pub fn exploded(&self) -> bool {
        self.events.iter().any(|e| e.kind == StopKind::Explosion)
    }

    pub fn last_index(&self) -> usize {
        self.final_state.t_index
    }

    /// The last recorded sample at or before `t_index`: the value of the
    /// stopped process when `t_index` lies on the sampling grid.
    pub fn sample_at(&self, t_index: usize) -> &Sample {
        let pos = self.samples.partition_point(|s| s.t_index <= t_index);
        &self.samples[pos.saturating_sub(1)]
    }
}

/// Runs replica `replica` of the experiment keyed by `master_seed`.
pub fn simulate(config: &SolverConfig, master_seed: u64, replica: u64) -> Result<SimulationResult> {
    let mut noise = WhiteNoise::new(&config.grid, master_seed, replica);
    simulate_with(config, &mut noise)
}

pub fn simulate_with(config: &SolverConfig, noise: &mut dyn NoiseSource) -> Result<SimulationResult> {
    let field = config.validate()?;
    let grid = config.grid;
    let mut stepper = Stepper::new(grid, config.dynamics)?;
    let mut state = TrajectoryState::new(field);
    let mut trackers = Trackers::new(config.trackers.clone())?;
    let mut doubling = DoublingLog::new();
    let mut slice = NoiseSlice::zeros(grid.n);
    let mut samples = Vec::new();
    let mut snapshots = Vec::new();
    let mut sup_l1 = f64::NEG_INFINITY;
    let mut min_value = f64::INFINITY;
    let mut terminal = None;
    loop {
        let obs = state.observation();
        let idx = obs.t_index;
        let fired = trackers.update(&obs)?;
        doubling.update(idx, obs.linf);
        sup_l1 = sup_l1.max(obs.l1);
        min_value = min_value.min(obs.min);
        terminal = terminal.or_else(|| {
            fired
                .iter()
                .find(|e| e.kind == StopKind::Explosion || config.stop_on.contains(&e.kind))
                .copied()
        });
        let done = terminal.is_some() || idx == grid.steps;
        if config.snapshots.contains(&idx) {
            snapshots.push((idx, state.field.clone()));
        }
        if idx.is_multiple_of(config.stride) || done {
            samples.push(Sample {
                t_index: idx,
                t: idx as f64 * grid.dt,
                l1: state.l1,
                linf: state.linf,
                qv_accum: state.qv_accum,
                events_fired: trackers.events().len(),
            });
        }
        if done {
            break;
        }
        noise.fill(&mut slice.increments);
        stepper.step(&mut state, &slice)?;
    }
    doubling.finish(state.t_index);
    Ok(SimulationResult {
        samples,
        events: trackers.into_events(),
        doubling,
        final_state: state,
        terminal,
        sup_l1,
        min_value,
        snapshots,
    })
}

/// Trajectory CSV: `t,l1,linf,qv_accum,events_fired`.
pub fn write_trajectory_csv(w: &mut impl Write, samples: &[Sample]) -> Result<()> {
    writeln!(w, "t,l1,linf,qv_accum,events_fired")?;
    for s in samples {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{}",
            s.t, s.l1, s.linf, s.qv_accum, s.events_fired
        )?;
    }
    Ok(())
}

/// Snapshot dump: the noise-dump header with `steps` set to the number of
/// snapshots, then per snapshot its step index (u64) and `N` values.
pub fn write_snapshots(w: &mut impl Write, grid: &GridSpec, seed: u64, snapshots: &[(usize, Field)]) -> Result<()> {
    BinaryHeader {
        n: grid.n as u64,
        dt: grid.dt,
        steps: snapshots.len() as u64,
        seed,
    }
    .write_to(w)?;
    for (idx, field) in snapshots {
        w.write_all(&(*idx as u64).to_le_bytes())?;
        write_f64s(w, field.values())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledConfig {
    pub grid: GridSpec,
    pub sigma: Option<SigmaFamily>,
    pub clamp_n: Option<f64>,
    pub drift: DriftSpec,
    /// Initial data of `u`.
    pub initial: InitialData,
    pub tol_order: f64,
    pub n_max: f64,
    /// End the run once `v` or `v₋` reaches the drift floor ε.
    pub stop_on_floor: bool,
    pub stride: usize,
}

impl CoupledConfig {
    pub const DEFAULT_TOL_ORDER: f64 = 1e-6;

    pub fn new(grid: GridSpec, sigma: Option<SigmaFamily>, drift: DriftSpec) -> Self {
        Self {
            grid,
            sigma,
            clamp_n: None,
            drift,
            initial: InitialData::default(),
            tol_order: Self::DEFAULT_TOL_ORDER,
            n_max: 1e6,
            stop_on_floor: true,
            stride: 1,
        }
    }

    fn dynamics(&self) -> [Dynamics; 3] {
        let u = Dynamics {
            sigma: self.sigma,
            clamp_n: self.clamp_n,
            drift: Drift::None,
            mirrored: false,
        };
        let v = Dynamics {
            drift: Drift::Singular(self.drift),
            ..u
        };
        let v_minus = Dynamics { mirrored: true, ..v };
        [u, v, v_minus]
    }

    /// Initial `(u, v, v₋)` with `v = max(u, 1)`, `v₋ = max(−u, 1)`.
    pub fn initial_state(&self) -> Result<CoupledState> {
        if self.stride == 0 {
            return Err(Error::config("experiment.stride", "must be at least 1"));
        }
        if !(self.n_max > 1.0) {
            return Err(Error::config("thresholds.n_max", format!("must exceed 1, got {}", self.n_max)));
        }
        let u = self.initial.realize(self.grid.n)?;
        if u.linf() >= self.n_max {
            return Err(Error::config("thresholds.n_max", "does not exceed the initial sup"));
        }
        let v = Field::new(u.values().iter().map(|x| x.max(1.0)).collect())?;
        let vm = Field::new(u.values().iter().map(|x| (-x).max(1.0)).collect())?;
        Ok(CoupledState {
            u: TrajectoryState::new(u),
            v: TrajectoryState::new(v),
            v_minus: TrajectoryState::new(vm),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub u: TrajectoryState,
    pub v: TrajectoryState,
    pub v_minus: TrajectoryState,
}

impl CoupledState {
    /// `min_x min(v − u, u + v₋)`; negative values are ordering violations.
    pub fn order_margin(&self) -> f64 {
        self.u
            .field
            .values()
            .iter()
            .zip(self.v.field.values())
            .zip(self.v_minus.field.values())
            .map(|((u, v), vm)| (v - u).min(u + vm))
            .fold(f64::INFINITY, f64::min)
    }

    fn members(&self) -> [&TrajectoryState; 3] {
        [&self.u, &self.v, &self.v_minus]
    }

    pub fn max_abs_diff(&self, other: &CoupledState) -> f64 {
        self.members()
            .iter()
            .zip(other.members())
            .map(|(a, b)| a.field.max_abs_diff(&b.field))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tol_order: f64,
    /// Indices at which the ordering was checked (the run was alive).
    pub checked: usize,
    pub violating: usize,
    /// Largest `−margin` seen; zero without violations.
    pub max_violation: f64,
    /// `(t_index, margin)` at every stride-th checked index.
    pub margins: Vec<(usize, f64)>,
    /// Index at which the run stopped early, if it did.
    pub stopped_at: Option<usize>,
}

impl ComparisonReport {
    pub fn violation_rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violating as f64 / self.checked as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledResult {
    pub final_state: CoupledState,
    pub report: ComparisonReport,
}

pub fn simulate_coupled(config: &CoupledConfig, master_seed: u64, replica: u64) -> Result<CoupledResult> {
    let mut noise = WhiteNoise::new(&config.grid, master_seed, replica);
    simulate_coupled_with(config, &mut noise)
}

/// Coupled run on a grid refined `factor` times; the coarse run of the same
/// seed sees the sums of its increments.
pub fn simulate_coupled_refined(
    config: &CoupledConfig,
    factor: usize,
    master_seed: u64,
    replica: u64,
) -> Result<(CoupledResult, CoupledResult)> {
    let fine_grid = config.grid.refined(factor);
    let mut coarse_noise = Aggregated::new(WhiteNoise::new(&fine_grid, master_seed, replica), factor);
    let coarse = simulate_coupled_with(config, &mut coarse_noise)?;
    let fine_config = CoupledConfig {
        grid: fine_grid,
        stride: config.stride * factor,
        ..config.clone()
    };
    let mut fine_noise = WhiteNoise::new(&fine_grid, master_seed, replica);
    let fine = simulate_coupled_with(&fine_config, &mut fine_noise)?;
    Ok((coarse, fine))
}

pub fn simulate_coupled_with(config: &CoupledConfig, noise: &mut dyn NoiseSource) -> Result<CoupledResult> {
    let mut state = config.initial_state()?;
    let [du, dv, dvm] = config.dynamics();
    let grid = config.grid;
    let mut steppers = [
        Stepper::new(grid, du)?,
        Stepper::new(grid, dv)?,
        Stepper::new(grid, dvm)?,
    ];
    let eps = config.drift.epsilon_clamp;
    let mut slice = NoiseSlice::zeros(grid.n);
    let mut report = ComparisonReport {
        tol_order: config.tol_order,
        checked: 0,
        violating: 0,
        max_violation: 0.0,
        margins: Vec::new(),
        stopped_at: None,
    };
    loop {
        let idx = state.u.t_index;
        let exploded = state
            .members()
            .iter()
            .any(|s| !(s.observation().linf < config.n_max));
        let floored = config.stop_on_floor && (state.v.field.min() <= eps || state.v_minus.field.min() <= eps);
        if exploded || floored {
            report.stopped_at = Some(idx);
            break;
        }
        let margin = state.order_margin();
        report.checked += 1;
        if margin < -config.tol_order {
            report.violating += 1;
            report.max_violation = report.max_violation.max(-margin);
        }
        if idx % config.stride == 0 {
            report.margins.push((idx, margin));
        }
        if idx == grid.steps {
            break;
        }
        noise.fill(&mut slice.increments);
        let [su, sv, svm] = &mut steppers;
        su.step(&mut state.u, &slice)?;
        sv.step(&mut state.v, &slice)?;
        svm.step(&mut state.v_minus, &slice)?;
    }
    Ok(CoupledResult {
        final_state: state,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// First index at which the coarser clamp `(ε₁, n₁)` is active.
    pub first_activation: Option<usize>,
    /// Number of indices compared before activation.
    pub compared: usize,
    pub max_diff: f64,
}

fn clamp_active(state: &CoupledState, eps: f64, n: f64) -> bool {
    let beyond = |s: &TrajectoryState| s.field.values().iter().any(|x| x.abs() > n);
    let below = |s: &TrajectoryState| s.field.values().iter().any(|&x| x < eps);
    beyond(&state.u) || beyond(&state.v) || beyond(&state.v_minus) || below(&state.v) || below(&state.v_minus)
}

/// Runs the coupled system at clamp levels `(ε₁, n₁)` and `(ε₂, n₂)` on one
/// noise path and compares the fields up to the first activation of the
/// `(ε₁, n₁)` clamp.
pub fn localization_pair(
    config: &CoupledConfig,
    first: (f64, f64),
    second: (f64, f64),
    master_seed: u64,
    replica: u64,
) -> Result<LocalizationReport> {
    let (eps1, n1) = first;
    let (eps2, n2) = second;
    if !(eps2 < eps1 && n2 > n1) {
        return Err(Error::config(
            "clamp",
            format!("need eps2 < eps1 and n2 > n1, got ({eps1}, {n1}) and ({eps2}, {n2})"),
        ));
    }
    let with_levels = |eps: f64, n: f64| -> Result<CoupledConfig> {
        Ok(CoupledConfig {
            clamp_n: Some(n),
            drift: DriftSpec::new(config.drift.alpha, eps)?,
            ..config.clone()
        })
    };
    let c1 = with_levels(eps1, n1)?;
    let c2 = with_levels(eps2, n2)?;
    let mut a = c1.initial_state()?;
    let mut b = c2.initial_state()?;
    let mk = |c: &CoupledConfig| -> Result<[Stepper; 3]> {
        let [du, dv, dvm] = c.dynamics();
        Ok([
            Stepper::new(c.grid, du)?,
            Stepper::new(c.grid, dv)?,
            Stepper::new(c.grid, dvm)?,
        ])
    };
    let mut sa = mk(&c1)?;
    let mut sb = mk(&c2)?;
    let mut noise = WhiteNoise::new(&config.grid, master_seed, replica);
    let mut slice = NoiseSlice::zeros(config.grid.n);
    let mut report = LocalizationReport {
        first_activation: None,
        compared: 0,
        max_diff: 0.0,
    };
    loop {
        let idx = a.u.t_index;
        report.compared += 1;
        report.max_diff = report.max_diff.max(a.max_abs_diff(&b));
        if clamp_active(&a, eps1, n1) {
            report.first_activation = Some(idx);
            break;
        }
        if idx == config.grid.steps {
            break;
        }
        noise.fill(&mut slice.increments);
        for (s, st) in sa.iter_mut().zip([&mut a.u, &mut a.v, &mut a.v_minus]) {
            s.step(st, &slice)?;
        }
        for (s, st) in sb.iter_mut().zip([&mut b.u, &mut b.v, &mut b.v_minus]) {
            s.step(st, &slice)?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phi {
    Constant { level: f64 },
    /// Time-independent spatial profile, one value per grid point.
    Profile { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionSpec {
    pub p: f64,
    pub beta: f64,
    pub horizon: f64,
    pub phi: Phi,
}

impl ConvolutionSpec {
    pub fn new(p: f64, beta: f64, horizon: f64, phi: Phi) -> Result<Self> {
        let spec = Self { p, beta, horizon, phi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 6.0 && self.p.is_finite()) {
            return Err(Error::config("experiment.p", format!("must exceed 6, got {}", self.p)));
        }
        let lo = 1.5 / self.p;
        if !(self.beta > lo && self.beta < 0.25) {
            return Err(Error::config(
                "experiment.beta",
                format!("must lie in ({lo}, 0.25), got {}", self.beta),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("grid.horizon", format!("must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        self.validate()?;
        if (grid.horizon() - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::config(
                "grid.steps",
                format!("grid horizon {} differs from T = {}", grid.horizon(), self.horizon),
            ));
        }
        Ok(())
    }

    pub fn phi_row(&self, n: usize) -> Result<Vec<f64>> {
        phi_row(&self.phi, n)
    }
}

pub fn phi_row(phi: &Phi, n: usize) -> Result<Vec<f64>> {
    match phi {
        Phi::Constant { level } => Ok(vec![*level; n]),
        Phi::Profile { values } if values.len() == n => Ok(values.clone()),
        Phi::Profile { values } => Err(Error::Shape {
            expected: n,
            actual: values.len(),
        }),
    }
}

/// `Z(t+dt) = S(dt) Z(t) + φ·ΔW/dx`, `Z(0) = 0`. Returns `Z` at every step
/// index `0..=steps`.
pub fn stochastic_convolution(spec: &ConvolutionSpec, grid: &GridSpec, noise: &mut dyn NoiseSource) -> Result<Vec<Field>> {
    spec.check_grid(grid)?;
    let phi = spec.phi_row(grid.n)?;
    let mut out = Vec::with_capacity(grid.steps + 1);
    convolution_walk(&phi, grid, noise, |_, z| out.push(Field::from_raw(z.to_vec())));
    Ok(out)
}

/// Running `sup_{s ≤ t, x} |Z(s, x)|` at each checkpoint index (ascending,
/// at most `grid.steps`).
pub fn convolution_sup_path(phi: &[f64], grid: &GridSpec, noise: &mut dyn NoiseSource, checkpoints: &[usize]) -> Result<Vec<f64>> {
    if phi.len() != grid.n {
        return Err(Error::Shape {
            expected: grid.n,
            actual: phi.len(),
        });
    }
    if checkpoints.windows(2).any(|w| w[0] > w[1]) || checkpoints.last().is_some_and(|&c| c > grid.steps) {
        return Err(Error::config("experiment.t_grid", "checkpoints must be ascending and within the horizon"));
    }
    let mut sup = 0.0f64;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    let last = checkpoints.last().copied().unwrap_or(0);
    let walk_grid = GridSpec { steps: last.max(1), ..*grid };
    convolution_walk(phi, &walk_grid, noise, |idx, z| {
        sup = z.iter().fold(sup, |m, v| m.max(v.abs()));
        while next < checkpoints.len() && checkpoints[next] == idx {
            out.push(sup);
            next += 1;
        }
    });
    Ok(out)
}

fn convolution_walk(phi: &[f64], grid: &GridSpec, noise: &mut dyn NoiseSource, mut visit: impl FnMut(usize, &[f64])) {
    let dx = grid.dx();
    let mut propagator = HeatPropagator::new(grid.n, grid.dt);
    let mut z = vec![0.0; grid.n];
    let mut w = vec![0.0; grid.n];
    visit(0, &z);
    for idx in 1..=grid.steps {
        noise.fill(&mut w);
        propagator.apply(&mut z);
        for ((zj, pj), wj) in z.iter_mut().zip(phi).zip(&w) {
            *zj += pj * wj / dx;
        }
        visit(idx, &z);
    }
}

/// Factorized reconstruction of the stochastic convolution from the same
/// noise slices:
///
/// ```text
///     Z_β(s_i) = Σ_{m<i} a(i−1−m) S((i−1−m)dt) φΔW_m/dx
///     R(t_n)   = (sin πβ / π) Σ_{i<n} B(n−i) S((n−1−i)dt) Z_β(s_{i+1})
/// ```
///
/// with `a(l)` the cell average of `r^{−β}` over `[l dt, (l+1) dt]` and
/// `B(m) = ∫_{(m−1)dt}^{m dt} r^{β−1} dr` in closed form. Returns `R` at every
/// step index `0..=steps`.
pub fn factorization_reconstruct(spec: &ConvolutionSpec, grid: &GridSpec, slices: &[NoiseSlice]) -> Result<Vec<Field>> {
    spec.check_grid(grid)?;
    if slices.len() != grid.steps {
        return Err(Error::Shape {
            expected: grid.steps,
            actual: slices.len(),
        });
    }
    let n = grid.n;
    let steps = grid.steps;
    let dt = grid.dt;
    let dx = grid.dx();
    let beta = spec.beta;
    let phi = spec.phi_row(n)?;
    let mut spectral = Spectral::new(n);

    let injections: Vec<Vec<Complex<f64>>> = slices
        .iter()
        .map(|s| {
            if s.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    actual: s.len(),
                });
            }
            let w: Vec<f64> = s.increments.iter().zip(&phi).map(|(w, p)| p * w / dx).collect();
            let mut hat = vec![Complex::default(); n];
            spectral.forward(&w, &mut hat);
            Ok(hat)
        })
        .collect::<Result<_>>()?;

    let lam: Vec<f64> = (0..n).map(|j| wavenumber(j, n).powi(2)).collect();
    let decay = |k: usize, lag: usize| (-lam[k] * lag as f64 * dt).exp();
    let a = |l: usize| {
        let l = l as f64;
        dt.powf(-beta) * ((l + 1.0).powf(1.0 - beta) - l.powf(1.0 - beta)) / (1.0 - beta)
    };
    let b = |m: usize| {
        let m = m as f64;
        dt.powf(beta) * (m.powf(beta) - (m - 1.0).powf(beta)) / beta
    };
    let a_tab: Vec<f64> = (0..steps).map(a).collect();
    let b_tab: Vec<f64> = (0..=steps).map(|m| if m == 0 { 0.0 } else { b(m) }).collect();
    let decay_tab: Vec<Vec<f64>> = (0..n).map(|k| (0..steps).map(|l| decay(k, l)).collect()).collect();

    // z_beta[i] holds the spectrum of Z_β(s_{i+1}).
    let mut z_beta = vec![vec![Complex::default(); n]; steps];
    for (i, zb) in z_beta.iter_mut().enumerate() {
        for (m, inj) in injections.iter().enumerate().take(i + 1) {
            let lag = i - m;
            let w = a_tab[lag];
            for k in 0..n {
                zb[k] += inj[k] * (w * decay_tab[k][lag]);
            }
        }
    }

    let prefactor = (PI * beta).sin() / PI;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(Field::from_raw(vec![0.0; n]));
    let mut acc = vec![Complex::default(); n];
    let mut values = vec![0.0; n];
    for t in 1..=steps {
        acc.fill(Complex::default());
        for (i, zb) in z_beta.iter().enumerate().take(t) {
            let w = prefactor * b_tab[t - i];
            let lag = t - 1 - i;
            for k in 0..n {
                acc[k] += zb[k] * (w * decay_tab[k][lag]);
            }
        }
        spectral.inverse(&mut acc, &mut values);
        out.push(Field::from_raw(values.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub steps: usize,
    pub dt: f64,
    /// `sup_{t,x} |Z|`.
    pub sup_direct: f64,
    /// `sup_{t,x} |Z − R|`.
    pub sup_abs_diff: f64,
    /// `sup_{t,x} |Z − R| / sup_{t,x} |Z|`.
    pub rel_diff: f64,
}

/// Direct and factorized convolution on the same slices.
pub fn factorization_compare(spec: &ConvolutionSpec, grid: &GridSpec, slices: &[NoiseSlice]) -> Result<FactorizationReport> {
    let direct = stochastic_convolution(spec, grid, &mut crate::noise::Replay::new(slices.to_vec()))?;
    let recon = factorization_reconstruct(spec, grid, slices)?;
    let sup_direct = direct.iter().map(Field::linf).fold(0.0, f64::max);
    let sup_abs_diff = direct
        .iter()
        .zip(&recon)
        .map(|(z, r)| z.max_abs_diff(r))
        .fold(0.0, f64::max);
    let rel_diff = if sup_direct > 0.0 { sup_abs_diff / sup_direct } else { 0.0 };
    Ok(FactorizationReport {
        steps: grid.steps,
        dt: grid.dt,
        sup_direct,
        sup_abs_diff,
        rel_diff,
    })
}

/// Factorization comparison at `grid` and at `grid` with half the step, the
/// coarse slices being sums of consecutive fine ones.
pub fn factorization_refinement(
    spec: &ConvolutionSpec,
    grid: &GridSpec,
    master_seed: u64,
    replica: u64,
) -> Result<(FactorizationReport, FactorizationReport)> {
    let fine_grid = grid.refined(2);
    let fine: Vec<NoiseSlice> = crate::noise::sample_stream(&fine_grid, master_seed, replica);
    let coarse: Vec<NoiseSlice> = fine
        .chunks(2)
        .map(|pair| NoiseSlice {
            increments: pair[0]
                .increments
                .iter()
                .zip(&pair[1].increments)
                .map(|(a, b)| a + b)
                .collect(),
        })
        .collect();
    Ok((
        factorization_compare(spec, grid, &coarse)?,
        factorization_compare(spec, &fine_grid, &fine)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::Replay;
    use crate::stats;
    use approx::assert_abs_diff_eq;

    struct Zero;
    impl NoiseSource for Zero {
        fn fill(&mut self, out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    fn grid(n: usize, dt: f64, steps: usize) -> GridSpec {
        GridSpec::new(n, dt, steps).unwrap()
    }

    #[test]
    fn single_mode_decays_exactly() {
        let g = grid(64, 1e-3, 1000);
        let mut stepper = Stepper::new(g, Dynamics::heat()).unwrap();
        let mut state = TrajectoryState::new(Field::from_fn(64, |x| (3.0 * x).cos()).unwrap());
        let slice = NoiseSlice::zeros(64);
        for _ in 0..1000 {
            stepper.step(&mut state, &slice).unwrap();
        }
        let expect = Field::from_fn(64, |x| (-9.0f64).exp() * (3.0 * x).cos()).unwrap();
        assert!(state.field.max_abs_diff(&expect) <= 1e-10);
        let one = step(
            &TrajectoryState::new(Field::from_fn(64, f64::cos).unwrap()),
            &slice,
            &mut stepper,
        )
        .unwrap();
        let expect = Field::from_fn(64, |x| (-1e-3f64).exp() * x.cos()).unwrap();
        assert!(one.field.max_abs_diff(&expect) <= 1e-10);
    }

    #[test]
    fn constant_drift_adds_linearly() {
        let g = grid(32, 1e-2, 50);
        let dyn_ = Dynamics {
            drift: Drift::Constant { value: 0.7 },
            ..Dynamics::heat()
        };
        let mut stepper = Stepper::new(g, dyn_).unwrap();
        let mut state = TrajectoryState::new(Field::from_fn(32, |x| 2.0 + x.cos()).unwrap());
        let slice = NoiseSlice::zeros(32);
        for _ in 0..50 {
            stepper.step(&mut state, &slice).unwrap();
        }
        let t: f64 = 0.5;
        let expect = Field::from_fn(32, |x| 2.0 + (-t).exp() * x.cos() + 0.7 * t).unwrap();
        assert!(state.field.max_abs_diff(&expect) <= 1e-10);
    }

    #[test]
    fn caches_and_qv() {
        let g = grid(32, 1e-3, 200);
        let dyn_ = Dynamics {
            sigma: Some(SigmaFamily::critical(0.5)),
            ..Dynamics::heat()
        };
        let mut stepper = Stepper::new(g, dyn_).unwrap();
        let mut noise = WhiteNoise::new(&g, 3, 0);
        let mut state = TrajectoryState::new(Field::constant(32, 1.0).unwrap());
        let mut prev = 0.0;
        let mut increments = Vec::new();
        for _ in 0..200 {
            let before = state.clone();
            let slice = noise.next_slice(32);
            stepper.step(&mut state, &slice).unwrap();
            assert!((state.l1 - state.field.l1()).abs() <= 1e-12);
            assert!((state.linf - state.field.linf()).abs() <= 1e-12);
            assert!(state.qv_accum >= prev);
            let expect: f64 = before
                .field
                .values()
                .iter()
                .map(|&v| SigmaFamily::critical(0.5).eval(v).powi(2))
                .sum::<f64>()
                * g.dt
                * g.dx();
            increments.push(state.qv_accum - prev);
            assert_abs_diff_eq!(state.qv_accum - prev, expect, epsilon = 1e-12);
            prev = state.qv_accum;
        }
        assert_abs_diff_eq!(increments.iter().sum::<f64>(), state.qv_accum, epsilon = 1e-10);
    }

    #[test]
    fn non_finite_input_is_state_error() {
        let g = grid(8, 1e-3, 1);
        let mut stepper = Stepper::new(g, Dynamics::heat()).unwrap();
        let mut state = TrajectoryState::new(Field::constant(8, 1.0).unwrap());
        state.field.values_mut()[3] = f64::NAN;
        assert!(matches!(
            stepper.step(&mut state, &NoiseSlice::zeros(8)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn mirrored_coefficient() {
        let d = Dynamics {
            sigma: Some(SigmaFamily::linear(1.0)),
            mirrored: true,
            ..Dynamics::heat()
        };
        assert_eq!(d.noise_coefficient(2.0), 2.0);
        let c = Dynamics {
            sigma: Some(SigmaFamily::critical(1.0)),
            clamp_n: Some(4.0),
            ..Dynamics::heat()
        };
        assert_eq!(c.noise_coefficient(100.0), 9.0);
    }

    fn base_config(steps: usize) -> SolverConfig {
        SolverConfig {
            trackers: TrackerSet {
                epsilon: Some(0.5),
                ..TrackerSet::default()
            },
            ..SolverConfig::new(grid(16, 1e-4, steps), Dynamics::heat())
        }
    }

    #[test]
    fn quiet_run_fires_nothing() {
        let r = simulate(&base_config(1), 0, 0).unwrap();
        assert!(r.events.is_empty());
        assert_eq!(r.samples.len(), 2);
        assert_eq!(r.last_index(), 1);
    }

    #[test]
    fn start_above_level_fires_at_zero() {
        let cfg = SolverConfig {
            initial: InitialData::Constant { value: 3.0 },
            trackers: TrackerSet {
                n_levels: vec![2.0],
                n_max: 10.0,
                ..TrackerSet::default()
            },
            ..base_config(5)
        };
        let r = simulate(&cfg, 0, 0).unwrap();
        assert_eq!(r.events.len(), 1);
        assert_eq!(r.events[0].kind, StopKind::Ceiling);
        assert_eq!(r.events[0].t_index, 0);
    }

    #[test]
    fn inconsistent_thresholds_are_config_errors() {
        let cfg = SolverConfig {
            initial: InitialData::Constant { value: 3.0 },
            trackers: TrackerSet {
                n_max: 2.0,
                ..TrackerSet::default()
            },
            ..base_config(5)
        };
        assert!(matches!(simulate(&cfg, 0, 0), Err(Error::Config { ref key, .. }) if key == "thresholds.n_max"));
        let cfg = SolverConfig {
            initial: InitialData::Constant { value: 0.4 },
            ..base_config(5)
        };
        assert!(matches!(simulate(&cfg, 0, 0), Err(Error::Config { ref key, .. }) if key == "clamp.epsilon"));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = SolverConfig {
            dynamics: Dynamics {
                sigma: Some(SigmaFamily::critical(1.0)),
                drift: Drift::Singular(DriftSpec::new(4.0, 0.5).unwrap()),
                ..Dynamics::heat()
            },
            initial: InitialData::RandomTrig {
                mean: 2.0,
                amplitude: 0.5,
                modes: 4,
                seed: 9,
            },
            stride: 7,
            snapshots: vec![0, 50],
            ..base_config(100)
        };
        let a = simulate(&cfg, 11, 2).unwrap();
        let b = simulate(&cfg, 11, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 2);
        let c = simulate(&cfg, 11, 3).unwrap();
        assert_ne!(a.final_state, c.final_state);
    }

    #[test]
    fn explosion_ends_run() {
        let cfg = SolverConfig {
            dynamics: Dynamics {
                drift: Drift::Constant { value: 100.0 },
                ..Dynamics::heat()
            },
            trackers: TrackerSet {
                n_max: 5.0,
                ..TrackerSet::default()
            },
            ..SolverConfig::new(grid(16, 1e-2, 100), Dynamics::heat())
        };
        let r = simulate(&cfg, 0, 0).unwrap();
        assert!(r.exploded());
        assert_eq!(r.terminal.unwrap().t_index, 4);
        assert_eq!(r.samples.last().unwrap().t_index, 4);
        assert_eq!(r.sample_at(50).t_index, 4);
    }

    #[test]
    fn csv_and_snapshot_layout() {
        let cfg = SolverConfig {
            snapshots: vec![0, 2],
            ..base_config(2)
        };
        let r = simulate(&cfg, 0, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &r.samples).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("t,l1,linf,qv_accum,events_fired\n0.0000000000000000e0,"));
        let mut bin = Vec::new();
        write_snapshots(&mut bin, &cfg.grid, 0, &r.snapshots).unwrap();
        assert_eq!(bin.len(), BinaryHeader::BYTES + 2 * (8 + 16 * 8));
        let header = BinaryHeader::read_from(&mut bin.as_slice()).unwrap();
        assert_eq!(header.steps, 2);
    }

    #[test]
    fn initial_data_kinds() {
        let f = InitialData::Cosine {
            mean: 1.0,
            amplitude: 0.5,
            mode: 2,
        }
        .realize(16)
        .unwrap();
        assert_abs_diff_eq!(f.values()[0], 1.5, epsilon = 1e-15);
        let r = InitialData::RandomTrig {
            mean: 0.0,
            amplitude: 1.0,
            modes: 3,
            seed: 1,
        };
        assert_eq!(r.realize(32).unwrap(), r.realize(32).unwrap());
        assert!(r.realize(32).unwrap().values().iter().sum::<f64>().abs() < 1e-12);
    }

    fn coupled(sigma: Option<SigmaFamily>, steps: usize) -> CoupledConfig {
        CoupledConfig::new(grid(32, 1e-3, steps), sigma, DriftSpec::new(4.0, 0.5).unwrap())
    }

    #[test]
    fn coupled_initial_data() {
        let cfg = CoupledConfig {
            initial: InitialData::Constant { value: 0.0 },
            ..coupled(None, 1)
        };
        let s = cfg.initial_state().unwrap();
        assert_eq!(s.v.field.values(), &[1.0; 32]);
        assert_eq!(s.v_minus.field.values(), &[1.0; 32]);
        assert_eq!(s.order_margin(), 1.0);
        let cfg = CoupledConfig {
            initial: InitialData::Cosine {
                mean: 0.0,
                amplitude: 3.0,
                mode: 1,
            },
            ..coupled(None, 1)
        };
        let s = cfg.initial_state().unwrap();
        for ((u, v), vm) in s.u.field.values().iter().zip(s.v.field.values()).zip(s.v_minus.field.values()) {
            assert_eq!(*v, u.max(1.0));
            assert_eq!(*vm, (-u).max(1.0));
        }
    }

    #[test]
    fn deterministic_drift_keeps_order() {
        let cfg = CoupledConfig {
            initial: InitialData::Cosine {
                mean: 2.0,
                amplitude: 0.5,
                mode: 1,
            },
            ..coupled(None, 300)
        };
        let r = simulate_coupled(&cfg, 0, 0).unwrap();
        assert_eq!(r.report.violating, 0);
        assert_eq!(r.report.checked, 301);
        let heat = semigroup_flow(&cfg.initial_state().unwrap().v.field, 0.3);
        for (v, h) in r.final_state.v.field.values().iter().zip(heat.values()) {
            assert!(v > h);
        }
    }

    fn semigroup_flow(f: &Field, t: f64) -> Field {
        crate::heat_kernel::semigroup_apply(t, f).unwrap()
    }

    #[test]
    fn mirrored_noise_orders_pathwise() {
        let cfg = CoupledConfig {
            initial: InitialData::Constant { value: 0.0 },
            ..coupled(Some(SigmaFamily::constant(1.0)), 200)
        };
        let mut cfg = cfg;
        cfg.drift = DriftSpec::new(4.0, 0.01).unwrap();
        cfg.stop_on_floor = false;
        // With additive noise u, v and -v₋ share the same stochastic part, so
        // v − u and u + v₋ are driven only by the nonnegative drift.
        let r = simulate_coupled(&cfg, 5, 0).unwrap();
        assert_eq!(r.report.violating, 0);
    }

    #[test]
    fn refined_coupling_matches_aggregated_noise() {
        let cfg = CoupledConfig {
            stride: 10,
            ..coupled(Some(SigmaFamily::critical(0.3)), 50)
        };
        let (coarse, fine) = simulate_coupled_refined(&cfg, 4, 1, 0).unwrap();
        assert_eq!(coarse.report.margins.first().unwrap().0, 0);
        let coarse_direct = {
            let fine_grid = cfg.grid.refined(4);
            let slices = crate::noise::sample_stream(&fine_grid, 1, 0);
            let agg: Vec<NoiseSlice> = slices
                .chunks(4)
                .map(|c| NoiseSlice {
                    increments: (0..32).map(|j| c.iter().map(|s| s.increments[j]).sum()).collect(),
                })
                .collect();
            simulate_coupled_with(&cfg, &mut Replay::new(agg)).unwrap()
        };
        assert_eq!(coarse_direct.final_state.u.field.values(), coarse.final_state.u.field.values());
        assert_eq!(fine.final_state.u.t_index, 200);
        let times: Vec<usize> = fine.report.margins.iter().map(|m| m.0).collect();
        assert_eq!(times, vec![0, 40, 80, 120, 160, 200]);
    }

    #[test]
    fn localization_agrees_before_activation() {
        let cfg = CoupledConfig {
            initial: InitialData::Cosine {
                mean: 0.0,
                amplitude: 2.0,
                mode: 1,
            },
            ..coupled(Some(SigmaFamily::critical(1.0)), 300)
        };
        for r in 0..5 {
            let rep = localization_pair(&cfg, (0.5, 4.0), (0.1, 8.0), 7, r).unwrap();
            assert!(rep.compared >= 1);
            assert!(rep.max_diff <= 1e-12);
        }
        assert!(localization_pair(&cfg, (0.1, 4.0), (0.5, 8.0), 7, 0).is_err());
    }

    fn conv_spec(level: f64) -> ConvolutionSpec {
        ConvolutionSpec::new(8.0, 0.2, 0.5, Phi::Constant { level }).unwrap()
    }

    #[test]
    fn convolution_spec_validation() {
        assert!(matches!(ConvolutionSpec::new(6.0, 0.2, 1.0, Phi::Constant { level: 1.0 }), Err(Error::Config { ref key, .. }) if key == "experiment.p"));
        assert!(matches!(ConvolutionSpec::new(8.0, 0.18, 1.0, Phi::Constant { level: 1.0 }), Err(Error::Config { ref key, .. }) if key == "experiment.beta"));
        assert!(ConvolutionSpec::new(8.0, 0.25, 1.0, Phi::Constant { level: 1.0 }).is_err());
        let g = grid(32, 0.5 / 64.0, 32);
        assert!(stochastic_convolution(&conv_spec(1.0), &g, &mut Zero).is_err());
    }

    #[test]
    fn convolution_linearity() {
        let g = grid(32, 0.5 / 64.0, 64);
        let zero = stochastic_convolution(&conv_spec(0.0), &g, &mut WhiteNoise::new(&g, 1, 0)).unwrap();
        assert!(zero.iter().all(|f| f.linf() == 0.0));
        let z1 = stochastic_convolution(&conv_spec(1.0), &g, &mut WhiteNoise::new(&g, 1, 0)).unwrap();
        let z2 = stochastic_convolution(&conv_spec(2.0), &g, &mut WhiteNoise::new(&g, 1, 0)).unwrap();
        for (a, b) in z1.iter().zip(&z2) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(2.0 * x, *y);
            }
        }
        let slices = crate::noise::sample_stream(&g, 1, 0);
        let r1 = factorization_reconstruct(&conv_spec(1.0), &g, &slices).unwrap();
        let r2 = factorization_reconstruct(&conv_spec(2.0), &g, &slices).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(2.0 * x, *y);
            }
        }
        let zeros = vec![NoiseSlice::zeros(32); 64];
        let rz = factorization_reconstruct(&conv_spec(1.0), &g, &zeros).unwrap();
        assert!(rz.iter().all(|f| f.linf() == 0.0));
    }

    #[test]
    fn sup_path_matches_full_path() {
        let g = grid(16, 0.01, 40);
        let spec = ConvolutionSpec::new(8.0, 0.2, 0.4, Phi::Constant { level: 1.0 }).unwrap();
        let full = stochastic_convolution(&spec, &g, &mut WhiteNoise::new(&g, 4, 0)).unwrap();
        let sups = convolution_sup_path(&[1.0; 16], &g, &mut WhiteNoise::new(&g, 4, 0), &[10, 20, 40]).unwrap();
        for (cp, s) in [10usize, 20, 40].iter().zip(&sups) {
            let expect = full[..=*cp].iter().map(Field::linf).fold(0.0, f64::max);
            assert_eq!(*s, expect);
        }
    }

    #[test]
    fn factorization_tracks_direct_convolution() {
        let g = grid(32, 0.5 / 64.0, 64);
        let (coarse, fine) = factorization_refinement(&conv_spec(1.0), &g, 0, 0).unwrap();
        assert!(coarse.rel_diff < 0.3, "{coarse:?}");
        assert!(fine.rel_diff < 0.3, "{fine:?}");
        assert_eq!(fine.steps, 128);
    }

    #[test]
    fn additive_variance_near_quadrature() {
        let g = grid(16, 0.01, 20);
        let spec = ConvolutionSpec::new(8.0, 0.2, 0.2, Phi::Constant { level: 1.0 }).unwrap();
        let finals: Vec<f64> = (0..4000)
            .map(|r| {
                let z = stochastic_convolution(&spec, &g, &mut WhiteNoise::new(&g, 8, r)).unwrap();
                z[20].values()[5]
            })
            .collect();
        let (var, se) = stats::variance_se(&finals);
        // Σ_{m<n} dt·Σ_k e^{-2k² m dt} / (2π), band-limited to |k| ≤ N/2.
        let n = 16usize;
        let oracle: f64 = (0..20)
            .map(|m| {
                let t = m as f64 * g.dt;
                let s: f64 = (0..n).map(|j| (-2.0 * wavenumber(j, n).powi(2) * t).exp()).sum();
                g.dt * s / std::f64::consts::TAU
            })
            .sum();
        assert!((var - oracle).abs() <= 3.0 * se, "{var} vs {oracle} ± {se}");
    }
}
