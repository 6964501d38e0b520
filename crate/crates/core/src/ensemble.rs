//! Parallel replica runs and the statistical verifiers built on them.
//!
//! Replica `r` always uses noise stream `r` of the master seed, and results
//! are gathered in replica order, so every report is a pure function of
//! `(config, master_seed, replicas)` whatever the worker count.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{SigmaFamily, SigmaKind};
use crate::noise::{GridSpec, WhiteNoise};
use crate::solver::{
    convolution_sup_path, simulate, simulate_coupled_refined, ComparisonReport, CoupledConfig, FactorizationReport,
    SimulationResult, SolverConfig,
};
use crate::stats::{mean_se, wilson_interval, MeanEstimate};
use crate::stopping::{doubling_statistics, DoublingStats, StopKind};
use crate::{Error, Result};

/// Standard errors of slack in mean comparisons, and the `z` of binomial
/// intervals.
pub const Z: f64 = 3.0;

/// Fewest replicas a mean-based verifier accepts.
pub const MIN_REPLICAS: usize = 100;

/// Runs `f(r)` for `r in 0..replicas` on a pool of `workers` threads
/// (`None` or `0`: available parallelism) and returns results in order.
pub fn run_replicas<T, F>(replicas: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if replicas < 1 {
        return Err(Error::config("ensemble.replicas", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("ensemble.workers", e.to_string()))?;
    pool.install(|| (0..replicas as u64).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u64,
    pub final_l1: f64,
    pub final_linf: f64,
    pub final_qv: f64,
    pub sup_l1: f64,
    pub min_value: f64,
    pub last_index: usize,
    pub exploded: bool,
    pub terminal: Option<StopKind>,
    pub events: usize,
    pub doubles: usize,
}

impl ReplicaSummary {
    pub fn of(replica: u64, r: &SimulationResult) -> Self {
        Self {
            replica,
            final_l1: r.final_state.l1,
            final_linf: r.final_state.linf,
            final_qv: r.final_state.qv_accum,
            sup_l1: r.sup_l1,
            min_value: r.min_value,
            last_index: r.last_index(),
            exploded: r.exploded(),
            terminal: r.terminal.map(|e| e.kind),
            events: r.events.len(),
            doubles: r.doubling.doubles(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub replicas: usize,
    pub final_l1: MeanEstimate,
    pub final_linf: MeanEstimate,
    pub final_qv: MeanEstimate,
    pub explosions: usize,
    pub explosion_rate: f64,
    pub explosion_ci: (f64, f64),
}

impl Aggregates {
    pub fn from_summaries(s: &[ReplicaSummary]) -> Self {
        let col = |f: fn(&ReplicaSummary) -> f64| mean_se(&s.iter().map(f).collect::<Vec<_>>());
        let explosions = s.iter().filter(|r| r.exploded).count();
        Self {
            replicas: s.len(),
            final_l1: col(|r| r.final_l1),
            final_linf: col(|r| r.final_linf),
            final_qv: col(|r| r.final_qv),
            explosions,
            explosion_rate: explosions as f64 / s.len().max(1) as f64,
            explosion_ci: wilson_interval(explosions, s.len(), Z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub master_seed: u64,
    pub config: SolverConfig,
    pub results: Vec<SimulationResult>,
    pub summaries: Vec<ReplicaSummary>,
    pub aggregates: Aggregates,
}

impl EnsembleReport {
    pub fn replicas(&self) -> usize {
        self.results.len()
    }

    /// Ensemble CSV, one row per replica.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "replica,seed,final_l1,final_linf,final_qv,sup_l1,min_value,last_index,exploded,terminal,events,doubles"
        )?;
        for s in &self.summaries {
            writeln!(
                w,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
                s.replica,
                self.master_seed,
                s.final_l1,
                s.final_linf,
                s.final_qv,
                s.sup_l1,
                s.min_value,
                s.last_index,
                s.exploded,
                s.terminal.map_or("", |k| k.as_str()),
                s.events,
                s.doubles
            )?;
        }
        Ok(())
    }
}

pub fn run_ensemble(config: &SolverConfig, replicas: usize, master_seed: u64, workers: Option<usize>) -> Result<EnsembleReport> {
    config.validate()?;
    let results = run_replicas(replicas, workers, |r| simulate(config, master_seed, r))?;
    let summaries: Vec<ReplicaSummary> = results
        .iter()
        .enumerate()
        .map(|(r, res)| ReplicaSummary::of(r as u64, res))
        .collect();
    let aggregates = Aggregates::from_summaries(&summaries);
    Ok(EnsembleReport {
        master_seed,
        config: config.clone(),
        results,
        summaries,
        aggregates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictClass {
    Pass,
    Fail,
    Inconclusive,
    /// The bound under test is trivial; counts as a pass.
    Vacuous,
}

impl VerdictClass {
    pub fn is_success(self) -> bool {
        matches!(self, VerdictClass::Pass | VerdictClass::Vacuous)
    }

    fn from_bool(pass: bool) -> Self {
        if pass {
            VerdictClass::Pass
        } else {
            VerdictClass::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub class: VerdictClass,
    #[serde(deserialize_with = "null_as_nan")]
    pub statistic: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub threshold: f64,
    /// Distance to failure; nonnegative for a pass.
    #[serde(deserialize_with = "null_as_nan")]
    pub margin: f64,
    pub tolerance: String,
    pub sample_size: usize,
    pub details: serde_json::Value,
}

/// JSON writes non-finite numbers as `null`; read them back as NaN.
fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.class.is_success()
    }
}

fn inconclusive(name: &str, tolerance: &str, sample_size: usize) -> Verdict {
    Verdict {
        name: name.into(),
        class: VerdictClass::Inconclusive,
        statistic: f64::NAN,
        threshold: f64::NAN,
        margin: f64::NAN,
        tolerance: tolerance.into(),
        sample_size,
        details: serde_json::json!({ "reason": format!("needs at least {MIN_REPLICAS} replicas") }),
    }
}

/// Mean of the stopped L¹ process `I(t)` at each index of `time_grid` must
/// not decrease beyond 3 standard errors of the paired increments between
/// consecutive grid times. Grid times must lie on the sampling stride.
pub fn submartingale_test(report: &EnsembleReport, time_grid: &[usize]) -> Result<Verdict> {
    const NAME: &str = "l1_submartingale";
    const TOL: &str = "3 SE of paired increments";
    let stride = report.config.stride;
    if time_grid.len() < 2 || time_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("experiment.time_grid", "needs at least two increasing times"));
    }
    if let Some(t) = time_grid.iter().find(|&&t| t % stride != 0 && t < report.config.grid.steps) {
        return Err(Error::config(
            "experiment.time_grid",
            format!("time index {t} is not a multiple of the stride {stride}"),
        ));
    }
    if report.replicas() < MIN_REPLICAS {
        return Ok(inconclusive(NAME, TOL, report.replicas()));
    }
    let at = |t: usize| -> Vec<f64> { report.results.iter().map(|r| r.sample_at(t).l1).collect() };
    let mut rows = Vec::new();
    let mut margin = f64::INFINITY;
    let mut worst_step = f64::INFINITY;
    let mut prev = at(time_grid[0]);
    for &t in &time_grid[1..] {
        let cur = at(t);
        let diffs: Vec<f64> = cur.iter().zip(&prev).map(|(b, a)| b - a).collect();
        let d = mean_se(&diffs);
        let level = mean_se(&cur).mean.abs().max(1.0);
        let slack = Z * d.std_err + 64.0 * f64::EPSILON * level;
        margin = margin.min(d.mean + slack);
        worst_step = worst_step.min(d.mean);
        rows.push(serde_json::json!({
            "t_index": t,
            "mean": mean_se(&cur).mean,
            "std_err": mean_se(&cur).std_err,
            "increment": d.mean,
            "increment_se": d.std_err,
        }));
        prev = cur;
    }
    Ok(Verdict {
        name: NAME.into(),
        class: VerdictClass::from_bool(margin >= 0.0),
        statistic: worst_step,
        threshold: 0.0,
        margin,
        tolerance: TOL.into(),
        sample_size: report.replicas(),
        details: serde_json::json!({ "times": rows, "initial_mean": mean_se(&at(time_grid[0])).mean }),
    })
}

/// Empirical `P(sup_t I(t) > M)` against `(|v(0)|_{L¹} + 2πTε^{−α})/M`. Passes
/// when the lower Wilson bound does not exceed the bound.
pub fn doob_bound_check(report: &EnsembleReport, m: f64, epsilon: f64, alpha: f64, horizon: f64) -> Result<Verdict> {
    const TOL: &str = "Wilson interval, z = 3";
    if !(m > 0.0) {
        return Err(Error::config("thresholds.m", format!("must be positive, got {m}")));
    }
    let initial = report.results[0].samples[0].l1;
    let bound = (initial + TAU * horizon * epsilon.powf(-alpha)) / m;
    let n = report.replicas();
    let hits = report.results.iter().filter(|r| r.sup_l1 > m).count();
    let freq = hits as f64 / n as f64;
    let (lo, hi) = wilson_interval(hits, n, Z);
    let class = if bound >= 1.0 {
        VerdictClass::Vacuous
    } else {
        VerdictClass::from_bool(lo <= bound)
    };
    Ok(Verdict {
        name: "doob_bound".into(),
        class,
        statistic: freq,
        threshold: bound,
        margin: bound - lo,
        tolerance: TOL.into(),
        sample_size: n,
        details: serde_json::json!({ "hits": hits, "ci": [lo, hi], "initial_l1": initial, "m": m }),
    })
}

/// Mean quadratic variation at the end of each (stopped) run plus 3 SE
/// against `M²`; inconclusive below [`MIN_REPLICAS`]. `m = ∞` disables the L¹ stop and passes for any finite
/// accumulation.
pub fn quadratic_variation_check(report: &EnsembleReport, m: f64) -> Verdict {
    if report.replicas() < MIN_REPLICAS {
        return inconclusive("quadratic_variation", "mean + 3 SE", report.replicas());
    }
    let qv: Vec<f64> = report.results.iter().map(|r| r.final_state.qv_accum).collect();
    let est = mean_se(&qv);
    let upper = est.mean + Z * est.std_err;
    let threshold = m * m;
    Verdict {
        name: "quadratic_variation".into(),
        class: VerdictClass::from_bool(upper <= threshold),
        statistic: est.mean,
        threshold,
        margin: threshold - upper,
        tolerance: "mean + 3 SE".into(),
        sample_size: qv.len(),
        details: serde_json::json!({ "std_err": est.std_err, "max": qv.iter().copied().fold(0.0, f64::max) }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub horizon: f64,
    pub steps: usize,
    pub moment: MeanEstimate,
    /// `m(T) / (c·L^p·T^{p/4−1/2})`, to be at most 2.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub level: f64,
    pub fitted_c: f64,
    pub rows: Vec<MomentRow>,
    pub verdict: Verdict,
}

/// Bounded-ratio test of `E sup_{t≤T,x} |Z^φ|^p ≤ C L^p T^{p/4−1/2}` for
/// `φ ≡ L`: `c` is fitted on the two smallest horizons and every larger
/// horizon must satisfy `m(T) ≤ 2c L^p T^{p/4−1/2}`. All horizons share one
/// noise path per replica.
#[allow(clippy::too_many_arguments)]
pub fn moment_scaling_check(
    p: f64,
    t_grid: &[f64],
    level: f64,
    n: usize,
    dt: f64,
    replicas: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<MomentReport> {
    if !(p > 6.0) {
        return Err(Error::config("experiment.p", format!("must exceed 6, got {p}")));
    }
    if t_grid.len() < 4 {
        return Err(Error::config("experiment.t_grid", format!("needs at least 4 horizons, got {}", t_grid.len())));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) || !(t_grid[0] > 0.0) || t_grid[t_grid.len() - 1] > 1.0 {
        return Err(Error::config("experiment.t_grid", "horizons must increase within (0, 1]"));
    }
    let checkpoints: Vec<usize> = t_grid.iter().map(|t| (t / dt).round() as usize).collect();
    if checkpoints[0] == 0 {
        return Err(Error::config("experiment.t_grid", "smallest horizon is shorter than dt"));
    }
    let grid = GridSpec::new(n, dt, *checkpoints.last().expect("non-empty"))?;
    let phi = vec![level; n];
    let sups = run_replicas(replicas, workers, |r| {
        let mut noise = WhiteNoise::new(&grid, master_seed, r);
        convolution_sup_path(&phi, &grid, &mut noise, &checkpoints)
    })?;
    let exponent = p / 4.0 - 0.5;
    let moments: Vec<MeanEstimate> = (0..t_grid.len())
        .map(|i| mean_se(&sups.iter().map(|s| s[i].powf(p)).collect::<Vec<_>>()))
        .collect();
    let scale = |t: f64| level.abs().powf(p) * t.powf(exponent);
    let fitted_c = (0..2)
        .map(|i| {
            let s = scale(t_grid[i]);
            if s > 0.0 {
                moments[i].mean / s
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let rows: Vec<MomentRow> = t_grid
        .iter()
        .zip(&checkpoints)
        .zip(&moments)
        .map(|((&t, &steps), m)| {
            let denom = fitted_c * scale(t);
            MomentRow {
                horizon: t,
                steps,
                moment: *m,
                ratio: if denom > 0.0 { m.mean / denom } else { 0.0 },
            }
        })
        .collect();
    let worst = rows[2..].iter().map(|r| r.ratio).fold(0.0, f64::max);
    let verdict = Verdict {
        name: "moment_scaling".into(),
        class: VerdictClass::from_bool(worst <= 2.0),
        statistic: worst,
        threshold: 2.0,
        margin: 2.0 - worst,
        tolerance: "factor 2 over constant fitted on the two smallest horizons".into(),
        sample_size: replicas,
        details: serde_json::json!({ "fitted_c": fitted_c, "exponent": exponent, "n": n, "dt": dt }),
    };
    Ok(MomentReport {
        p,
        level,
        fitted_c,
        rows,
        verdict,
    })
}

/// Per-level doubling counts must not increase with the level over levels
/// holding at least 10 events. When `critical`, no replica may reach the
/// explosion ceiling before its floor or L¹ stop.
pub fn doubling_finiteness_check(report: &EnsembleReport, critical: bool) -> Verdict {
    let stats: DoublingStats = doubling_statistics(report.results.iter().map(|r| &r.doubling));
    let counted: Vec<(u32, usize)> = stats
        .doubles_by_level
        .iter()
        .filter(|(_, &c)| c >= 10)
        .map(|(&l, &c)| (l, c))
        .collect();
    let increases = counted.windows(2).filter(|w| w[1].1 > w[0].1).count();
    let early_explosions = report
        .results
        .iter()
        .filter(|r| {
            let Some(ex) = r.events.iter().find(|e| e.kind == StopKind::Explosion) else {
                return false;
            };
            !r.events
                .iter()
                .any(|e| matches!(e.kind, StopKind::Floor | StopKind::L1) && e.t_index <= ex.t_index)
        })
        .count();
    let violations = increases + if critical { early_explosions } else { 0 };
    let per_replica: Vec<usize> = report.results.iter().map(|r| r.doubling.doubles()).collect();
    Verdict {
        name: "doubling_finiteness".into(),
        class: VerdictClass::from_bool(violations == 0),
        statistic: violations as f64,
        threshold: 0.0,
        margin: -(violations as f64),
        tolerance: "nonincreasing counts on levels with >= 10 events".into(),
        sample_size: report.replicas(),
        details: serde_json::json!({
            "doubles_by_level": stats.doubles_by_level,
            "max_level": stats.max_level,
            "total_doubles": stats.total_doubles,
            "level_increases": increases,
            "early_explosions": early_explosions,
            "critical": critical,
            "max_per_replica": per_replica.iter().copied().max().unwrap_or(0),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub explosions: usize,
    pub replicas: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub n: usize,
    pub dt: f64,
    pub n_max: f64,
    pub rows: Vec<GammaRow>,
    pub verdict: Verdict,
}

impl GammaSweep {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "gamma,explosions,replicas,frequency,ci_low,ci_high,n,dt,n_max")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                r.gamma, r.explosions, r.replicas, r.frequency, r.ci_low, r.ci_high, self.n, self.dt, self.n_max
            )?;
        }
        Ok(())
    }
}

/// Explosion frequency before the horizon for `σ(u) = c(1 + |u|^γ)` over an
/// ascending γ grid, with the same seeds for every γ. The verdict passes
/// when no later frequency lies entirely below an earlier one (disjoint
/// Wilson intervals).
pub fn gamma_sweep(gamma_grid: &[f64], base: &SolverConfig, replicas: usize, master_seed: u64, workers: Option<usize>) -> Result<GammaSweep> {
    if gamma_grid.is_empty() || gamma_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("experiment.gamma_grid", "must be non-empty and ascending"));
    }
    let c = base.dynamics.sigma.map_or(1.0, |s| s.c);
    let mut rows = Vec::with_capacity(gamma_grid.len());
    for &gamma in gamma_grid {
        let mut config = base.clone();
        config.dynamics.sigma = Some(SigmaFamily {
            kind: SigmaKind::Power,
            c,
            gamma,
        });
        let report = run_ensemble(&config, replicas, master_seed, workers)?;
        let explosions = report.aggregates.explosions;
        let (ci_low, ci_high) = report.aggregates.explosion_ci;
        rows.push(GammaRow {
            gamma,
            explosions,
            replicas,
            frequency: report.aggregates.explosion_rate,
            ci_low,
            ci_high,
        });
    }
    let mut inversions = 0;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            if b.ci_high < a.ci_low {
                inversions += 1;
            }
        }
    }
    let verdict = Verdict {
        name: "gamma_sweep_monotone".into(),
        class: VerdictClass::from_bool(inversions == 0),
        statistic: inversions as f64,
        threshold: 0.0,
        margin: -(inversions as f64),
        tolerance: "Wilson intervals, z = 3".into(),
        sample_size: replicas,
        details: serde_json::json!({
            "frequencies": rows.iter().map(|r| (r.gamma, r.frequency)).collect::<Vec<_>>(),
            "n": base.grid.n,
            "dt": base.grid.dt,
            "n_max": base.trackers.n_max,
        }),
    };
    Ok(GammaSweep {
        n: base.grid.n,
        dt: base.grid.dt,
        n_max: base.trackers.n_max,
        rows,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonLevel {
    pub steps: usize,
    pub dt: f64,
    /// Alive `(replica, sample time)` pairs.
    pub pairs: usize,
    pub violations: usize,
    pub rate: f64,
    pub replicas_violating: usize,
    pub max_violation: f64,
}

impl ComparisonLevel {
    fn from_reports<'a>(grid: &GridSpec, reports: impl Iterator<Item = &'a ComparisonReport>) -> Self {
        let mut level = Self {
            steps: grid.steps,
            dt: grid.dt,
            pairs: 0,
            violations: 0,
            rate: 0.0,
            replicas_violating: 0,
            max_violation: 0.0,
        };
        for r in reports {
            level.pairs += r.margins.len();
            level.violations += r.margins.iter().filter(|(_, m)| *m < -r.tol_order).count();
            if r.violating > 0 {
                level.replicas_violating += 1;
            }
            level.max_violation = level.max_violation.max(r.max_violation);
        }
        if level.pairs > 0 {
            level.rate = level.violations as f64 / level.pairs as f64;
        }
        level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStudy {
    pub factor: usize,
    pub coarse: ComparisonLevel,
    pub fine: ComparisonLevel,
    pub replicas: Vec<(ComparisonReport, ComparisonReport)>,
    pub verdict: Verdict,
}

impl ComparisonStudy {
    /// One row per replica and level.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "replica,level,checked,violating,max_violation,sampled,sampled_violating,stopped_at")?;
        for (r, (c, f)) in self.replicas.iter().enumerate() {
            for (name, rep) in [("coarse", c), ("fine", f)] {
                writeln!(
                    w,
                    "{},{},{},{},{:.16e},{},{},{}",
                    r,
                    name,
                    rep.checked,
                    rep.violating,
                    rep.max_violation,
                    rep.margins.len(),
                    rep.margins.iter().filter(|(_, m)| *m < -rep.tol_order).count(),
                    rep.stopped_at.map_or(String::new(), |i| i.to_string())
                )?;
            }
        }
        Ok(())
    }
}

/// Ordering violation rate of the coupled `(u, v, v₋)` system at `config`
/// and on a grid refined `factor` times with matched noise. Rates count
/// alive `(replica, coarse sample time)` pairs with margin below
/// `−tol_order`. Passes when the refined rate is lower, or both are zero.
pub fn comparison_refinement(
    config: &CoupledConfig,
    factor: usize,
    replicas: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<ComparisonStudy> {
    if factor < 2 {
        return Err(Error::config("experiment.refine", format!("must be at least 2, got {factor}")));
    }
    let runs = run_replicas(replicas, workers, |r| {
        let (c, f) = simulate_coupled_refined(config, factor, master_seed, r)?;
        Ok((c.report, f.report))
    })?;
    let coarse = ComparisonLevel::from_reports(&config.grid, runs.iter().map(|p| &p.0));
    let fine = ComparisonLevel::from_reports(&config.grid.refined(factor), runs.iter().map(|p| &p.1));
    let pass = fine.rate < coarse.rate || (coarse.rate == 0.0 && fine.rate == 0.0);
    let verdict = Verdict {
        name: "comparison_refinement".into(),
        class: VerdictClass::from_bool(pass),
        statistic: fine.rate,
        threshold: coarse.rate,
        margin: coarse.rate - fine.rate,
        tolerance: format!("margin below -{:e}", config.tol_order),
        sample_size: replicas,
        details: serde_json::json!({ "coarse": coarse, "fine": fine, "factor": factor }),
    };
    Ok(ComparisonStudy {
        factor,
        coarse,
        fine,
        replicas: runs,
        verdict,
    })
}

/// Largest relative difference allowed at the finer level.
pub const FACTORIZATION_TOL: f64 = 0.05;

/// Direct versus factorized convolution at `dt` and `dt/2`: the relative sup
/// difference must at least halve and end below [`FACTORIZATION_TOL`].
pub fn factorization_verdict(coarse: &FactorizationReport, fine: &FactorizationReport) -> Verdict {
    let reduction = if fine.rel_diff > 0.0 {
        coarse.rel_diff / fine.rel_diff
    } else {
        f64::INFINITY
    };
    let pass = reduction >= 2.0 && fine.rel_diff <= FACTORIZATION_TOL;
    Verdict {
        name: "factorization_refinement".into(),
        class: VerdictClass::from_bool(pass),
        statistic: fine.rel_diff,
        threshold: FACTORIZATION_TOL,
        margin: (FACTORIZATION_TOL - fine.rel_diff).min(reduction - 2.0),
        tolerance: "reduction >= 2 and relative sup difference <= 0.05".into(),
        sample_size: 1,
        details: serde_json::json!({ "coarse": coarse, "fine": fine, "reduction": reduction }),
    }
}

/// Fraction of runs whose minimum went to or below each ε, keyed by ε.
pub fn positivity_fractions(report: &EnsembleReport, eps_grid: &[f64]) -> BTreeMap<String, f64> {
    let n = report.replicas() as f64;
    eps_grid
        .iter()
        .map(|&eps| {
            let below = report.results.iter().filter(|r| r.min_value <= eps).count();
            (format!("{eps}"), below as f64 / n)
        })
        .collect()
}

/// Writes verdicts as a pretty JSON array.
pub fn write_verdicts(w: &mut impl Write, verdicts: &[Verdict]) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, verdicts).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    Ok(())
}
