//! Configuration files, subcommand dispatch and run manifests.
//!
//! A run reads one TOML file with sections `[grid]`, `[sigma]`, `[drift]`,
//! `[clamp]`, `[thresholds]`, `[ensemble]` and `[experiment]`, applies
//! `--set section.key=value` overrides and then the dedicated flags, and
//! writes its outputs plus a `manifest.json` into
//! `<out>/<subcommand>/`, where `<out>` is `--out`, `$CRITHEAT_OUT` or
//! `critheat-out`.
//!
//! Exit codes: 0 when every verdict passes, 1 when any verdict fails or is
//! inconclusive, 2 on configuration errors.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{growth_check, DriftSpec, SigmaFamily, SigmaKind};
use crate::ensemble::{
    comparison_refinement, doob_bound_check, doubling_finiteness_check, factorization_verdict, gamma_sweep,
    moment_scaling_check, positivity_fractions, quadratic_variation_check, run_ensemble, submartingale_test,
    write_verdicts, Verdict, VerdictClass,
};
use crate::heat_kernel::{
    eval_kernel, kernel_l1_norm, kernel_sup, paper_sup_bound, semigroup_apply, smoothing_bound_check, sup_bound,
    truncation_order, KernelSpec, Normalization, SMOOTHING_CONSTANT,
};
use crate::noise::{covariance_test, sample_stream, write_noise_dump, GridSpec};
use crate::solver::{
    factorization_refinement, write_snapshots, write_trajectory_csv, simulate, ConvolutionSpec, CoupledConfig, Drift,
    Dynamics, InitialData, Phi, SolverConfig,
};
use crate::stopping::{write_event_csv, StopKind, TrackerSet};
use crate::{Error, Field, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const OUT_ENV: &str = "CRITHEAT_OUT";

#[derive(Debug, Parser)]
#[command(name = "critheat", version, about = "Stochastic heat equation experiments with critically growing noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Heat kernel norms, bounds, positivity and semigroup checks.
    VerifyKernel(RunArgs),
    /// White-noise covariance identity.
    VerifyNoise(RunArgs),
    /// One trajectory with stopping times and the doubling ladder.
    Simulate(RunArgs),
    /// Ordering of the coupled (u, v, v₋) system under refinement.
    Couple(RunArgs),
    /// Direct versus factorized stochastic convolution.
    Convolve(RunArgs),
    /// Moment scaling of the stochastic convolution.
    VerifyMoment(RunArgs),
    /// L¹ submartingale, maximal inequality, quadratic variation and doubling checks.
    VerifyL1(RunArgs),
    /// Explosion frequency across noise growth exponents.
    SweepGamma(RunArgs),
    /// Summarize the verdicts found under an output directory.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyKernel(_) => "verify-kernel",
            Command::VerifyNoise(_) => "verify-noise",
            Command::Simulate(_) => "simulate",
            Command::Couple(_) => "couple",
            Command::Convolve(_) => "convolve",
            Command::VerifyMoment(_) => "verify-moment",
            Command::VerifyL1(_) => "verify-l1",
            Command::SweepGamma(_) => "sweep-gamma",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rerun with the configuration embedded in a manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Worker threads; never changes outputs.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set grid.dt=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Output root to scan; defaults to `--out`, `$CRITHEAT_OUT` or `critheat-out`.
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(alias = "N")]
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Takes precedence over `horizon` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n: 64,
            dt: 1e-3,
            horizon: 1.0,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    CriticalPower,
    Power,
    Linear,
    Constant,
    /// `σ ≡ 0`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaSection {
    pub kind: SigmaChoice,
    pub c: f64,
    pub gamma: f64,
}

impl Default for SigmaSection {
    fn default() -> Self {
        Self {
            kind: SigmaChoice::CriticalPower,
            c: 1.0,
            gamma: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftChoice {
    /// `f_ε(u) = max(ε, u)^{-α}`.
    Singular,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub kind: DriftChoice,
    pub alpha: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            kind: DriftChoice::Singular,
            alpha: DriftSpec::DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClampSection {
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
}

impl Default for ClampSection {
    fn default() -> Self {
        Self { epsilon: 0.5, n: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    pub m: f64,
    pub n_levels: Vec<f64>,
    pub n_max: f64,
    /// Track `τ^inf_ε` at the clamp level ε.
    pub floor: bool,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            m: 1000.0,
            n_levels: Vec::new(),
            n_max: 1e6,
            floor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub replicas: usize,
    pub master_seed: u64,
    /// Worker threads; `0` uses the available parallelism. Not echoed, as
    /// it never changes outputs.
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            replicas: 100,
            master_seed: 0,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub stride: usize,
    pub stop_on: Vec<StopKind>,
    pub snapshots: Vec<usize>,
    /// Gate the run on `|σ(u)| ≤ growth_c (1 + |u|^{3/2})`.
    pub claims_critical: bool,
    pub growth_c: f64,
    pub p: f64,
    pub beta: f64,
    pub phi_level: f64,
    pub t_grid: Vec<f64>,
    pub tol_order: f64,
    pub refine: usize,
    /// Step indices for the submartingale test; empty means every stride.
    pub time_grid: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub dump_noise: bool,
    pub initial: InitialData,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            stride: 10,
            stop_on: vec![StopKind::Floor, StopKind::L1],
            snapshots: Vec::new(),
            claims_critical: false,
            growth_c: 1.0,
            p: 8.0,
            beta: 0.2,
            phi_level: 1.0,
            t_grid: vec![0.1, 0.2, 0.4, 0.8],
            tol_order: CoupledConfig::DEFAULT_TOL_ORDER,
            refine: 4,
            time_grid: Vec::new(),
            gamma_grid: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            eps_grid: vec![0.5, 0.25, 0.1, 0.05],
            dump_noise: false,
            initial: InitialData::default(),
        }
    }
}

/// The full configuration with every default resolved.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub sigma: SigmaSection,
    pub drift: DriftSection,
    pub clamp: ClampSection,
    pub thresholds: ThresholdSection,
    pub ensemble: EnsembleSection,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".into() } else { path }, e.into_inner().message().trim().to_string())
        })?;
        let cfg = cfg.resolved()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolved(mut self) -> Result<Self> {
        if self.grid.steps.is_none() {
            let g = GridSpec::with_horizon(self.grid.n, self.grid.dt, self.grid.horizon)?;
            self.grid.steps = Some(g.steps);
        }
        self.grid.horizon = self.grid.dt * self.grid.steps.expect("resolved") as f64;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        let sigma = self.sigma()?;
        self.drift()?;
        if let Some(n) = self.clamp.n {
            if !(n > 0.0) {
                return Err(Error::config("clamp.n", format!("must be positive, got {n}")));
            }
        }
        self.trackers().validate()?;
        if self.experiment.stride == 0 {
            return Err(Error::config("experiment.stride", "must be at least 1"));
        }
        if self.experiment.claims_critical {
            let grid: Vec<f64> = (-1000..=1000).map(|i| i as f64).collect();
            let ok = sigma.is_some_and(|s| growth_check(&s, self.experiment.growth_c, &grid));
            if !ok {
                return Err(Error::config(
                    "sigma",
                    format!(
                        "claims_critical is set but |σ(u)| > {} (1 + |u|^{{3/2}}) somewhere on [-1000, 1000]",
                        self.experiment.growth_c
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.n, self.grid.dt, self.grid.steps.unwrap_or(1))
    }

    pub fn sigma(&self) -> Result<Option<SigmaFamily>> {
        let s = &self.sigma;
        let family = match s.kind {
            SigmaChoice::None => return Ok(None),
            SigmaChoice::CriticalPower => SigmaFamily::critical(s.c),
            SigmaChoice::Power => SigmaFamily::power(s.c, s.gamma),
            SigmaChoice::Linear => SigmaFamily::linear(s.c),
            SigmaChoice::Constant => SigmaFamily::constant(s.c),
        };
        family.validate()?;
        Ok(Some(family))
    }

    pub fn drift_spec(&self) -> Result<DriftSpec> {
        DriftSpec::new(self.drift.alpha, self.clamp.epsilon)
    }

    pub fn drift(&self) -> Result<Drift> {
        match self.drift.kind {
            DriftChoice::None => Ok(Drift::None),
            DriftChoice::Singular => Ok(Drift::Singular(self.drift_spec()?)),
        }
    }

    pub fn trackers(&self) -> TrackerSet {
        TrackerSet {
            epsilon: self.thresholds.floor.then_some(self.clamp.epsilon),
            m: self.thresholds.m.is_finite().then_some(self.thresholds.m),
            n_levels: self.thresholds.n_levels.clone(),
            n_max: self.thresholds.n_max,
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let config = SolverConfig {
            grid: self.grid()?,
            dynamics: Dynamics {
                sigma: self.sigma()?,
                clamp_n: self.clamp.n,
                drift: self.drift()?,
                mirrored: false,
            },
            initial: self.experiment.initial.clone(),
            trackers: self.trackers(),
            stop_on: self.experiment.stop_on.clone(),
            stride: self.experiment.stride,
            snapshots: self.experiment.snapshots.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn coupled_config(&self) -> Result<CoupledConfig> {
        let config = CoupledConfig {
            grid: self.grid()?,
            sigma: self.sigma()?,
            clamp_n: self.clamp.n,
            drift: self.drift_spec()?,
            initial: self.experiment.initial.clone(),
            tol_order: self.experiment.tol_order,
            n_max: self.thresholds.n_max,
            stop_on_floor: self.thresholds.floor,
            stride: self.experiment.stride,
        };
        config.initial_state()?;
        Ok(config)
    }

    pub fn convolution_spec(&self) -> Result<ConvolutionSpec> {
        ConvolutionSpec::new(
            self.experiment.p,
            self.experiment.beta,
            self.grid()?.horizon(),
            Phi::Constant {
                level: self.experiment.phi_level,
            },
        )
    }

    pub fn workers(&self) -> Option<usize> {
        (self.ensemble.workers > 0).then_some(self.ensemble.workers)
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::config(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads a config file (missing file: config error) and applies overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    RunConfig::from_toml_str(&text, overrides)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub master_seed: u64,
    /// Resolved configuration as TOML.
    pub config: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// File name to SHA-256 hex digest, excluding the manifest itself.
    pub outputs: BTreeMap<String, String>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("manifest", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config("manifest", e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Output files of one run, written together with their digests.
#[derive(Debug, Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    fn add(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.insert(name.to_string(), buf);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.add(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.into()))?;
            w.push(b'\n');
            Ok(())
        })
    }

    fn verdicts(&mut self, verdicts: &[Verdict]) -> Result<()> {
        self.add("verdicts.json", |w| write_verdicts(w, verdicts))
    }

    fn write_all(&self, dir: &Path) -> Result<BTreeMap<String, String>> {
        std::fs::create_dir_all(dir)?;
        let mut digests = BTreeMap::new();
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
            digests.insert(name.clone(), sha256_hex(bytes));
        }
        Ok(digests)
    }
}

fn output_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("critheat-out")),
    }
}

fn exit_for(verdicts: &[Verdict]) -> i32 {
    if verdicts.iter().all(Verdict::passed) {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("critheat: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn main_from_env() -> i32 {
    run(std::env::args_os())
}

/// Runs one subcommand and returns its exit code.
pub fn dispatch(command: &Command) -> Result<i32> {
    let args = match command {
        Command::Report(r) => return report(r),
        Command::VerifyKernel(a)
        | Command::VerifyNoise(a)
        | Command::Simulate(a)
        | Command::Couple(a)
        | Command::Convolve(a)
        | Command::VerifyMoment(a)
        | Command::VerifyL1(a)
        | Command::SweepGamma(a) => a,
    };
    let started_unix = unix_now();
    let mut config = match &args.manifest {
        Some(m) => RunConfig::from_toml_str(&RunManifest::read(m)?.config, &args.set)?,
        None => parse_config(args.config.as_deref(), &args.set)?,
    };
    if let Some(seed) = args.seed {
        config.ensemble.master_seed = seed;
    }
    if let Some(r) = args.replicas {
        config.ensemble.replicas = r;
    }
    if let Some(w) = args.workers {
        config.ensemble.workers = w;
    }
    config.validate()?;
    println!("# resolved configuration\n{}", config.to_toml());

    let mut out = Outputs::default();
    out.add("config.toml", |w| {
        w.extend_from_slice(config.to_toml().as_bytes());
        Ok(())
    })?;
    let verdicts = match command {
        Command::VerifyKernel(_) => verify_kernel(&mut out)?,
        Command::VerifyNoise(_) => verify_noise(&config, &mut out)?,
        Command::Simulate(_) => simulate_cmd(&config, &mut out)?,
        Command::Couple(_) => couple(&config, &mut out)?,
        Command::Convolve(_) => convolve(&config, &mut out)?,
        Command::VerifyMoment(_) => verify_moment(&config, &mut out)?,
        Command::VerifyL1(_) => verify_l1(&config, &mut out)?,
        Command::SweepGamma(_) => sweep(&config, &mut out)?,
        Command::Report(_) => unreachable!(),
    };
    out.verdicts(&verdicts)?;
    let code = exit_for(&verdicts);
    for v in &verdicts {
        println!("{:<28} {:<12} statistic={:.6e} threshold={:.6e}", v.name, format!("{:?}", v.class).to_lowercase(), v.statistic, v.threshold);
    }
    let dir = output_root(args.out.as_deref()).join(command.name());
    let outputs = out.write_all(&dir)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: command.name().into(),
        master_seed: config.ensemble.master_seed,
        config: config.to_toml(),
        started_unix,
        finished_unix: unix_now(),
        outputs,
        exit_code: code,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.into()))? + "\n",
    )?;
    println!("wrote {}", dir.display());
    Ok(code)
}

fn check(name: &str, pass: bool, statistic: f64, threshold: f64, tolerance: &str, n: usize, details: serde_json::Value) -> Verdict {
    Verdict {
        name: name.into(),
        class: if pass { VerdictClass::Pass } else { VerdictClass::Fail },
        statistic,
        threshold,
        margin: threshold - statistic,
        tolerance: tolerance.into(),
        sample_size: n,
        details,
    }
}

/// Deterministic heat kernel checks.
pub fn kernel_checks() -> Result<Vec<Verdict>> {
    let paper = KernelSpec::paper();
    let prob = KernelSpec::probabilist();
    let mut out = Vec::new();

    let times = [1e-3, 0.01, 0.1, 1.0, 10.0];
    let mut worst = 0.0f64;
    for &t in &times {
        worst = worst.max((kernel_l1_norm(&paper, t, 4096)? - TAU.sqrt()).abs());
        worst = worst.max((kernel_l1_norm(&prob, t, 4096)? - 1.0).abs());
    }
    out.push(check("kernel_l1_norm", worst <= 1e-6, worst, 1e-6, "absolute", times.len(), serde_json::json!({ "times": times })));

    let log_times: Vec<f64> = (0..50).map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 49.0)).collect();
    let explicit: Vec<f64> = log_times
        .iter()
        .filter(|&&t| kernel_sup(&paper, t).map(|g| g > paper_sup_bound(t)).unwrap_or(true))
        .copied()
        .collect();
    out.push(check(
        "kernel_sup_explicit_bound",
        explicit.is_empty(),
        explicit.len() as f64,
        0.0,
        "G(t,0) <= (2/pi)^(1/2) + t^(-1/2)/2",
        log_times.len(),
        serde_json::json!({ "violating_times": explicit }),
    ));
    let sharp = log_times
        .iter()
        .filter(|&&t| kernel_sup(&paper, t).map(|g| g > sup_bound(t)).unwrap_or(true))
        .count();
    out.push(check(
        "kernel_sup_bound",
        sharp == 0,
        sharp as f64,
        0.0,
        "G(t,0) <= (2 pi)^(-1/2) + (2t)^(-1/2)",
        log_times.len(),
        serde_json::Value::Null,
    ));

    let n = 4096;
    let mut min = f64::INFINITY;
    for &t in &[1e-4, 1e-3, 0.01, 0.1, 1.0] {
        for j in 0..n {
            let x = -PI + j as f64 * TAU / n as f64;
            min = min.min(eval_kernel(&prob, t, x)?);
        }
    }
    out.push(check("kernel_positivity", min >= -1e-10, -min, 1e-10, "min over 4096 points", n, serde_json::Value::Null));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut comp = 0.0f64;
    for _ in 0..8 {
        let f = Field::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let (s, t) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let a = semigroup_apply(s, &semigroup_apply(t, &f)?)?;
        let b = semigroup_apply(s + t, &f)?;
        comp = comp.max(a.max_abs_diff(&b));
    }
    out.push(check("semigroup_composition", comp <= 1e-12, comp, 1e-12, "sup norm", 8, serde_json::Value::Null));

    let mut drift = 0.0f64;
    for &t in &[1e-4, 1e-2, 0.7] {
        let k = truncation_order(t, prob.truncation_tol)?;
        let coarse = KernelSpec::new(Normalization::Probabilist, prob.truncation_tol)?;
        let finer = KernelSpec::new(Normalization::Probabilist, prob.truncation_tol * 1e-3)?;
        let _ = k;
        drift = drift.max((eval_kernel(&coarse, t, 0.3)? - eval_kernel(&finer, t, 0.3)?).abs());
    }
    out.push(check("truncation_self_convergence", drift <= 1e-13, drift, 1e-13, "absolute", 3, serde_json::Value::Null));

    let mut ratio = 0.0f64;
    for &t in &[1e-3, 0.01, 0.1, 1.0] {
        let mut spike = vec![0.0; 256];
        spike[128] = 256.0 / TAU;
        ratio = ratio.max(smoothing_bound_check(t, &Field::new(spike)?)?.1);
    }
    out.push(check("smoothing_bound", ratio <= SMOOTHING_CONSTANT, ratio, SMOOTHING_CONSTANT, "calibrated constant", 4, serde_json::Value::Null));
    Ok(out)
}

fn verify_kernel(out: &mut Outputs) -> Result<Vec<Verdict>> {
    let verdicts = kernel_checks()?;
    out.add("kernel_checks.csv", |w| {
        use std::io::Write;
        writeln!(w, "check,statistic,threshold,pass")?;
        for v in &verdicts {
            writeln!(w, "{},{:.16e},{:.16e},{}", v.name, v.statistic, v.threshold, v.passed())?;
        }
        Ok(())
    })?;
    Ok(verdicts)
}

type Integrand = fn(f64, f64) -> f64;

fn verify_noise(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let grid = config.grid()?;
    let seed = config.ensemble.master_seed;
    let replicas = config.ensemble.replicas;
    let cases: [(&str, Integrand, Integrand); 3] = [
        ("one_one", |_, _| 1.0, |_, _| 1.0),
        ("cos_cos", |_, x| x.cos(), |_, x| x.cos()),
        ("cos_sin", |_, x| x.cos(), |_, x| x.sin()),
    ];
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers().unwrap_or(0))
        .build()
        .map_err(|e| Error::config("ensemble.workers", e.to_string()))?;
    for (name, phi, psi) in cases {
        let rep = pool.install(|| covariance_test(&grid, phi, psi, replicas, seed))?;
        rows.push((name, rep));
        verdicts.push(Verdict {
            name: format!("noise_covariance_{name}"),
            class: if rep.pass { VerdictClass::Pass } else { VerdictClass::Fail },
            statistic: rep.empirical_cov,
            threshold: rep.target,
            margin: 3.0 * rep.std_err - (rep.empirical_cov - rep.target).abs(),
            tolerance: "3 SE".into(),
            sample_size: replicas,
            details: serde_json::json!({ "std_err": rep.std_err, "z": rep.z_score() }),
        });
    }
    out.add("covariance.csv", |w| {
        use std::io::Write;
        writeln!(w, "case,empirical_cov,target,std_err,replicas,pass")?;
        for (name, r) in &rows {
            writeln!(w, "{name},{:.16e},{:.16e},{:.16e},{},{}", r.empirical_cov, r.target, r.std_err, r.replicas, r.pass)?;
        }
        Ok(())
    })?;
    if config.experiment.dump_noise {
        let slices = sample_stream(&grid, seed, 0);
        out.add("noise.bin", |w| write_noise_dump(w, &grid, seed, &slices))?;
    }
    Ok(verdicts)
}

fn simulate_cmd(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let solver = config.solver_config()?;
    let seed = config.ensemble.master_seed;
    let result = simulate(&solver, seed, 0)?;
    out.add("trajectory.csv", |w| write_trajectory_csv(w, &result.samples))?;
    out.add("events.csv", |w| write_event_csv(w, &result.events, &result.doubling))?;
    if !result.snapshots.is_empty() {
        out.add("snapshots.bin", |w| write_snapshots(w, &solver.grid, seed, &result.snapshots))?;
    }
    out.json(
        "summary.json",
        &serde_json::json!({
            "last_index": result.last_index(),
            "terminal": result.terminal,
            "exploded": result.exploded(),
            "sup_l1": result.sup_l1,
            "min_value": result.min_value,
            "final_qv": result.final_state.qv_accum,
            "doubles": result.doubling.doubles(),
        }),
    )?;
    Ok(Vec::new())
}

fn couple(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let coupled = config.coupled_config()?;
    let study = comparison_refinement(
        &coupled,
        config.experiment.refine,
        config.ensemble.replicas,
        config.ensemble.master_seed,
        config.workers(),
    )?;
    out.add("comparison.csv", |w| study.write_csv(w))?;
    Ok(vec![study.verdict])
}

fn convolve(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let spec = config.convolution_spec()?;
    let grid = config.grid()?;
    let (coarse, fine) = factorization_refinement(&spec, &grid, config.ensemble.master_seed, 0)?;
    out.add("convolution.csv", |w| {
        use std::io::Write;
        writeln!(w, "steps,dt,sup_direct,sup_abs_diff,rel_diff")?;
        for r in [&coarse, &fine] {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.16e}", r.steps, r.dt, r.sup_direct, r.sup_abs_diff, r.rel_diff)?;
        }
        Ok(())
    })?;
    Ok(vec![factorization_verdict(&coarse, &fine)])
}

fn verify_moment(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let e = &config.experiment;
    let rep = moment_scaling_check(
        e.p,
        &e.t_grid,
        e.phi_level,
        config.grid.n,
        config.grid.dt,
        config.ensemble.replicas,
        config.ensemble.master_seed,
        config.workers(),
    )?;
    out.add("moments.csv", |w| {
        use std::io::Write;
        writeln!(w, "horizon,steps,moment,std_err,ratio")?;
        for r in &rep.rows {
            writeln!(w, "{:.16e},{},{:.16e},{:.16e},{:.16e}", r.horizon, r.steps, r.moment.mean, r.moment.std_err, r.ratio)?;
        }
        Ok(())
    })?;
    Ok(vec![rep.verdict])
}

fn verify_l1(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let solver = config.solver_config()?;
    let report = run_ensemble(&solver, config.ensemble.replicas, config.ensemble.master_seed, config.workers())?;
    let time_grid: Vec<usize> = if config.experiment.time_grid.is_empty() {
        (0..=solver.grid.steps).step_by(solver.stride).collect()
    } else {
        config.experiment.time_grid.clone()
    };
    let m = config.thresholds.m;
    let mut verdicts = vec![submartingale_test(&report, &time_grid)?];
    if m.is_finite() {
        verdicts.push(doob_bound_check(&report, m, config.clamp.epsilon, config.drift.alpha, solver.grid.horizon())?);
    }
    verdicts.push(quadratic_variation_check(&report, m));
    verdicts.push(doubling_finiteness_check(&report, config.experiment.claims_critical));
    out.add("ensemble.csv", |w| report.write_csv(w))?;
    out.json(
        "aggregates.json",
        &serde_json::json!({
            "aggregates": report.aggregates,
            "positivity": positivity_fractions(&report, &config.experiment.eps_grid),
        }),
    )?;
    Ok(verdicts)
}

fn sweep(config: &RunConfig, out: &mut Outputs) -> Result<Vec<Verdict>> {
    let base = config.solver_config()?;
    let seed = config.ensemble.master_seed;
    let replicas = config.ensemble.replicas;
    let table = gamma_sweep(&config.experiment.gamma_grid, &base, replicas, seed, config.workers())?;
    out.add("gamma_sweep.csv", |w| table.write_csv(w))?;
    let mut critical = base.clone();
    critical.dynamics.sigma = Some(SigmaFamily {
        kind: SigmaKind::CriticalPower,
        c: config.sigma.c,
        gamma: 1.5,
    });
    let report = run_ensemble(&critical, replicas, seed, config.workers())?;
    out.add("critical_ensemble.csv", |w| report.write_csv(w))?;
    Ok(vec![table.verdict, doubling_finiteness_check(&report, false)])
}

fn find_verdict_files(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_verdict_files(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "verdicts.json") {
            found.push(p);
        }
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<i32> {
    let root = args.dir.clone().unwrap_or_else(|| output_root(args.out.as_deref()));
    if !root.is_dir() {
        return Err(Error::config("report", format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    find_verdict_files(&root, &mut files)?;
    let mut rows = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config("report", format!("{}: {e}", f.display())))?;
        let run = f
            .parent()
            .and_then(|p| p.strip_prefix(&root).ok())
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        for v in value.as_array().into_iter().flatten() {
            let name = v["name"].as_str().unwrap_or("?").to_string();
            let class = v["class"].as_str().unwrap_or("fail").to_string();
            rows.push((run.clone(), name, class));
        }
    }
    let mut csv = String::from("run,verifier,class\n");
    for (run, name, class) in &rows {
        println!("{run:<16} {name:<28} {class}");
        csv.push_str(&format!("{run},{name},{class}\n"));
    }
    std::fs::write(root.join("report.csv"), csv)?;
    let ok = !rows.is_empty() && rows.iter().all(|(_, _, c)| c == "pass" || c == "vacuous");
    Ok(if ok { EXIT_PASS } else { EXIT_FAIL })
}
