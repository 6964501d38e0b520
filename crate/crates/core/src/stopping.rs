//! Discrete stopping times on a trajectory and the dyadic doubling ladder.
//!
//! All thresholds are closed and evaluated at grid times only: an event fires
//! at the first index whose observed value meets the threshold.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The per-index quantities the trackers look at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t_index: usize,
    pub min: f64,
    pub l1: f64,
    pub linf: f64,
}

impl Observation {
    pub fn from_values(t_index: usize, values: &[f64]) -> Self {
        let mut min = f64::INFINITY;
        let mut linf = 0.0f64;
        let mut finite = true;
        for &v in values {
            finite &= v.is_finite();
            min = min.min(v);
            linf = linf.max(v.abs());
        }
        let l1 = crate::heat_kernel::l1_norm(values);
        Self {
            t_index,
            min,
            l1,
            linf: if finite { linf } else { f64::INFINITY },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    /// `τ^inf_ε`: `min v ≤ ε`.
    Floor,
    /// `τ^∞_n`: `|v|_∞ ≥ n`.
    Ceiling,
    /// `τ¹_M`: `|v|_{L¹} > M`.
    L1,
    /// Numerical explosion: `|v|_∞ ≥ n_max` or a non-finite value.
    Explosion,
}

impl StopKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopKind::Floor => "floor",
            StopKind::Ceiling => "ceiling",
            StopKind::L1 => "l1",
            StopKind::Explosion => "explosion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub kind: StopKind,
    pub threshold: f64,
    pub t_index: usize,
    pub trigger_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSet {
    /// Floor level ε; `None` disables `τ^inf_ε`.
    pub epsilon: Option<f64>,
    /// L¹ ceiling M; `None` disables `τ¹_M`.
    pub m: Option<f64>,
    pub n_levels: Vec<f64>,
    pub n_max: f64,
}

impl Default for TrackerSet {
    fn default() -> Self {
        Self {
            epsilon: None,
            m: None,
            n_levels: Vec::new(),
            n_max: 1e6,
        }
    }
}

impl TrackerSet {
    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::config("clamp.epsilon", format!("must lie in (0, 1), got {eps}")));
            }
        }
        if let Some(m) = self.m {
            if !(m > 0.0) {
                return Err(Error::config("thresholds.m", format!("must be positive, got {m}")));
            }
        }
        if !(self.n_max > 1.0) {
            return Err(Error::config("thresholds.n_max", format!("must exceed 1, got {}", self.n_max)));
        }
        for &n in &self.n_levels {
            if !(n > 1.0 && n <= self.n_max) {
                return Err(Error::config(
                    "thresholds.n_levels",
                    format!("level {n} must lie in (1, n_max = {}]", self.n_max),
                ));
            }
        }
        Ok(())
    }
}

/// Stateful evaluation of a [`TrackerSet`] along one trajectory.
#[derive(Debug, Clone)]
pub struct Trackers {
    set: TrackerSet,
    floor_fired: bool,
    l1_fired: bool,
    explosion_fired: bool,
    levels_fired: Vec<bool>,
    last_index: Option<usize>,
    events: Vec<StopEvent>,
}

impl Trackers {
    pub fn new(set: TrackerSet) -> Result<Self> {
        set.validate()?;
        let levels_fired = vec![false; set.n_levels.len()];
        Ok(Self {
            set,
            floor_fired: false,
            l1_fired: false,
            explosion_fired: false,
            levels_fired,
            last_index: None,
            events: Vec::new(),
        })
    }

    pub fn set(&self) -> &TrackerSet {
        &self.set
    }

    /// Feeds the observation at the next time index and returns the events
    /// fired there. Indices must be consecutive.
    pub fn update(&mut self, obs: &Observation) -> Result<Vec<StopEvent>> {
        if let Some(last) = self.last_index {
            if obs.t_index != last + 1 {
                return Err(Error::Usage(format!(
                    "tracker expected index {}, got {}",
                    last + 1,
                    obs.t_index
                )));
            }
        }
        self.last_index = Some(obs.t_index);
        let mut fired = Vec::new();
        let mut fire = |kind, threshold, trigger_value| {
            fired.push(StopEvent {
                kind,
                threshold,
                t_index: obs.t_index,
                trigger_value,
            })
        };
        if let Some(eps) = self.set.epsilon {
            if !self.floor_fired && obs.min <= eps {
                self.floor_fired = true;
                fire(StopKind::Floor, eps, obs.min);
            }
        }
        for (n, done) in self.set.n_levels.iter().zip(self.levels_fired.iter_mut()) {
            if !*done && obs.linf >= *n {
                *done = true;
                fire(StopKind::Ceiling, *n, obs.linf);
            }
        }
        if let Some(m) = self.set.m {
            if !self.l1_fired && (obs.l1 > m || obs.l1.is_nan()) {
                self.l1_fired = true;
                fire(StopKind::L1, m, obs.l1);
            }
        }
        if !self.explosion_fired && !(obs.linf < self.set.n_max) {
            self.explosion_fired = true;
            fire(StopKind::Explosion, self.set.n_max, obs.linf);
        }
        self.events.extend_from_slice(&fired);
        Ok(fired)
    }

    pub fn events(&self) -> &[StopEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<StopEvent> {
        self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoublingKind {
    /// `ρ₀`: first index at which a dyadic level `2^m`, `m ≥ 1`, is reached.
    Start,
    Double,
    Halve,
    Sentinel,
}

impl DoublingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DoublingKind::Start => "start",
            DoublingKind::Double => "double",
            DoublingKind::Halve => "halve",
            DoublingKind::Sentinel => "sentinel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoublingEntry {
    pub t_index: usize,
    /// Exponent `m` of the dyadic level `2^m`.
    pub level: u32,
    pub kind: DoublingKind,
}

/// The times `ρ_0 < ρ_1 < …` at which `|v|_∞` moves to an adjacent dyadic
/// level. From level 1 only the upward exit is tracked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoublingLog {
    entries: Vec<DoublingEntry>,
    finished: bool,
}

impl DoublingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[DoublingEntry] {
        &self.entries
    }

    pub fn rho_times(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.t_index).collect()
    }

    pub fn levels(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.level).collect()
    }

    pub fn current_level(&self) -> Option<u32> {
        self.entries.last().map(|e| e.level)
    }

    pub fn doubles(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == DoublingKind::Double)
            .count()
    }

    /// Advances the ladder with `|v(t_index)|_∞ = linf`. At most one level
    /// change is recorded per index.
    pub fn update(&mut self, t_index: usize, linf: f64) {
        if self.finished || !linf.is_finite() {
            return;
        }
        match self.current_level() {
            None => {
                if linf >= 2.0 {
                    let level = linf.log2().floor().max(1.0) as u32;
                    self.entries.push(DoublingEntry {
                        t_index,
                        level,
                        kind: DoublingKind::Start,
                    });
                }
            }
            Some(m) => {
                if linf >= 2f64.powi(m as i32 + 1) {
                    self.entries.push(DoublingEntry {
                        t_index,
                        level: m + 1,
                        kind: DoublingKind::Double,
                    });
                } else if m > 1 && linf <= 2f64.powi(m as i32 - 1) {
                    self.entries.push(DoublingEntry {
                        t_index,
                        level: m - 1,
                        kind: DoublingKind::Halve,
                    });
                }
            }
        }
    }

    /// Closes the log at the final index. Later updates are ignored.
    pub fn finish(&mut self, t_index: usize) {
        if self.finished {
            return;
        }
        self.finished = true;
        let level = self.current_level().unwrap_or(0);
        self.entries.push(DoublingEntry {
            t_index,
            level,
            kind: DoublingKind::Sentinel,
        });
    }
}

pub fn doubling_update(log: &mut DoublingLog, obs: &Observation) {
    log.update(obs.t_index, obs.linf);
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoublingStats {
    /// Number of doublings out of level `m`, keyed by `m`.
    pub doubles_by_level: BTreeMap<u32, usize>,
    pub total_doubles: usize,
    pub max_level: u32,
    pub logs: usize,
}

pub fn doubling_statistics<'a>(logs: impl IntoIterator<Item = &'a DoublingLog>) -> DoublingStats {
    let mut stats = DoublingStats::default();
    for log in logs {
        stats.logs += 1;
        for e in log.entries() {
            stats.max_level = stats.max_level.max(e.level);
            if e.kind == DoublingKind::Double {
                *stats.doubles_by_level.entry(e.level - 1).or_default() += 1;
                stats.total_doubles += 1;
            }
        }
    }
    stats
}

/// Event log CSV: `kind,threshold,level,t_index,trigger_value`. Tracker
/// events leave `level` empty; ladder entries leave `threshold` as `2^level`
/// and `trigger_value` empty.
pub fn write_event_csv(w: &mut impl Write, events: &[StopEvent], log: &DoublingLog) -> Result<()> {
    writeln!(w, "kind,threshold,level,t_index,trigger_value")?;
    for e in events {
        writeln!(
            w,
            "{},{:.16e},,{},{:.16e}",
            e.kind.as_str(),
            e.threshold,
            e.t_index,
            e.trigger_value
        )?;
    }
    for e in log.entries() {
        writeln!(
            w,
            "{},{:.16e},{},{},",
            e.kind.as_str(),
            2f64.powi(e.level as i32),
            e.level,
            e.t_index
        )?;
    }
    Ok(())
}
