//! One trajectory of the critical equation with stopping times and the
//! doubling ladder.

use critheat::coefficients::{DriftSpec, SigmaFamily};
use critheat::solver::{simulate, Drift, Dynamics, InitialData, SolverConfig};
use critheat::stopping::{StopKind, TrackerSet};
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let config = SolverConfig {
        initial: InitialData::Cosine { mean: 2.0, amplitude: 1.0, mode: 1 },
        trackers: TrackerSet {
            epsilon: Some(0.1),
            m: Some(100.0),
            n_levels: vec![4.0, 8.0, 16.0],
            ..TrackerSet::default()
        },
        stop_on: vec![StopKind::Floor, StopKind::L1],
        stride: 50,
        ..SolverConfig::new(
            GridSpec::with_horizon(64, 1e-4, 0.2)?,
            Dynamics {
                sigma: Some(SigmaFamily::critical(0.5)),
                drift: Drift::Singular(DriftSpec::new(4.0, 0.1)?),
                ..Dynamics::heat()
            },
        )
    };
    let run = simulate(&config, 3, 0)?;
    for s in &run.samples {
        println!("t {:.4}  |v|_1 {:>9.4}  |v|_inf {:>8.4}  qv {:>9.4}", s.t, s.l1, s.linf, s.qv_accum);
    }
    for e in &run.events {
        println!("{} at step {} (threshold {}, value {:.4})", e.kind.as_str(), e.t_index, e.threshold, e.trigger_value);
    }
    let ladder: Vec<String> = run
        .doubling
        .entries()
        .iter()
        .map(|e| format!("{}@{}:{}", e.kind.as_str(), e.t_index, e.level))
        .collect();
    println!("doubling ladder: {}", ladder.join(" "));
    Ok(())
}
