//! Stopped L¹ mass of the localized process across an ensemble, with the
//! maximal inequality and the quadratic-variation bound.

use critheat::coefficients::{DriftSpec, SigmaFamily};
use critheat::ensemble::{doob_bound_check, quadratic_variation_check, run_ensemble, submartingale_test};
use critheat::solver::{Drift, Dynamics, SolverConfig};
use critheat::stopping::{StopKind, TrackerSet};
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let (eps, m) = (0.1, 50.0);
    let config = SolverConfig {
        trackers: TrackerSet { epsilon: Some(eps), m: Some(m), ..TrackerSet::default() },
        stop_on: vec![StopKind::Floor, StopKind::L1],
        stride: 20,
        ..SolverConfig::new(
            GridSpec::with_horizon(64, 1e-3, 0.4)?,
            Dynamics {
                sigma: Some(SigmaFamily::critical(1.0)),
                drift: Drift::Singular(DriftSpec::new(4.0, eps)?),
                ..Dynamics::heat()
            },
        )
    };
    let report = run_ensemble(&config, 400, 2, None)?;
    let times: Vec<usize> = (0..=config.grid.steps).step_by(config.stride).collect();
    for v in [
        submartingale_test(&report, &times)?,
        doob_bound_check(&report, m, eps, 4.0, config.grid.horizon())?,
        quadratic_variation_check(&report, m),
    ] {
        println!("{:<20} {:?}  statistic {:.4}  threshold {:.4}", v.name, v.class, v.statistic, v.threshold);
    }
    Ok(())
}
