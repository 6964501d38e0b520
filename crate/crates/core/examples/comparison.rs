//! Ordering `-v₋ ≤ u ≤ v` of the coupled system under step refinement.

use critheat::coefficients::{DriftSpec, SigmaFamily};
use critheat::ensemble::comparison_refinement;
use critheat::solver::CoupledConfig;
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let config = CoupledConfig {
        n_max: 1e3,
        ..CoupledConfig::new(
            GridSpec::with_horizon(64, 1e-3, 0.1)?,
            Some(SigmaFamily::critical(1.0)),
            DriftSpec::new(4.0, 0.1)?,
        )
    };
    for factor in [2, 4, 8] {
        let s = comparison_refinement(&config, factor, 50, 1, None)?;
        println!(
            "dt {:.0e}: rate {:.4} ({} runs), dt/{factor}: rate {:.4} ({} runs), worst {:.2e} -> {:.2e}",
            s.coarse.dt,
            s.coarse.rate,
            s.coarse.replicas_violating,
            s.fine.rate,
            s.fine.replicas_violating,
            s.coarse.max_violation,
            s.fine.max_violation
        );
    }
    Ok(())
}
