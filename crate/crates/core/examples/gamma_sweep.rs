//! Explosion frequency against the growth exponent of σ.

use critheat::coefficients::SigmaFamily;
use critheat::ensemble::gamma_sweep;
use critheat::solver::{Dynamics, SolverConfig};
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let base = SolverConfig {
        stride: 100,
        ..SolverConfig::new(
            GridSpec::with_horizon(32, 2e-4, 1.0)?,
            Dynamics { sigma: Some(SigmaFamily::critical(1.0)), ..Dynamics::heat() },
        )
    };
    let sweep = gamma_sweep(&[1.0, 1.25, 1.5, 1.75, 2.0, 2.5], &base, 100, 5, None)?;
    println!("N = {}, dt = {:e}, n_max = {:e}", sweep.n, sweep.dt, sweep.n_max);
    for r in &sweep.rows {
        println!("gamma {:<5} exploded {:>3}/{}  [{:.3}, {:.3}]", r.gamma, r.explosions, r.replicas, r.ci_low, r.ci_high);
    }
    println!("monotone: {:?}", sweep.verdict.class);
    Ok(())
}
