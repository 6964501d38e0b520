//! Two clamp levels give the same coupled solution until the coarser clamp
//! first bites.

use critheat::coefficients::{DriftSpec, SigmaFamily};
use critheat::solver::{localization_pair, CoupledConfig, InitialData};
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let config = CoupledConfig {
        initial: InitialData::Cosine { mean: 0.0, amplitude: 2.0, mode: 1 },
        ..CoupledConfig::new(GridSpec::with_horizon(32, 1e-3, 0.3)?, Some(SigmaFamily::critical(1.0)), DriftSpec::new(4.0, 0.5)?)
    };
    for replica in 0..8 {
        let r = localization_pair(&config, (0.5, 4.0), (0.1, 8.0), 9, replica)?;
        println!(
            "replica {replica}: first activation {:?}, compared {}, max diff {:.1e}",
            r.first_activation, r.compared, r.max_diff
        );
    }
    Ok(())
}
