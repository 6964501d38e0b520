//! Direct stochastic convolution against its factorized reconstruction.

use critheat::solver::{factorization_refinement, ConvolutionSpec, Phi};
use critheat::GridSpec;

fn main() -> critheat::Result<()> {
    let spec = ConvolutionSpec::new(8.0, 0.2, 0.5, Phi::Constant { level: 1.0 })?;
    let mut grid = GridSpec::new(32, 0.5 / 16.0, 16)?;
    while grid.steps <= 512 {
        let (coarse, fine) = factorization_refinement(&spec, &grid, 1, 0)?;
        println!(
            "steps {:>4}: sup|Z| {:.4}  rel diff {:.4}  | steps {:>4}: rel diff {:.4}",
            coarse.steps, coarse.sup_direct, coarse.rel_diff, fine.steps, fine.rel_diff
        );
        grid = grid.refined(2);
    }
    Ok(())
}
