//! Heat kernel norms and sup values in both normalizations.

use critheat::heat_kernel::{kernel_l1_norm, kernel_sup, paper_sup_bound, sup_bound, truncation_order};
use critheat::KernelSpec;

fn main() -> critheat::Result<()> {
    let paper = KernelSpec::paper();
    let prob = KernelSpec::probabilist();
    println!("{:>8} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}", "t", "K", "|G|_1", "|p|_1", "G(t,0)", "sharp", "explicit");
    for t in [1e-4, 1e-3, 0.01, 0.1, 0.3, 1.0, 10.0] {
        println!(
            "{t:>8.0e} {:>6} {:>12.9} {:>12.9} {:>12.6} {:>12.6} {:>12.6}",
            truncation_order(t, paper.truncation_tol)?,
            kernel_l1_norm(&paper, t, 2048)?,
            kernel_l1_norm(&prob, t, 2048)?,
            kernel_sup(&paper, t)?,
            sup_bound(t),
            paper_sup_bound(t),
        );
    }
    Ok(())
}
