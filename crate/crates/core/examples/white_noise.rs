//! Walsh integrals of deterministic integrands and the covariance identity.

use critheat::noise::{covariance_test, GridSpec};

type Integrand = fn(f64, f64) -> f64;

fn main() -> critheat::Result<()> {
    let grid = GridSpec::with_horizon(32, 0.01, 1.0)?;
    let cases: [(&str, Integrand, Integrand); 3] = [
        ("1, 1", |_, _| 1.0, |_, _| 1.0),
        ("cos x, cos x", |_, x| x.cos(), |_, x| x.cos()),
        ("t, sin x", |t, _| t, |_, x| x.sin()),
    ];
    for (name, phi, psi) in cases {
        let r = covariance_test(&grid, phi, psi, 4000, 11)?;
        println!(
            "{name:<14} cov {:+.4} target {:+.4} se {:.4} pass {}",
            r.empirical_cov, r.target, r.std_err, r.pass
        );
    }
    Ok(())
}
