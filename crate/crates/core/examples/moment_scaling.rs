//! `E sup|Z|^p` for constant integrands against `L^p T^{p/4-1/2}`. The
//! fitted ratios do not depend on `L` since the same noise drives every level.

use critheat::ensemble::moment_scaling_check;

fn main() -> critheat::Result<()> {
    for level in [0.5, 1.0, 2.0] {
        let r = moment_scaling_check(8.0, &[0.1, 0.2, 0.4, 0.8], level, 64, 1e-3, 400, 4, None)?;
        let moments: Vec<String> = r.rows.iter().map(|row| format!("{:.3e}", row.moment.mean)).collect();
        let ratios: Vec<String> = r.rows.iter().map(|row| format!("{:.3}", row.ratio)).collect();
        println!(
            "L = {level}: moments [{}], c = {:.3}, ratios [{}], {:?}",
            moments.join(", "),
            r.fitted_c,
            ratios.join(", "),
            r.verdict.class
        );
    }
    Ok(())
}
