//! Small summary-statistics helpers shared by the verifiers.

use serde::{Deserialize, Serialize};

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Mean and standard error with the unbiased (n-1) variance. A single
/// sample has zero standard error; an empty slice yields NaN mean.
pub fn mean_se(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            std_err: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 || xs.iter().all(|&x| x == xs[0]) {
        return MeanEstimate {
            mean: xs[0],
            std_err: 0.0,
            n,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanEstimate {
        mean,
        std_err: (var / n as f64).sqrt(),
        n,
    }
}

/// Unbiased sample variance together with a standard error for it.
///
/// The standard error uses the fourth-moment formula
/// `Var(s²) ≈ (m4 - (n-3)/(n-1) · s⁴) / n`, which reduces to `2s⁴/(n-1)`
/// for Gaussian data.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let s2 = m2 * n / (n - 1.0);
    let var_s2 = (m4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n;
    (s2, var_s2.max(0.0).sqrt())
}

/// Sample covariance of paired observations and its standard error, taken
/// as the standard error of the mean of the centred products.
pub fn covariance_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    let est = mean_se(&prods);
    (est.mean * n / (n - 1.0), est.std_err)
}

/// Wilson score interval for a binomial proportion at `z` standard
/// deviations.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_se_of_known_sample() {
        let est = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(est.mean, 2.5);
        // s² = 5/3, se = sqrt(5/12)
        assert_relative_eq!(est.std_err, (5.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn constant_sample_has_zero_spread() {
        let est = mean_se(&[7.0; 10]);
        assert_eq!(est.std_err, 0.0);
        let (v, se) = variance_se(&[7.0; 10]);
        assert_eq!(v, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(0, 200, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.03);
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
        assert_relative_eq!(0.5 - lo, hi - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn covariance_of_identical_columns_is_variance() {
        let xs = [1.0, 3.0, 2.0, 5.0, 4.0];
        let (c, _) = covariance_se(&xs, &xs);
        let (v, _) = variance_se(&xs);
        assert_relative_eq!(c, v, epsilon = 1e-14);
    }
}
