//! Noise coefficients σ, the singular drift `f(u) = u^{-α}`, and their
//! clamped versions `σ_n`, `f_ε`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// `c (1 + |u|^{3/2})`
    CriticalPower,
    /// `c (1 + |u|^γ)`
    Power,
    /// `c u`
    Linear,
    /// `c`, additive noise.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaFamily {
    pub kind: SigmaKind,
    pub c: f64,
    /// Exponent for [`SigmaKind::Power`]; ignored otherwise.
    pub gamma: f64,
}

impl SigmaFamily {
    pub fn critical(c: f64) -> Self {
        Self {
            kind: SigmaKind::CriticalPower,
            c,
            gamma: 1.5,
        }
    }

    pub fn power(c: f64, gamma: f64) -> Self {
        Self {
            kind: SigmaKind::Power,
            c,
            gamma,
        }
    }

    pub fn linear(c: f64) -> Self {
        Self {
            kind: SigmaKind::Linear,
            c,
            gamma: 1.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            kind: SigmaKind::Constant,
            c,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config("sigma.c", format!("must be positive, got {}", self.c)));
        }
        if self.kind == SigmaKind::Power && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("sigma.gamma", format!("must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Growth exponent of the family.
    pub fn exponent(&self) -> f64 {
        match self.kind {
            SigmaKind::CriticalPower => 1.5,
            SigmaKind::Power => self.gamma,
            SigmaKind::Linear => 1.0,
            SigmaKind::Constant => 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.kind {
            SigmaKind::CriticalPower => {
                let a = u.abs();
                self.c * (1.0 + a * a.sqrt())
            }
            SigmaKind::Power => self.c * (1.0 + u.abs().powf(self.gamma)),
            SigmaKind::Linear => self.c * u,
            SigmaKind::Constant => self.c,
        }
    }

    /// `σ_n`: σ frozen outside `[-n, n]`.
    pub fn clamp(self, n: f64) -> Result<ClampedSigma> {
        if !(n > 0.0) {
            return Err(Error::config("clamp.n", format!("must be positive, got {n}")));
        }
        Ok(ClampedSigma { family: self, n })
    }
}

pub fn sigma_eval(family: &SigmaFamily, u: f64) -> f64 {
    family.eval(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampedSigma {
    pub family: SigmaFamily,
    pub n: f64,
}

impl ClampedSigma {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.family.eval(u.clamp(-self.n, self.n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub alpha: f64,
    pub epsilon_clamp: f64,
}

impl DriftSpec {
    pub const DEFAULT_ALPHA: f64 = 4.0;

    pub fn new(alpha: f64, epsilon_clamp: f64) -> Result<Self> {
        let spec = Self {
            alpha,
            epsilon_clamp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 3.0 && self.alpha.is_finite()) {
            return Err(Error::config("drift.alpha", format!("must exceed 3, got {}", self.alpha)));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 1.0) {
            return Err(Error::config(
                "clamp.epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon_clamp),
            ));
        }
        Ok(())
    }

    /// `f_ε(u) = max(ε, u)^{-α}`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        u.max(self.epsilon_clamp).powf(-self.alpha)
    }

    /// Unclamped `f(u) = u^{-α}`.
    pub fn eval_unclamped(&self, u: f64) -> f64 {
        u.powf(-self.alpha)
    }

    /// `sup f_ε = ε^{-α}`.
    pub fn bound(&self) -> f64 {
        self.epsilon_clamp.powf(-self.alpha)
    }
}

pub fn clamp_sigma(family: SigmaFamily, n: f64) -> Result<ClampedSigma> {
    family.clamp(n)
}

pub fn clamp_drift(spec: DriftSpec) -> Result<DriftSpec> {
    spec.validate()?;
    Ok(spec)
}

/// True iff `|σ(u)| ≤ C (1 + |u|^{3/2})` at every grid point.
pub fn growth_check(family: &SigmaFamily, c: f64, grid: &[f64]) -> bool {
    !grid.is_empty()
        && grid.iter().all(|&u| {
            let a = u.abs();
            family.eval(u).abs() <= c * (1.0 + a * a.sqrt())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sigma_values() {
        let crit = SigmaFamily::critical(1.0);
        assert_eq!(crit.eval(0.0), 1.0);
        assert_eq!(crit.eval(4.0), 9.0);
        assert_eq!(crit.eval(-4.0), 9.0);
        assert_eq!(SigmaFamily::linear(2.0).eval(-3.0), -6.0);
        assert_abs_diff_eq!(SigmaFamily::power(1.0, 1.5).eval(2.7), crit.eval(2.7), epsilon = 1e-12);
    }

    #[test]
    fn clamped_sigma() {
        let s4 = clamp_sigma(SigmaFamily::critical(1.0), 4.0).unwrap();
        assert_eq!(s4.eval(5.0), 9.0);
        assert_eq!(s4.eval(-10.0), 9.0);
        for i in -400..=400 {
            let u = i as f64 / 100.0;
            assert_eq!(s4.eval(u), SigmaFamily::critical(1.0).eval(u));
        }
        assert!(SigmaFamily::critical(1.0).clamp(0.0).is_err());
    }

    #[test]
    fn clamps_are_consistent_across_levels() {
        let fam = SigmaFamily::power(0.7, 1.8);
        let lo = fam.clamp(3.0).unwrap();
        let hi = fam.clamp(7.0).unwrap();
        let d1 = DriftSpec::new(4.0, 0.5).unwrap();
        let d2 = DriftSpec::new(4.0, 0.1).unwrap();
        for i in -300..=300 {
            let u = i as f64 / 100.0;
            assert_eq!(lo.eval(u), hi.eval(u));
            if u >= 0.5 {
                assert_eq!(d1.eval(u), d2.eval(u));
                assert_eq!(d1.eval(u), d1.eval_unclamped(u));
            }
        }
    }

    #[test]
    fn clamped_sigma_bounded_by_endpoints() {
        let s = SigmaFamily::critical(1.3).clamp(6.0).unwrap();
        let edge = s.eval(6.0).abs().max(s.eval(-6.0).abs());
        for i in -2000..=2000 {
            assert!(s.eval(i as f64 / 50.0).abs() <= edge);
        }
    }

    #[test]
    fn clamped_drift() {
        let f = clamp_drift(DriftSpec::new(4.0, 0.5).unwrap()).unwrap();
        assert_abs_diff_eq!(f.eval(0.1), 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.eval(2.0), 0.0625, epsilon = 1e-15);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let u: f64 = rng.random_range(-100.0..100.0);
            assert!(f.eval(u) <= f.bound());
        }
    }

    #[test]
    fn drift_validation() {
        assert!(matches!(DriftSpec::new(2.5, 0.5), Err(Error::Config { ref key, .. }) if key == "drift.alpha"));
        assert!(matches!(DriftSpec::new(3.0, 0.5), Err(Error::Config { .. })));
        assert!(matches!(DriftSpec::new(4.0, 1.0), Err(Error::Config { ref key, .. }) if key == "clamp.epsilon"));
        assert!(DriftSpec::new(4.0, 0.0).is_err());
    }

    #[test]
    fn growth_checks() {
        let grid: Vec<f64> = (-1000..=1000).map(|i| i as f64).collect();
        assert!(growth_check(&SigmaFamily::critical(1.0), 1.0, &grid));
        let with_100 = [0.0, 1.0, 100.0];
        assert!(!growth_check(&SigmaFamily::power(1.0, 2.0), 1.0, &with_100));
        assert!(growth_check(&SigmaFamily::linear(1.0), 2.0, &grid));
        assert!(!growth_check(&SigmaFamily::linear(1.0), 2.0, &[]));
    }
}
