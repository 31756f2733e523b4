use serde::{Deserialize, Serialize};

use super::{Result, ScheduleError};

/// Momentum, weight decay and initial learning rate of a constant-LR run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
    pub eta0: f64,
}

impl HyperParams {
    pub fn new(gamma: f64, lambda: f64, eta0: f64) -> Result<Self> {
        let hp = Self { gamma, lambda, eta0 };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ScheduleError::InvalidSpec(format!(
                "weight decay must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(ScheduleError::InvalidSpec(format!(
                "learning rate must be finite and positive, got {}",
                self.eta0
            )));
        }
        Ok(())
    }

    /// `lambda * eta0 / (1 - sqrt(gamma))^2`; real roots exist iff this is <= 1.
    pub fn feasibility_margin(&self) -> f64 {
        self.lambda * self.eta0 / feasibility_limit(self.gamma)
    }

    pub fn is_feasible(&self) -> bool {
        self.lambda * self.eta0 <= feasibility_limit(self.gamma)
    }

    pub fn roots(&self) -> Result<QuadRoots> {
        solve_quadratic(self.gamma, self.lambda, self.eta0)
    }
}

/// The two real roots of `x^2 - (1 + gamma - lambda*eta) x + gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadRoots {
    /// Larger root; the attracting fixed point of the alpha recursion.
    pub z1: f64,
    pub z2: f64,
    /// `(1 + gamma - lambda*eta)^2 - 4 gamma`, clamped at zero on the
    /// feasibility boundary.
    pub discriminant: f64,
}

/// `(1 - sqrt(gamma))^2`, the largest `lambda*eta` with real roots.
pub fn feasibility_limit(gamma: f64) -> f64 {
    let s = 1.0 - gamma.sqrt();
    s * s
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
        return Err(ScheduleError::InvalidSpec(format!(
            "momentum must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

pub fn solve_quadratic(gamma: f64, lambda: f64, eta: f64) -> Result<QuadRoots> {
    solve_for_product(gamma, lambda * eta, None)
}

/// Roots as a function of the product `x = lambda * eta` only.
pub(crate) fn solve_for_product(gamma: f64, x: f64, phase: Option<usize>) -> Result<QuadRoots> {
    check_gamma(gamma)?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(ScheduleError::InvalidSpec(format!(
            "lambda*eta must be finite and non-negative, got {x}"
        )));
    }
    let limit = feasibility_limit(gamma);
    if x > limit {
        return Err(ScheduleError::InfeasibleRoots {
            phase,
            lambda_eta: x,
            limit,
        });
    }
    let one_minus_gamma = 1.0 - gamma;
    // (1+gamma-x)^2 - 4 gamma expanded so the O(1) terms cancel analytically.
    let discriminant =
        (one_minus_gamma * one_minus_gamma - 2.0 * (1.0 + gamma) * x + x * x).max(0.0);
    let sum = 1.0 + gamma - x;
    // sum > 0 on the feasible set, so adding the square root never cancels.
    let z1 = 0.5 * (sum + discriminant.sqrt());
    let z2 = gamma / z1;
    Ok(QuadRoots {
        z1,
        z2,
        discriminant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent root finder: bisection on [sqrt(gamma), 1] where the larger
    /// root lives.
    fn bisect_larger_root(gamma: f64, x: f64) -> f64 {
        let f = |z: f64| z * z - (1.0 + gamma - x) * z + gamma;
        let (mut lo, mut hi) = (gamma.sqrt(), 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn momentum_free_root_is_one_minus_lambda_eta() {
        let r = solve_quadratic(0.0, 0.1, 0.1).unwrap();
        assert!((r.z1 - 0.99).abs() < 1e-15);
        assert_eq!(r.z2, 0.0);
    }

    #[test]
    fn no_weight_decay_factorizes() {
        let r = solve_quadratic(0.9, 0.0, 0.1).unwrap();
        assert_eq!(r.z1, 1.0);
        assert!((r.z2 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn standard_hyperparameters_match_bisection() {
        let r = solve_quadratic(0.9, 0.0005, 0.1).unwrap();
        let oracle = bisect_larger_root(0.9, 0.0005 * 0.1);
        assert!((r.z1 - oracle).abs() < 1e-14, "{} vs {}", r.z1, oracle);
        assert!((r.z1 - 0.9994978).abs() < 1e-7);
    }

    #[test]
    fn boundary_gives_double_root() {
        let gamma: f64 = 0.81;
        let x = feasibility_limit(gamma);
        let r = solve_for_product(gamma, x, None).unwrap();
        assert!((r.z1 - 0.9).abs() < 1e-7 && (r.z2 - 0.9).abs() < 1e-7);
        assert!((r.z1 * r.z2 - gamma).abs() < 1e-15);
    }

    #[test]
    fn infeasible_product_is_rejected() {
        let err = solve_quadratic(0.9, 0.1, 0.1).unwrap_err();
        assert!(matches!(err, ScheduleError::InfeasibleRoots { .. }));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(solve_quadratic(1.0, 0.0, 0.1).is_err());
        assert!(solve_quadratic(0.5, -1.0, 0.1).is_err());
        assert!(solve_quadratic(0.5, f64::NAN, 0.1).is_err());
        assert!(HyperParams::new(0.9, 0.0, 0.0).is_err());
    }

    #[test]
    fn feasibility_margin_at_standard_values() {
        let hp = HyperParams::new(0.9, 0.0005, 0.1).unwrap();
        assert!((hp.feasibility_margin() - 0.019).abs() < 1e-3);
        assert!(hp.is_feasible());
    }
}
