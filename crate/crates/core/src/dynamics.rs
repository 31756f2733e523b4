//! Norm dynamics of a recorded run.
//!
//! With `R_t = ||theta_t||^2`, `D_t = ||theta_{t+1} - theta_t||^2` and a
//! scale-invariant loss (gradient orthogonal to `theta`), SGD with momentum
//! and weight decay satisfies
//!
//! ```text
//! (R_{t+1} - R_t - D_t)/eta_t = gamma (R_t - R_{t-1} + D_{t-1})/eta_{t-1} - 2 lambda_t R_t
//! ```
//!
//! for every `t >= 0`. The checks below evaluate this identity and its
//! consequences on a [`Trajectory`].

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("series has {len} steps, at least {required} are needed")]
    InsufficientLength { len: usize, required: usize },
    #[error("check does not apply: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSeries {
    pub gamma: f64,
    /// `R_0 ..= R_n`.
    pub r: Vec<f64>,
    pub r_minus1: f64,
    /// `D_0 .. D_{n-1}`.
    pub d: Vec<f64>,
    /// `||theta_0 - theta_{-1}||^2`.
    pub d_minus1: f64,
    /// `C_t = theta_t^T (theta_{t+1} - theta_t) = (R_{t+1} - R_t - D_t)/2`.
    pub c: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_minus1: f64,
    pub lambda: Vec<f64>,
    /// `||grad L_t(theta_t)||^2` for `t = 0 ..= n`.
    pub grad_sq: Vec<f64>,
    pub loss: Vec<f64>,
    pub log_norm: Vec<f64>,
}

impl NormSeries {
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let n = tr.steps();
        let r: Vec<f64> = tr.records.iter().map(|x| (2.0 * x.log_norm).exp()).collect();
        let d: Vec<f64> = tr.records[1..].iter().map(|x| x.update_norm * x.update_norm).collect();
        let c = (0..n).map(|t| 0.5 * (r[t + 1] - r[t] - d[t])).collect();
        let d0 = tr.records[0].update_norm;
        Self {
            gamma: tr.gamma,
            r_minus1: (2.0 * tr.init_buf_log_norm).exp(),
            d_minus1: d0 * d0,
            c,
            eta: tr.log_eta[..n].iter().map(|v| v.exp()).collect(),
            eta_minus1: tr.init_log_eta.exp(),
            lambda: tr.lambda[..n].to_vec(),
            grad_sq: tr.records.iter().map(|x| x.grad_norm * x.grad_norm).collect(),
            loss: tr.records.iter().map(|x| x.loss).collect(),
            log_norm: tr.records.iter().map(|x| x.log_norm).collect(),
            r,
            d,
        }
    }

    pub fn steps(&self) -> usize {
        self.d.len()
    }

    fn r_at(&self, t: isize) -> f64 {
        if t < 0 {
            self.r_minus1
        } else {
            self.r[t as usize]
        }
    }

    fn d_at(&self, t: isize) -> f64 {
        if t < 0 {
            self.d_minus1
        } else {
            self.d[t as usize]
        }
    }

    fn eta_at(&self, t: isize) -> f64 {
        if t < 0 {
            self.eta_minus1
        } else {
            self.eta[t as usize]
        }
    }

    fn constant_lr(&self) -> Option<f64> {
        let e = *self.eta.first()?;
        self.eta.iter().all(|&v| v == e).then_some(e)
    }
}

const RECURSION_TOL: f64 = 1e-9;
const CUMULATIVE_TOL: f64 = 1e-9;
const PYTHAGOREAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    /// `eta_t` times the identity's left side minus its right side.
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    pub max_r: f64,
    pub pass: bool,
}

impl RecursionReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,residual")?;
        for (t, r) in self.residuals.iter().enumerate() {
            writeln!(w, "{t},{r:.16e}")?;
        }
        Ok(())
    }
}

pub fn check_norm_recursion(s: &NormSeries) -> RecursionReport {
    let residuals: Vec<f64> = (0..s.steps())
        .map(|t| {
            let ti = t as isize;
            let lhs = s.r[t + 1] - s.r[t] - s.d[t];
            let prev = (s.r[t] - s.r_at(ti - 1) + s.d_at(ti - 1)) / s.eta_at(ti - 1);
            let rhs = s.eta[t] * (s.gamma * prev - 2.0 * s.lambda[t] * s.r[t]);
            lhs - rhs
        })
        .collect();
    let max_abs_residual = residuals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let max_r = s.r.iter().copied().fold(0.0, f64::max);
    RecursionReport {
        pass: max_abs_residual <= RECURSION_TOL * max_r,
        residuals,
        max_abs_residual,
        max_r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    /// Steps violating `R_{t+1} - R_t >= gamma^{t+1} (eta_t/eta_0) (R_0 - R_{-1})`.
    pub violations: usize,
    /// Steps violating the same bound with the sign of the right side flipped.
    pub flipped_sign_violations: usize,
    /// Worst relative error of the closed-form sum for constant LR, if the LR
    /// is constant.
    pub cumulative_max_rel_err: Option<f64>,
    pub pass: bool,
}

/// Lower bound on norm growth without weight decay, and for constant LR the
/// exact closed form
/// `R_{t+1} = R_0 + gamma (1-gamma^{t+1})/(1-gamma) (R_0 - R_{-1})
///           + sum_{i<=t} (1-gamma^{t-i+1})/(1-gamma) (D_i + gamma D_{i-1})`.
pub fn check_monotone_growth(s: &NormSeries) -> Result<MonotoneReport> {
    if s.lambda.iter().any(|&l| l != 0.0) {
        return Err(DynamicsError::NotApplicable(
            "growth bound needs lambda = 0 at every step".into(),
        ));
    }
    let g = s.gamma;
    let init_gap = s.r[0] - s.r_minus1;
    let eta0 = s.eta_minus1;
    let mut violations = 0;
    let mut flipped_sign_violations = 0;
    let mut gpow = 1.0;
    for t in 0..s.steps() {
        gpow *= g;
        let inc = s.r[t + 1] - s.r[t];
        let bound = gpow * (s.eta[t] / eta0) * init_gap;
        let slack = 1e-12 * s.r[t + 1];
        if inc < bound - slack {
            violations += 1;
        }
        if inc < -bound - slack {
            flipped_sign_violations += 1;
        }
    }

    let cumulative_max_rel_err = s.constant_lr().map(|_| {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        let mut gpow = 1.0;
        let mut worst: f64 = 0.0;
        for t in 0..s.steps() {
            let x = s.d[t] + g * s.d_at(t as isize - 1);
            sum += x;
            weighted = g * (weighted + x);
            gpow *= g;
            let geom = if g == 0.0 { 0.0 } else { g * (1.0 - gpow) / (1.0 - g) };
            let predicted = s.r[0] + geom * init_gap + (sum - weighted) / (1.0 - g);
            worst = worst.max((predicted - s.r[t + 1]).abs() / s.r[t + 1]);
        }
        worst
    });
    let pass = violations == 0 && cumulative_max_rel_err.is_none_or(|e| e <= CUMULATIVE_TOL);
    Ok(MonotoneReport {
        violations,
        flipped_sign_violations,
        cumulative_max_rel_err,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub burn_in: usize,
    pub mean_d: f64,
    pub mean_r: f64,
    pub ratio: f64,
    /// `2 eta lambda / (1 + gamma)`.
    pub theory: f64,
    pub rel_err: f64,
    pub pass: bool,
}

pub const EQUILIBRIUM_BAND: f64 = 0.25;

/// Time-averaged `D/R` after `burn_in` steps (default: a tenth of the run)
/// against `2 eta lambda / (1 + gamma)`.
pub fn estimate_equilibrium(s: &NormSeries, burn_in: Option<usize>) -> Result<EquilibriumReport> {
    let n = s.steps();
    let burn_in = burn_in.unwrap_or(n / 10);
    let required = (10 * burn_in).max(10);
    if n < required {
        return Err(DynamicsError::InsufficientLength { len: n, required });
    }
    let eta = s
        .constant_lr()
        .ok_or_else(|| DynamicsError::NotApplicable("equilibrium needs a constant LR".into()))?;
    let lambda = s.lambda[0];
    if s.lambda.iter().any(|&l| l != lambda) {
        return Err(DynamicsError::NotApplicable(
            "equilibrium needs a constant weight decay".into(),
        ));
    }
    let count = (n - burn_in) as f64;
    let mean_d = s.d[burn_in..].iter().sum::<f64>() / count;
    let mean_r = s.r[burn_in..n].iter().sum::<f64>() / count;
    let ratio = mean_d / mean_r;
    let theory = 2.0 * eta * lambda / (1.0 + s.gamma);
    let rel_err = if theory == 0.0 {
        ratio
    } else {
        (ratio - theory).abs() / theory
    };
    Ok(EquilibriumReport {
        burn_in,
        mean_d,
        mean_r,
        ratio,
        theory,
        rel_err,
        pass: theory > 0.0 && rel_err <= EQUILIBRIUM_BAND,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PythagoreanReport {
    pub max_rel_residual: f64,
    pub pass: bool,
}

/// `R_{t+1} = (1 - lambda_t eta_t)^2 R_t + eta_t^2 ||grad L_t(theta_t)||^2`
/// for momentum-free runs.
pub fn check_pythagorean(s: &NormSeries) -> Result<PythagoreanReport> {
    if s.gamma != 0.0 {
        return Err(DynamicsError::NotApplicable(format!(
            "the step identity needs gamma = 0, got {}",
            s.gamma
        )));
    }
    let max_rel_residual = (0..s.steps())
        .map(|t| {
            let shrink = 1.0 - s.lambda[t] * s.eta[t];
            let pred = shrink * shrink * s.r[t] + s.eta[t] * s.eta[t] * s.grad_sq[t];
            (pred - s.r[t + 1]).abs() / s.r[t + 1]
        })
        .fold(0.0, f64::max);
    Ok(PythagoreanReport {
        max_rel_residual,
        pass: max_rel_residual <= PYTHAGOREAN_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseAudit {
    pub c: f64,
    /// First step of the audited window (the second half of the run).
    pub window_start: usize,
    pub steps_checked: usize,
    /// Fraction of audited steps with
    /// `f_{t+1} - f_t > -c eta_t ||grad f_t||^2`.
    pub violation_fraction: f64,
    /// Least-squares slope of `log ||theta_t||` over the window.
    pub log_norm_slope: f64,
    /// Largest drop of `log ||theta||` below its value at the window start.
    pub log_norm_drop: f64,
    /// The drop stays under `ln 2`.
    pub bounded_below: bool,
    /// Sufficient decrease held at every audited step, which forces the norm
    /// to zero in the limit.
    pub collapse_predicted: bool,
    /// A norm bounded below must come with some failed decrease steps.
    pub consistent: bool,
}

/// Audit the sufficient-decrease condition on a recorded momentum-free run
/// with constant LR and positive weight decay.
pub fn sufficient_decrease_audit(tr: &Trajectory, c: f64) -> Result<DecreaseAudit> {
    if tr.gamma != 0.0 {
        return Err(DynamicsError::NotApplicable("audit needs gamma = 0".into()));
    }
    if tr.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(DynamicsError::NotApplicable(
            "audit needs positive weight decay".into(),
        ));
    }
    let n = tr.steps();
    let eta: Vec<f64> = tr.log_eta[..n].iter().map(|v| v.exp()).collect();
    let loss: Vec<f64> = tr.records.iter().map(|r| r.loss).collect();
    let grad_sq: Vec<f64> = tr.records.iter().map(|r| r.grad_norm * r.grad_norm).collect();
    let log_norm: Vec<f64> = tr.records.iter().map(|r| r.log_norm).collect();
    sufficient_decrease_audit_series(&loss, &grad_sq, &log_norm, &eta, c)
}

/// Same audit on raw series: `loss`, `grad_sq` and `log_norm` have one entry
/// per iterate, `eta` one per step.
pub fn sufficient_decrease_audit_series(
    loss: &[f64],
    grad_sq: &[f64],
    log_norm: &[f64],
    eta: &[f64],
    c: f64,
) -> Result<DecreaseAudit> {
    let n = eta.len();
    if loss.len() != n + 1 || grad_sq.len() != n + 1 || log_norm.len() != n + 1 {
        return Err(DynamicsError::NotApplicable(
            "series lengths must be steps + 1".into(),
        ));
    }
    if n < 4 {
        return Err(DynamicsError::InsufficientLength { len: n, required: 4 });
    }
    if !(c > 0.0) {
        return Err(DynamicsError::NotApplicable(format!("c must be positive, got {c}")));
    }
    let start = n / 2;
    let violations = (start..n)
        .filter(|&t| loss[t + 1] - loss[t] > -c * eta[t] * grad_sq[t])
        .count();
    let steps_checked = n - start;
    let violation_fraction = violations as f64 / steps_checked as f64;

    let window = &log_norm[start..=n];
    let k = window.len() as f64;
    let xbar = (k - 1.0) / 2.0;
    let ybar = window.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in window.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    let log_norm_slope = sxy / sxx;
    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
    let log_norm_drop = (window[0] - min).max(0.0);
    let bounded_below = log_norm_drop < std::f64::consts::LN_2;
    let collapse_predicted = violations == 0;
    Ok(DecreaseAudit {
        c,
        window_start: start,
        steps_checked,
        violation_fraction,
        log_norm_slope,
        log_norm_drop,
        bounded_below,
        collapse_predicted,
        consistent: !(bounded_below && collapse_predicted),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::rng;
    use crate::scaleinv::{NormQuadratic, Objective};
    use crate::trainer::{run_sgd_wd, RunConfig};
    use crate::vecops::Matrix;

    fn quad() -> Arc<dyn Objective> {
        Arc::new(NormQuadratic::new(8, 0.0, 2).unwrap())
    }

    fn theta0() -> Vec<f64> {
        rng::normal_vec(&mut rng::stream(5, 1), 8)
    }

    #[test]
    fn recursion_holds_with_momentum_and_decay() {
        let cfg = RunConfig::new(quad(), 0.9, theta0(), 500);
        let tr = run_sgd_wd(&cfg, &[0.1; 500], &[5e-4; 500]).unwrap();
        let r = check_norm_recursion(&NormSeries::from_trajectory(&tr));
        assert!(r.pass, "{:e} vs {:e}", r.max_abs_residual, r.max_r);
    }

    #[test]
    fn stationary_run_decays_purely() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::with_matrix(a).unwrap());
        let cfg = RunConfig::new(obj, 0.0, vec![1.0, 0.0], 50);
        let tr = run_sgd_wd(&cfg, &[0.1; 50], &[0.01; 50]).unwrap();
        let s = NormSeries::from_trajectory(&tr);
        assert!(check_norm_recursion(&s).pass);
        let expect = 0.999f64.powi(100);
        assert!((s.r[50] - expect).abs() < 1e-13);
    }

    #[test]
    fn growth_bound_and_closed_form_with_initial_velocity() {
        let th = theta0();
        let v = crate::vecops::scale(&th, -0.1);
        let cfg = RunConfig::new(quad(), 0.9, th, 400).with_velocity(v);
        let tr = run_sgd_wd(&cfg, &[0.1; 400], &[0.0; 400]).unwrap();
        let s = NormSeries::from_trajectory(&tr);
        assert!(s.r_minus1 > s.r[0]);
        let r = check_monotone_growth(&s).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.flipped_sign_violations > 0);
    }

    #[test]
    fn momentum_free_growth_is_sum_of_steps() {
        let cfg = RunConfig::new(quad(), 0.0, theta0(), 100);
        let tr = run_sgd_wd(&cfg, &[0.3; 100], &[0.0; 100]).unwrap();
        let s = NormSeries::from_trajectory(&tr);
        let mut acc = s.r[0];
        for t in 0..100 {
            acc += s.d[t];
            assert!((acc - s.r[t + 1]).abs() <= 1e-12 * s.r[t + 1]);
        }
        assert!(check_monotone_growth(&s).unwrap().pass);
        assert!(check_pythagorean(&s).unwrap().pass);
    }

    #[test]
    fn equilibrium_rejects_short_series() {
        let cfg = RunConfig::new(quad(), 0.9, theta0(), 50);
        let tr = run_sgd_wd(&cfg, &[0.1; 50], &[5e-4; 50]).unwrap();
        let s = NormSeries::from_trajectory(&tr);
        assert!(matches!(
            estimate_equilibrium(&s, Some(10)),
            Err(DynamicsError::InsufficientLength { .. })
        ));
        let r = estimate_equilibrium(&s, None).unwrap();
        assert!((r.theory - 2.0 * 0.1 * 5e-4 / 1.9).abs() < 1e-18);
    }

    #[test]
    fn synthetic_decreasing_loss_flags_collapse() {
        let n = 100;
        let loss: Vec<f64> = (0..=n).map(|t| 1.0 / (1.0 + t as f64)).collect();
        let grad_sq: Vec<f64> = (0..=n).map(|t| 0.1 / ((1.0 + t as f64) * (2.0 + t as f64))).collect();
        let log_norm: Vec<f64> = (0..=n).map(|t| -0.05 * t as f64).collect();
        let a = sufficient_decrease_audit_series(&loss, &grad_sq, &log_norm, &vec![1.0; n], 1.0).unwrap();
        assert!(a.collapse_predicted);
        assert!(a.consistent);
        assert!(a.log_norm_slope < 0.0);
    }

    #[test]
    fn stationary_audit_holds_trivially() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::with_matrix(a).unwrap());
        let cfg = RunConfig::new(obj, 0.0, vec![1.0, 0.0], 2000);
        let tr = run_sgd_wd(&cfg, &[0.1; 2000], &[0.01; 2000]).unwrap();
        let audit = sufficient_decrease_audit(&tr, 0.5).unwrap();
        assert_eq!(audit.violation_fraction, 0.0);
        assert!(!audit.bounded_below);
        assert!(audit.consistent);
    }
}
