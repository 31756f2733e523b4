use serde::{Deserialize, Serialize};

use super::roots::solve_for_product;
use super::spec::ScheduleSpec;
use super::translate::{translate, Method, TranslatedSchedule};
use super::{Result, ScheduleError};

const ALPHA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lambda_max: f64,
    pub eta_max: f64,
    /// `lambda_max * eta_max / (1 - gamma)`.
    pub tau: f64,
    /// Larger root at `(lambda_max, eta_max)`.
    pub z_min: f64,
    pub min_alpha: f64,
    pub min_alpha_t: usize,
    pub max_alpha: f64,
    /// `1 - z_min`.
    pub gap: f64,
    /// Relative residual of
    /// `1 - z_min = 2 tau / (1 + tau + sqrt(1 - 2 tau (1+gamma)/(1-gamma) + tau^2))`.
    pub identity_rel_residual: f64,
    /// `1 - z_min <= 2 tau`.
    pub two_tau_bound_holds: bool,
    /// `1 - z_min <= tau / (1 + tau)`; false at typical settings.
    pub tau_over_one_plus_tau_holds: bool,
}

/// Check `z_min <= alpha_t <= 1` for every `t >= 0` and report the gap bounds,
/// with the maxima taken over the schedule itself.
pub fn alpha_bounds_check(sched: &TranslatedSchedule) -> Result<BoundsReport> {
    let lambda_max = sched.lambda.iter().copied().fold(0.0, f64::max);
    let eta_max = sched.eta.iter().copied().fold(0.0, f64::max);
    alpha_bounds_check_at(sched, lambda_max, eta_max)
}

/// [`alpha_bounds_check`] against caller-supplied maxima, which must dominate
/// the schedule's own values.
pub fn alpha_bounds_check_at(sched: &TranslatedSchedule, lambda_max: f64, eta_max: f64) -> Result<BoundsReport> {
    let own_lambda = sched.lambda.iter().copied().fold(0.0, f64::max);
    let own_eta = sched.eta.iter().copied().fold(0.0, f64::max);
    if lambda_max < own_lambda || eta_max < own_eta {
        return Err(ScheduleError::InvalidSpec(format!(
            "maxima ({lambda_max}, {eta_max}) are below the schedule's ({own_lambda}, {own_eta})"
        )));
    }
    let gamma = sched.gamma;
    let roots = solve_for_product(gamma, lambda_max * eta_max, None)?;
    let z_min = roots.z1;
    let tau = lambda_max * eta_max / (1.0 - gamma);

    let (mut min_alpha, mut min_alpha_t, mut max_alpha) = (f64::INFINITY, 0, f64::NEG_INFINITY);
    for (t, &a) in sched.alpha.iter().enumerate() {
        if a < z_min - ALPHA_TOL || a > 1.0 + ALPHA_TOL {
            return Err(ScheduleError::BoundViolation {
                t,
                value: a,
                lower: z_min,
            });
        }
        if a < min_alpha {
            min_alpha = a;
            min_alpha_t = t;
        }
        max_alpha = max_alpha.max(a);
    }

    let gap = 1.0 - z_min;
    let q = 1.0 - 2.0 * tau * (1.0 + gamma) / (1.0 - gamma) + tau * tau;
    let closed = 2.0 * tau / (1.0 + tau + q.max(0.0).sqrt());
    let identity_rel_residual = if closed == 0.0 {
        gap.abs()
    } else {
        (gap - closed).abs() / closed
    };
    Ok(BoundsReport {
        lambda_max,
        eta_max,
        tau,
        z_min,
        min_alpha,
        min_alpha_t,
        max_alpha,
        gap,
        identity_rel_residual,
        two_tau_bound_holds: gap <= 2.0 * tau * (1.0 + 1e-12),
        tau_over_one_plus_tau_holds: gap <= tau / (1.0 + tau),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub t: usize,
    pub phase: usize,
    /// `t - T_I - 1`, which is `-1` on the first iteration of a phase.
    pub k: i64,
    /// `|(eta_hat_{t-1}/eta_hat_t) / (eta_tilde_{t-1}/eta_tilde_t) - 1|` with
    /// `eta_hat` from TEXP++ and `eta_tilde` from TEXP.
    pub deviation: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub tau: f64,
    pub z_min: f64,
    /// `gamma / z_min^2`.
    pub rate: f64,
    /// `3 tau`.
    pub coefficient: f64,
    pub entries: Vec<DeviationEntry>,
    pub exceedances: Vec<usize>,
    pub max_ratio: f64,
}

impl DeviationReport {
    /// Iterations where the deviation exceeds `coef * rate^max(k, 0)`.
    pub fn exceedances_for(&self, coef: f64, rate: f64) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.deviation > coef * rate.powi(e.k.max(0) as i32))
            .map(|e| e.t)
            .collect()
    }
}

/// Per-iteration growth-ratio gap between TEXP and TEXP++ against the
/// envelope `3 tau (gamma/z_min^2)^max(k,0)`, for `t >= 1`.
pub fn texp_texppp_deviation(spec: &ScheduleSpec) -> Result<DeviationReport> {
    let texp = translate(spec, Method::Texp)?;
    let pp = translate(spec, Method::TexpPlusPlus)?;
    let bounds = alpha_bounds_check(&pp)?;
    let (tau, z_min) = (bounds.tau, bounds.z_min);
    let gamma = spec.gamma;
    let rate = gamma / (z_min * z_min);
    let coefficient = 3.0 * tau;

    let mut entries = Vec::with_capacity(texp.len());
    let mut phase = 0;
    for t in 1..texp.len() {
        while phase + 1 < texp.phases.len() && texp.phases[phase + 1].start <= t {
            phase += 1;
        }
        let k = t as i64 - texp.phases[phase].start as i64 - 1;
        let step_pp = pp.log_eta_tilde[t - 1] - pp.log_eta_tilde[t];
        let step_texp = texp.log_eta_tilde[t - 1] - texp.log_eta_tilde[t];
        let deviation = (step_pp - step_texp).exp_m1().abs();
        let envelope = coefficient * rate.powi(k.max(0) as i32);
        entries.push(DeviationEntry {
            t,
            phase,
            k,
            deviation,
            envelope,
        });
    }
    let exceedances = entries
        .iter()
        .filter(|e| e.deviation > e.envelope)
        .map(|e| e.t)
        .collect();
    let max_ratio = entries
        .iter()
        .map(|e| e.deviation / e.envelope)
        .fold(0.0, f64::max);
    Ok(DeviationReport {
        tau,
        z_min,
        rate,
        coefficient,
        entries,
        exceedances,
        max_ratio,
    })
}
