use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::roots::{check_gamma, feasibility_limit, solve_for_product};
use super::spec::{ScheduleKind, ScheduleSpec};
use super::{Result, ScheduleError};

/// Translator choice for schedules that are not constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Texp,
    TexpMinus,
    #[serde(rename = "texppp", alias = "texp_plus_plus")]
    TexpPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationKind {
    ExpConstant,
    Texp,
    TexpMinus,
    TexpPlusPlus,
}

/// Momentum correction applied just before iteration `t` of the
/// exponential-LR run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub t: usize,
    pub alpha_t: f64,
    pub alpha_next: f64,
    pub eta_prev: f64,
    pub eta_cur: f64,
}

/// Piecewise-constant stretch of the input schedule and its root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub lr: f64,
    pub wd: f64,
    pub alpha_star: f64,
    /// Per-iteration multiplicative growth `alpha_star^-2` of the rescaled LR.
    pub growth_per_iter: f64,
    /// `lambda*eta / (1 - sqrt(gamma))^2`.
    pub feasibility_margin: f64,
}

/// Output of a translator.
///
/// `eta` and `lambda` describe the weight-decay run the translation is
/// equivalent to. For TEXP-- this is the constant-LR schedule with shrinking
/// weight decay rather than the input step schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatedSchedule {
    pub kind: TranslationKind,
    pub gamma: f64,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha_minus1: f64,
    /// `alpha_0 ..= alpha_n`.
    pub alpha: Vec<f64>,
    pub log_p_minus1: f64,
    /// `log P_0 ..= log P_n`.
    pub log_p: Vec<f64>,
    /// `log eta_tilde_0 .. log eta_tilde_{n-1}`.
    pub log_eta_tilde: Vec<f64>,
    /// Rescaled LR that goes with the initial momentum buffer.
    pub log_eta_tilde_init: f64,
    pub corrections: Vec<Correction>,
    pub phases: Vec<PhaseSummary>,
}

impl TranslatedSchedule {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: TranslationKind,
        gamma: f64,
        eta: Vec<f64>,
        lambda: Vec<f64>,
        alpha_minus1: f64,
        alpha: Vec<f64>,
        corrections: Vec<Correction>,
        phases: Vec<PhaseSummary>,
    ) -> Self {
        debug_assert_eq!(alpha.len(), eta.len() + 1);
        let log_p_minus1 = -alpha_minus1.ln();
        let log_p: Vec<f64> = alpha
            .iter()
            .scan(log_p_minus1, |acc, a| {
                *acc -= a.ln();
                Some(*acc)
            })
            .collect();
        let log_eta_tilde = eta
            .iter()
            .enumerate()
            .map(|(t, e)| log_p[t] + log_p[t + 1] + e.ln())
            .collect();
        let log_eta_tilde_init = log_p_minus1 + log_p[0] + eta[0].ln();
        Self {
            kind,
            gamma,
            eta,
            lambda,
            alpha_minus1,
            alpha,
            log_p_minus1,
            log_p,
            log_eta_tilde,
            log_eta_tilde_init,
            corrections,
            phases,
        }
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// `eta_tilde_t`, or `None` once it no longer fits in an `f64`.
    pub fn eta_tilde(&self, t: usize) -> Option<f64> {
        let v = self.log_eta_tilde[t].exp();
        (v.is_finite() && v > 0.0).then_some(v)
    }

    /// First iteration whose rescaled LR is not representable.
    pub fn first_overflow(&self) -> Option<usize> {
        (0..self.len()).find(|&t| self.eta_tilde(t).is_none())
    }

    /// `log P_t` for `t >= -1`.
    pub fn log_p_at(&self, t: isize) -> f64 {
        if t < 0 {
            self.log_p_minus1
        } else {
            self.log_p[t as usize]
        }
    }

    pub fn correction_at(&self, t: usize) -> Option<&Correction> {
        self.corrections
            .binary_search_by_key(&t, |c| c.t)
            .ok()
            .map(|i| &self.corrections[i])
    }

    /// One row per iteration:
    /// `t,eta_tilde,log_eta_tilde,alpha_t,logP_t,correction_flag`.
    /// `eta_tilde` is left empty past overflow.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,eta_tilde,log_eta_tilde,alpha_t,logP_t,correction_flag")?;
        for t in 0..self.len() {
            let eta = self
                .eta_tilde(t)
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{t},{eta},{:.16e},{:.16e},{:.16e},{}",
                self.log_eta_tilde[t],
                self.alpha[t],
                self.log_p[t],
                u8::from(self.correction_at(t).is_some())
            )?;
        }
        Ok(())
    }
}

fn phase_summaries(
    gamma: f64,
    eta: &[f64],
    lambda: &[f64],
    starts: &[usize],
) -> Result<Vec<PhaseSummary>> {
    let n = eta.len();
    let limit = feasibility_limit(gamma);
    starts
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < n)
        .map(|(i, &start)| {
            let end = starts.get(i + 1).copied().unwrap_or(n).min(n);
            let (lr, wd) = (eta[start], lambda[start]);
            let roots = solve_for_product(gamma, lr * wd, Some(i))?;
            Ok(PhaseSummary {
                index: i,
                start,
                end,
                lr,
                wd,
                alpha_star: roots.z1,
                growth_per_iter: roots.z1.powi(-2),
                feasibility_margin: lr * wd / limit,
            })
        })
        .collect()
}

/// Starts of maximal runs on which `(eta, lambda)` is constant.
fn run_starts(eta: &[f64], lambda: &[f64]) -> Vec<usize> {
    (0..eta.len())
        .filter(|&t| t == 0 || eta[t] != eta[t - 1] || lambda[t] != lambda[t - 1])
        .collect()
}

fn phase_starts(spec: &ScheduleSpec, eta: &[f64], lambda: &[f64]) -> Vec<usize> {
    match spec.kind {
        ScheduleKind::StepDecay => spec.phases.iter().map(|p| p.start).collect(),
        _ => run_starts(eta, lambda),
    }
}

/// Constant LR and WD: `alpha_t` is the larger root for every `t`.
pub fn translate_constant(gamma: f64, eta: f64, lambda: f64, n: usize) -> Result<TranslatedSchedule> {
    if n == 0 {
        return Err(ScheduleError::InvalidSpec("schedule length must be positive".into()));
    }
    let spec = ScheduleSpec::constant(gamma, eta, lambda, n);
    spec.validate()?;
    let (eta_v, lambda_v) = spec.expand()?;
    let phases = phase_summaries(gamma, &eta_v, &lambda_v, &[0])?;
    let a = phases[0].alpha_star;
    Ok(TranslatedSchedule::assemble(
        TranslationKind::ExpConstant,
        gamma,
        eta_v,
        lambda_v,
        1.0 / a,
        vec![a; n + 1],
        Vec::new(),
        phases,
    ))
}

fn texp_alphas(phases: &[PhaseSummary], n: usize) -> (f64, Vec<f64>) {
    let a0 = phases[0].alpha_star;
    let mut alpha = Vec::with_capacity(n + 1);
    alpha.push(a0);
    let mut p = 0;
    for t in 1..=n {
        while p + 1 < phases.len() && phases[p + 1].start < t {
            p += 1;
        }
        alpha.push(phases[p].alpha_star);
    }
    (1.0 / a0, alpha)
}

fn texp_corrections(phases: &[PhaseSummary], eta: &[f64], alpha: &[f64]) -> Vec<Correction> {
    phases
        .iter()
        .skip(1)
        .map(|ph| {
            let t = ph.start;
            Correction {
                t,
                alpha_t: alpha[t],
                alpha_next: alpha[t + 1],
                eta_prev: eta[t - 1],
                eta_cur: eta[t],
            }
        })
        .collect()
}

/// TEXP translation of a piecewise-constant schedule.
pub fn translate_step_decay_texp(spec: &ScheduleSpec) -> Result<TranslatedSchedule> {
    let (eta, lambda) = spec.expand()?;
    let starts = phase_starts(spec, &eta, &lambda);
    let phases = phase_summaries(spec.gamma, &eta, &lambda, &starts)?;
    let (am1, alpha) = texp_alphas(&phases, eta.len());
    let corrections = texp_corrections(&phases, &eta, &alpha);
    let kind = if phases.len() == 1 {
        TranslationKind::ExpConstant
    } else {
        TranslationKind::Texp
    };
    Ok(TranslatedSchedule::assemble(
        kind,
        spec.gamma,
        eta,
        lambda,
        am1,
        alpha,
        corrections,
        phases,
    ))
}

/// TEXP--: the TEXP `alpha` sequence with the LR held at its initial value.
///
/// The equivalent weight-decay run keeps `eta = eta_0` and uses
/// `lambda_I * eta_I / eta_0` in phase `I`.
pub fn translate_texp_minus(spec: &ScheduleSpec) -> Result<TranslatedSchedule> {
    let (eta, lambda) = spec.expand()?;
    let starts = phase_starts(spec, &eta, &lambda);
    let phases = phase_summaries(spec.gamma, &eta, &lambda, &starts)?;
    let eta0 = eta[0];
    let lambda_eq: Vec<f64> = eta.iter().zip(&lambda).map(|(e, l)| l * e / eta0).collect();
    let eta_eq = vec![eta0; eta.len()];
    let (am1, alpha) = texp_alphas(&phases, eta.len());
    let corrections = texp_corrections(&phases, &eta_eq, &alpha);
    Ok(TranslatedSchedule::assemble(
        TranslationKind::TexpMinus,
        spec.gamma,
        eta_eq,
        lambda_eq,
        am1,
        alpha,
        corrections,
        phases,
    ))
}

/// TEXP++ for arbitrary per-iteration `eta` and `lambda`.
///
/// `init` gives `(alpha_0, alpha_{-1})`; `None` means `(1, 1)`, which makes
/// the rescaled run start from exactly the same state as the original.
pub fn translate_texppp(
    gamma: f64,
    eta: &[f64],
    lambda: &[f64],
    init: Option<(f64, f64)>,
) -> Result<TranslatedSchedule> {
    check_gamma(gamma)?;
    let spec = ScheduleSpec::explicit(gamma, eta.to_vec(), lambda.to_vec());
    spec.validate()?;
    let (a0, am1) = init.unwrap_or((1.0, 1.0));
    if !(a0 > 0.0 && am1 > 0.0 && a0.is_finite() && am1.is_finite()) {
        return Err(ScheduleError::InvalidSpec(format!(
            "initial alphas must be positive, got ({a0}, {am1})"
        )));
    }
    let n = eta.len();
    let mut alpha = Vec::with_capacity(n + 1);
    alpha.push(a0);
    for t in 1..=n {
        let e1 = eta[t - 1];
        let e2 = if t >= 2 { eta[t - 2] } else { eta[0] };
        let prev = alpha[t - 1];
        let a = 1.0 - e1 * lambda[t - 1] + (e1 / e2) * gamma * (1.0 - 1.0 / prev);
        if !(a > 0.0) {
            return Err(ScheduleError::NonPositiveAlpha { t, value: a });
        }
        alpha.push(a);
    }
    let starts = run_starts(eta, lambda);
    // Phase summaries are informational here; infeasible phases do not stop
    // the recursion.
    let phases = phase_summaries(gamma, eta, lambda, &starts).unwrap_or_default();
    Ok(TranslatedSchedule::assemble(
        TranslationKind::TexpPlusPlus,
        gamma,
        eta.to_vec(),
        lambda.to_vec(),
        am1,
        alpha,
        Vec::new(),
        phases,
    ))
}

/// Cosine LR `eta0 (1 + cos(pi t / T)) / 2` for `t < T`, translated with TEXP++.
pub fn translate_cosine(gamma: f64, eta0: f64, lambda: f64, total: usize) -> Result<TranslatedSchedule> {
    let (eta, lam) = ScheduleSpec::cosine(gamma, eta0, lambda, total).expand()?;
    translate_texppp(gamma, &eta, &lam, None)
}

/// Dispatch on the schedule kind and translator.
///
/// TEXP and TEXP-- treat any schedule as piecewise constant; cosine
/// schedules are always translated with TEXP++.
pub fn translate(spec: &ScheduleSpec, method: Method) -> Result<TranslatedSchedule> {
    spec.validate()?;
    match (spec.kind, method) {
        (ScheduleKind::Cosine, _) | (_, Method::TexpPlusPlus) => {
            let (eta, lambda) = spec.expand()?;
            translate_texppp(spec.gamma, &eta, &lambda, None)
        }
        (ScheduleKind::Constant, _) => translate_constant(
            spec.gamma,
            spec.eta0.unwrap_or_default(),
            spec.wd.unwrap_or_default(),
            spec.len(),
        ),
        (_, Method::Texp) => translate_step_decay_texp(spec),
        (_, Method::TexpMinus) => translate_texp_minus(spec),
    }
}
