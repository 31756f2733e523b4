//! Learning-rate schedule translation.
//!
//! SGD with momentum `gamma`, learning rate `eta_t` and weight decay
//! `lambda_t` on a scale-invariant loss traces the same sequence of networks
//! as weight-decay-free SGD with momentum `gamma` and a rescaled learning rate
//! `eta_tilde_t = P_t * P_{t+1} * eta_t`, where `P_t = prod_{i=-1..=t} 1/alpha_i`.
//! The translators in this module differ only in how they choose the
//! `alpha_t` sequence:
//!
//! * constant LR: every `alpha_t` is the larger root of
//!   `x^2 - (1 + gamma - lambda*eta) x + gamma = 0`;
//! * TEXP: the per-step root for the phase the previous iteration belonged to,
//!   plus a one-time momentum correction at every phase start;
//! * TEXP--: as TEXP but without the instant LR drop at phase starts, which
//!   corresponds to a constant LR whose weight decay shrinks per phase;
//! * TEXP++: the exact recursion
//!   `alpha_t = 1 - eta_{t-1} lambda_{t-1} + (eta_{t-1}/eta_{t-2}) gamma (1 - 1/alpha_{t-1})`,
//!   which needs no correction at all.
//!
//! `P_t` is accumulated in the log domain; linear `eta_tilde` values are kept
//! only while they are representable.

mod analysis;
mod roots;
mod spec;
mod translate;

pub use analysis::{
    alpha_bounds_check, alpha_bounds_check_at, texp_texppp_deviation, BoundsReport, DeviationEntry, DeviationReport,
};
pub use roots::{feasibility_limit, solve_quadratic, HyperParams, QuadRoots};
pub use spec::{Phase, ScheduleKind, ScheduleSpec};
pub use translate::{
    translate, translate_constant, translate_cosine, translate_step_decay_texp,
    translate_texp_minus, translate_texppp, Correction, Method, PhaseSummary,
    TranslatedSchedule, TranslationKind,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    /// `lambda * eta` exceeds `(1 - sqrt(gamma))^2`, so the characteristic
    /// quadratic has complex roots.
    #[error("infeasible{}: lambda*eta = {lambda_eta:e} exceeds (1-sqrt(gamma))^2 = {limit:e}", phase_label(*.phase))]
    InfeasibleRoots {
        phase: Option<usize>,
        lambda_eta: f64,
        limit: f64,
    },
    #[error("alpha_{t} = {value} is not positive")]
    NonPositiveAlpha { t: usize, value: f64 },
    #[error("alpha_{t} = {value} lies outside [{lower}, 1]")]
    BoundViolation { t: usize, value: f64, lower: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSpec(String),
}

fn phase_label(phase: Option<usize>) -> String {
    match phase {
        Some(p) => format!(" phase {p}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, ScheduleError>;
