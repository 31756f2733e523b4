//! State maps for SGD with momentum and weight decay.
//!
//! A training state is the quadruple `(theta, eta, theta', eta')` of current
//! parameters and learning rate together with the buffered ones from the
//! previous step. The maps here act on that quadruple:
//!
//! * `Pi1(c)`..`Pi4(c)` multiply one coordinate by `c`,
//! * `Gd { rho, t, .. }` takes one step with parameter shrink factor `rho`,
//!   `(rho theta + eta (gamma (theta - theta')/eta' - grad L_t(theta)), eta, theta, eta)`,
//! * `Canon` rewrites the buffer so that `eta' = eta` while keeping the
//!   momentum term `(theta - theta')/eta'` intact,
//! * `Compose(vec![f, g])` is `f` after `g`.
//!
//! The `verify_*` functions check the algebraic identities between these maps
//! on random states and objectives.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::scaleinv::{
    BnStats, NormLogistic, NormQuadratic, Objective, ObjectiveError, PlainQuadratic, TinyNormMlp,
};
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scaling constant must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("lemma `{lemma}` violated in trial {trial} (relative error {rel_err:e})")]
    LemmaViolation {
        lemma: String,
        trial: usize,
        rel_err: f64,
        state: Box<TrainState>,
    },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

pub type Result<T> = std::result::Result<T, StateError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: Vec<f64>,
    pub eta: f64,
    pub theta_buf: Vec<f64>,
    pub eta_buf: f64,
}

impl TrainState {
    pub fn new(theta: Vec<f64>, eta: f64, theta_buf: Vec<f64>, eta_buf: f64) -> Result<Self> {
        let s = Self {
            theta,
            eta,
            theta_buf,
            eta_buf,
        };
        s.validate()?;
        Ok(s)
    }

    /// Momentum-free state; the buffer is unused and set to `(theta, eta)`.
    pub fn two_coord(theta: Vec<f64>, eta: f64) -> Result<Self> {
        Self::new(theta.clone(), eta, theta, eta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.theta_buf.len() {
            return Err(StateError::DimensionMismatch {
                expected: self.theta.len(),
                got: self.theta_buf.len(),
            });
        }
        if !(self.eta > 0.0 && self.eta.is_finite() && self.eta_buf > 0.0 && self.eta_buf.is_finite())
        {
            return Err(StateError::InvalidState(format!(
                "learning rates must be positive and finite, got eta={} eta'={}",
                self.eta, self.eta_buf
            )));
        }
        if !self.theta.iter().chain(&self.theta_buf).all(|v| v.is_finite()) {
            return Err(StateError::InvalidState("non-finite parameter entry".into()));
        }
        Ok(())
    }

    /// Largest relative difference over the four coordinates.
    pub fn rel_err(&self, other: &Self) -> f64 {
        vecops::rel_dist(&self.theta, &other.theta)
            .max(vecops::rel_dist(&self.theta_buf, &other.theta_buf))
            .max(vecops::rel_diff_scalar(self.eta, other.eta))
            .max(vecops::rel_diff_scalar(self.eta_buf, other.eta_buf))
    }

    /// Relative difference of the current `(theta, eta)` only.
    pub fn rel_err_current(&self, other: &Self) -> f64 {
        vecops::rel_dist(&self.theta, &other.theta).max(vecops::rel_diff_scalar(self.eta, other.eta))
    }
}

#[derive(Clone)]
pub enum StateMap {
    Pi1(f64),
    Pi2(f64),
    Pi3(f64),
    Pi4(f64),
    Gd {
        rho: f64,
        t: u64,
        gamma: f64,
        objective: Arc<dyn Objective>,
    },
    Canon,
    Compose(Vec<StateMap>),
}

impl fmt::Debug for StateMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pi1(c) => write!(f, "Pi1({c})"),
            Self::Pi2(c) => write!(f, "Pi2({c})"),
            Self::Pi3(c) => write!(f, "Pi3({c})"),
            Self::Pi4(c) => write!(f, "Pi4({c})"),
            Self::Gd {
                rho,
                t,
                gamma,
                objective,
            } => write!(f, "GD(rho={rho}, t={t}, gamma={gamma}, {})", objective.name()),
            Self::Canon => write!(f, "N"),
            Self::Compose(ms) => f.debug_list().entries(ms).finish(),
        }
    }
}

impl StateMap {
    /// `Pi1^c Pi2^{c^2} Pi3^c Pi4^{c^2}`.
    pub fn equivalent_scaling(c: f64) -> Self {
        Self::Compose(vec![
            Self::Pi1(c),
            Self::Pi2(c * c),
            Self::Pi3(c),
            Self::Pi4(c * c),
        ])
    }

    /// `Pi1^c Pi2^{c^2}`, the equivalent scaling of a momentum-free state.
    pub fn equivalent_scaling_2(c: f64) -> Self {
        Self::Compose(vec![Self::Pi1(c), Self::Pi2(c * c)])
    }

    pub fn gd(rho: f64, t: u64, gamma: f64, objective: Arc<dyn Objective>) -> Self {
        Self::Gd {
            rho,
            t,
            gamma,
            objective,
        }
    }

    pub fn then(self, after: StateMap) -> Self {
        Self::Compose(vec![after, self])
    }
}

fn check_scale(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(StateError::NonPositiveScale(c))
    }
}

pub fn apply(map: &StateMap, s: &TrainState) -> Result<TrainState> {
    let mut out = s.clone();
    apply_in_place(map, &mut out)?;
    Ok(out)
}

pub fn apply_in_place(map: &StateMap, s: &mut TrainState) -> Result<()> {
    match map {
        StateMap::Pi1(c) => {
            check_scale(*c)?;
            vecops::scale_in_place(&mut s.theta, *c);
        }
        StateMap::Pi2(c) => {
            check_scale(*c)?;
            s.eta *= c;
        }
        StateMap::Pi3(c) => {
            check_scale(*c)?;
            vecops::scale_in_place(&mut s.theta_buf, *c);
        }
        StateMap::Pi4(c) => {
            check_scale(*c)?;
            s.eta_buf *= c;
        }
        StateMap::Gd {
            rho,
            t,
            gamma,
            objective,
        } => {
            if s.theta.len() != objective.dim() {
                return Err(StateError::DimensionMismatch {
                    expected: objective.dim(),
                    got: s.theta.len(),
                });
            }
            let batch = objective.batch(*t);
            let (_, g) = objective.loss_grad(&s.theta, &batch)?;
            let m = gamma / s.eta_buf;
            let next: Vec<f64> = s
                .theta
                .iter()
                .zip(&s.theta_buf)
                .zip(&g)
                .map(|((th, tb), gi)| rho * th + s.eta * (m * (th - tb) - gi))
                .collect();
            s.theta_buf = std::mem::replace(&mut s.theta, next);
            s.eta_buf = s.eta;
        }
        StateMap::Canon => {
            let r = s.eta / s.eta_buf;
            for (tb, th) in s.theta_buf.iter_mut().zip(&s.theta) {
                *tb = th - r * (th - *tb);
            }
            s.eta_buf = s.eta;
        }
        StateMap::Compose(maps) => {
            for m in maps.iter().rev() {
                apply_in_place(m, s)?;
            }
        }
    }
    Ok(())
}

/// Buffer correction applied at a phase boundary of an exponential-LR run:
///
/// `H_t = Pi2^{a_t eta_{t-1}/eta_t} Pi3^{a_{t+1}} Pi4^{a_{t+1}} N
///        Pi3^{1/a_t} Pi4^{1/a_t} Pi2^{1/a_t} Pi2^{eta_t/eta_{t-1}}`.
///
/// The net factor on `eta` is one, so only the buffered coordinates change.
pub fn build_ht(alpha_t: f64, alpha_t1: f64, eta_prev: f64, eta_cur: f64) -> Result<StateMap> {
    for v in [alpha_t, alpha_t1, eta_prev, eta_cur] {
        check_scale(v)?;
    }
    Ok(StateMap::Compose(vec![
        StateMap::Pi2(alpha_t * eta_prev / eta_cur),
        StateMap::Pi3(alpha_t1),
        StateMap::Pi4(alpha_t1),
        StateMap::Canon,
        StateMap::Pi3(1.0 / alpha_t),
        StateMap::Pi4(1.0 / alpha_t),
        StateMap::Pi2(1.0 / alpha_t),
        StateMap::Pi2(eta_cur / eta_prev),
    ]))
}

/// Outcome of one randomized identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub rel_err: f64,
    pub objective: String,
    pub state: TrainState,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// `Err(LemmaViolation)` carrying the first counterexample, if any.
    pub fn into_result(self) -> Result<Self> {
        match self.violations.first() {
            None => Ok(self),
            Some(v) => Err(StateError::LemmaViolation {
                lemma: self.lemma.clone(),
                trial: v.trial,
                rel_err: v.rel_err,
                state: Box::new(v.state.clone()),
            }),
        }
    }
}

pub const LEMMA_TOL: f64 = 1e-10;

const HARNESS_DIM: usize = 10;

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target = rng.random_range(0.5..2.0);
    vecops::scale(&v, target / vecops::norm(&v))
}

/// Random state: entries uniform in [-1, 1] rescaled to norm in [0.5, 2],
/// learning rates log-uniform in [1e-3, 1].
pub fn random_state(rng: &mut impl Rng, dim: usize) -> TrainState {
    TrainState {
        theta: random_vec(rng, dim),
        eta: log_uniform(rng, 1e-3, 1.0),
        theta_buf: random_vec(rng, dim),
        eta_buf: log_uniform(rng, 1e-3, 1.0),
    }
}

/// Scale-invariant objective for trial `i`, cycling through the provided kinds.
fn trial_objective(i: usize, seed: u64) -> Arc<dyn Objective> {
    let s = rng::child_seed(seed, i as u64);
    // Constructors only fail on zero sizes, which never occur here.
    match i % 4 {
        0 => Arc::new(NormQuadratic::new(HARNESS_DIM, 0.0, s).expect("valid size")),
        1 => Arc::new(NormQuadratic::new(HARNESS_DIM, 0.5, s).expect("valid size")),
        2 => Arc::new(NormLogistic::sampled(HARNESS_DIM, 32, BnStats::PerBatch, s).expect("valid size")),
        _ => Arc::new(TinyNormMlp::new(5, 2, 16, false, s).expect("valid size")),
    }
}

type Trial = dyn Fn(&mut ChaCha8Rng, Arc<dyn Objective>) -> Result<(f64, TrainState)> + Sync;

fn run_harness(
    lemma: &str,
    trials: usize,
    seed: u64,
    objective: &(dyn Fn(usize) -> Arc<dyn Objective> + Sync),
    trial: &Trial,
) -> Result<LemmaReport> {
    let outcomes: Vec<(usize, String, f64, TrainState)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let obj = objective(i);
            let name = obj.name().to_string();
            trial(&mut rng, obj).map(|(err, s)| (i, name, err, s))
        })
        .collect::<Result<_>>()?;
    let max_rel_err = outcomes.iter().map(|o| o.2).fold(0.0, f64::max);
    let violations = outcomes
        .into_iter()
        .filter(|o| !(o.2 <= LEMMA_TOL))
        .map(|(trial, objective, rel_err, state)| Violation {
            trial,
            rel_err,
            objective,
            state,
        })
        .collect();
    Ok(LemmaReport {
        lemma: lemma.to_string(),
        trials,
        max_rel_err,
        violations,
    })
}

fn two_coord_state(rng: &mut impl Rng, dim: usize) -> TrainState {
    let theta = random_vec(rng, dim);
    let eta = log_uniform(rng, 1e-3, 1.0);
    TrainState {
        theta_buf: theta.clone(),
        theta,
        eta,
        eta_buf: eta,
    }
}

/// `GD^rho_t = Pi2^rho Pi1^rho GD_t Pi2^{1/rho}` on momentum-free states.
pub fn verify_lemma_gdw(trials: usize, seed: u64) -> Result<LemmaReport> {
    run_harness("gdw", trials, seed, &|i| trial_objective(i, seed), &|rng, obj| {
        let s = two_coord_state(rng, obj.dim());
        let rho = rng.random_range(0.9..1.0);
        let t = rng.random_range(0..1000);
        let lhs = apply(&StateMap::gd(rho, t, 0.0, obj.clone()), &s)?;
        let rhs = apply(
            &StateMap::Compose(vec![
                StateMap::Pi2(rho),
                StateMap::Pi1(rho),
                StateMap::gd(1.0, t, 0.0, obj),
                StateMap::Pi2(1.0 / rho),
            ]),
            &s,
        )?;
        Ok((lhs.rel_err_current(&rhs), s))
    })
}

fn commute_trial(
    rng: &mut ChaCha8Rng,
    obj: Arc<dyn Objective>,
    momentum: bool,
) -> Result<(f64, TrainState)> {
    let dim = obj.dim();
    let (s, gamma) = if momentum {
        (random_state(rng, dim), rng.random_range(0.0..0.99))
    } else {
        (two_coord_state(rng, dim), 0.0)
    };
    let rho = rng.random_range(0.9..=1.0);
    let c = log_uniform(rng, 0.1, 10.0);
    let t = rng.random_range(0..1000);
    let scaling = if momentum {
        StateMap::equivalent_scaling(c)
    } else {
        StateMap::equivalent_scaling_2(c)
    };
    let gd = StateMap::gd(rho, t, gamma, obj);
    let lhs = apply(&StateMap::Compose(vec![gd.clone(), scaling.clone()]), &s)?;
    let rhs = apply(&StateMap::Compose(vec![scaling, gd]), &s)?;
    let err = if momentum {
        lhs.rel_err(&rhs)
    } else {
        lhs.rel_err_current(&rhs)
    };
    Ok((err, s))
}

/// Equivalent scalings commute with `GD^rho_t` (momentum-free form).
pub fn verify_lemma_commute(trials: usize, seed: u64) -> Result<LemmaReport> {
    run_harness("commute", trials, seed, &|i| trial_objective(i, seed), &|rng, obj| {
        commute_trial(rng, obj, false)
    })
}

/// Equivalent scalings commute with `GD^rho_t` on the full four-coordinate state.
pub fn verify_lemma_commute_momentum(trials: usize, seed: u64) -> Result<LemmaReport> {
    run_harness(
        "commute_momentum",
        trials,
        seed,
        &|i| trial_objective(i, seed),
        &|rng, obj| commute_trial(rng, obj, true),
    )
}

/// The commutation check run against a plain quadratic. A correct harness
/// reports violations here.
pub fn verify_negative_control(trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut r = run_harness(
        "negative_control",
        trials,
        seed,
        &|i| Arc::new(PlainQuadratic::new(HARNESS_DIM, rng::child_seed(seed, i as u64)).expect("valid size")),
        &|rng, obj| commute_trial(rng, obj, true),
    )?;
    r.lemma = "negative_control".into();
    Ok(r)
}

/// `GD^rho_t(s) = Pi4^a Pi2^a Pi1^a GD_t Pi2^{1/a} Pi3^a Pi4^a (s)` for states
/// with `eta = eta'`, where `a + gamma/a = rho + gamma`. Both roots `a` are
/// tested in every trial.
pub fn verify_lemma_gdw_momentum(trials: usize, seed: u64) -> Result<LemmaReport> {
    run_harness(
        "gdw_momentum",
        trials,
        seed,
        &|i| trial_objective(i, seed),
        &|rng, obj| {
            let gamma = rng.random_range(0.5..0.95);
            // Real roots need rho >= 2 sqrt(gamma) - gamma = 1 - (1 - sqrt(gamma))^2.
            let rho_min = 2.0 * f64::sqrt(gamma) - gamma;
            let rho = rng.random_range(rho_min..1.0);
            let mut s = random_state(rng, obj.dim());
            s.eta_buf = s.eta;
            let t = rng.random_range(0..1000);
            let b = rho + gamma;
            let disc = (b * b - 4.0 * gamma).max(0.0).sqrt();
            let hi = 0.5 * (b + disc);
            let roots = [hi, gamma / hi];
            let lhs = apply(&StateMap::gd(rho, t, gamma, obj.clone()), &s)?;
            let mut worst: f64 = 0.0;
            for a in roots {
                let rhs = apply(
                    &StateMap::Compose(vec![
                        StateMap::Pi4(a),
                        StateMap::Pi2(a),
                        StateMap::Pi1(a),
                        StateMap::gd(1.0, t, gamma, obj.clone()),
                        StateMap::Pi2(1.0 / a),
                        StateMap::Pi3(a),
                        StateMap::Pi4(a),
                    ]),
                    &s,
                )?;
                worst = worst.max(lhs.rel_err(&rhs));
            }
            Ok((worst, s))
        },
    )
}

/// `GD^rho_t N = GD^rho_t` and `N` commutes with equivalent scalings.
pub fn verify_canonicalization(trials: usize, seed: u64) -> Result<LemmaReport> {
    run_harness(
        "canonicalization",
        trials,
        seed,
        &|i| trial_objective(i, seed),
        &|rng, obj| {
            let s = random_state(rng, obj.dim());
            let gamma = rng.random_range(0.0..0.99);
            let rho = rng.random_range(0.9..=1.0);
            let t = rng.random_range(0..1000);
            let c = log_uniform(rng, 0.1, 10.0);
            let gd = StateMap::gd(rho, t, gamma, obj);
            let a = apply(&StateMap::Compose(vec![gd.clone(), StateMap::Canon]), &s)?;
            let b = apply(&gd, &s)?;
            let scaling = StateMap::equivalent_scaling(c);
            let c1 = apply(&StateMap::Compose(vec![StateMap::Canon, scaling.clone()]), &s)?;
            let c2 = apply(&StateMap::Compose(vec![scaling, StateMap::Canon]), &s)?;
            Ok((a.rel_err(&b).max(c1.rel_err(&c2)), s))
        },
    )
}

/// Every harness in one call, negative control last.
pub fn verify_all(trials: usize, seed: u64) -> Result<Vec<LemmaReport>> {
    Ok(vec![
        verify_lemma_gdw(trials, seed)?,
        verify_lemma_commute(trials, seed)?,
        verify_lemma_commute_momentum(trials, seed)?,
        verify_lemma_gdw_momentum(trials, seed)?,
        verify_canonicalization(trials, seed)?,
        verify_negative_control(trials, seed)?,
    ])
}
