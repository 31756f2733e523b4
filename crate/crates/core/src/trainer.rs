//! SGD with momentum and weight decay, and its weight-decay-free twin driven
//! by a translated exponential learning-rate schedule.
//!
//! Both runs iterate the difference-quotient form
//! `(theta_{t+1} - theta_t)/eta_t = gamma (theta_t - theta_{t-1})/eta_{t-1} - grad(L_t + lambda_t/2 |theta|^2)(theta_t)`
//! with `theta_{-1} = theta_0 - v_0 eta_0`. The exponential run uses
//! `lambda = 0`, LR `eta_tilde_t`, starts from `(P_0 theta_0, P_{-1} theta_{-1})`
//! and applies the buffer correction `H_t` at every listed phase boundary.
//! Its parameters then satisfy `theta_tilde_t = P_t theta_t`.
//!
//! With `stabilize_every = Some(k)` the state is rescaled by an equivalent
//! scaling every `k` steps so that the stored parameter norm is one. The
//! accumulated log-scale is tracked, and every recorded quantity is reported
//! in the unscaled frame.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lrsched::{ScheduleError, TranslatedSchedule};
use crate::scaleinv::{Objective, ObjectiveError};
use crate::statealg::{self, StateError, TrainState};
use crate::vecops;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value at iteration {t}")]
    NumericalBlowup { t: usize },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectories differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("trajectory was recorded without directions")]
    MissingDirections,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub objective: Arc<dyn Objective>,
    pub gamma: f64,
    pub init_theta: Vec<f64>,
    /// Initial velocity; `None` means zero.
    pub init_v: Option<Vec<f64>>,
    pub steps: usize,
    pub stabilize_every: Option<usize>,
    /// Keep the unit direction of every iterate.
    pub record_directions: bool,
}

impl RunConfig {
    pub fn new(objective: Arc<dyn Objective>, gamma: f64, init_theta: Vec<f64>, steps: usize) -> Self {
        Self {
            objective,
            gamma,
            init_theta,
            init_v: None,
            steps,
            stabilize_every: None,
            record_directions: false,
        }
    }

    pub fn with_velocity(mut self, v: Vec<f64>) -> Self {
        self.init_v = Some(v);
        self
    }

    pub fn stabilized(mut self, every: Option<usize>) -> Self {
        self.stabilize_every = every;
        self
    }

    pub fn recording_directions(mut self) -> Self {
        self.record_directions = true;
        self
    }

    fn validate(&self, schedule_len: usize) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if schedule_len < self.steps {
            return bad(format!(
                "schedule covers {schedule_len} iterations but {} steps were requested",
                self.steps
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.gamma));
        }
        let dim = self.objective.dim();
        if self.init_theta.len() != dim {
            return bad(format!(
                "init_theta has {} entries, objective expects {dim}",
                self.init_theta.len()
            ));
        }
        if vecops::norm_sq(&self.init_theta) == 0.0 {
            return bad("init_theta must be nonzero".into());
        }
        if let Some(v) = &self.init_v {
            if v.len() != dim {
                return bad(format!("init_v has {} entries, objective expects {dim}", v.len()));
            }
        }
        if let Some(k) = self.stabilize_every {
            if k == 0 {
                return bad("stabilize_every must be positive".into());
            }
            if !self.objective.scale_invariant() {
                return bad(format!(
                    "stabilization needs a scale-invariant objective, `{}` is not",
                    self.objective.name()
                ));
            }
        }
        Ok(())
    }
}

/// State of iteration `t`, evaluated on batch `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub log_norm: f64,
    /// Cosine between `theta_t` and `theta_0`.
    pub dir_cos_ref: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// `||theta_t - theta_{t-1}||`.
    pub update_norm: f64,
    /// Log of the LR used to leave this iterate; absent on the final record.
    pub log_eta: Option<f64>,
    /// `log P_t` of the exponential run.
    pub log_p: Option<f64>,
    /// Accumulated stabilization log-scale when this record was taken.
    pub log_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    WeightDecay,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: RunKind,
    pub gamma: f64,
    /// `log eta_t` for `t < steps`.
    pub log_eta: Vec<f64>,
    /// Weight decay of each step; zero for the exponential run.
    pub lambda: Vec<f64>,
    /// `log ||theta_{-1}||`.
    pub init_buf_log_norm: f64,
    /// `log eta_{-1}`.
    pub init_log_eta: f64,
    pub records: Vec<StepRecord>,
    pub directions: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// CSV with columns
    /// `t,log_norm,dir_cos_ref,loss,grad_norm,update_norm,lr_effective_log`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,log_norm,dir_cos_ref,loss,grad_norm,update_norm,lr_effective_log")?;
        for r in &self.records {
            let lr = r.log_eta.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t, r.log_norm, r.dir_cos_ref, r.loss, r.grad_norm, r.update_norm, lr
            )?;
        }
        Ok(())
    }
}

/// Per-step learning rate in both linear and log form.
struct Lr<'a> {
    linear: Option<&'a [f64]>,
    log: Vec<f64>,
}

impl Lr<'_> {
    /// LR in a frame whose parameters are scaled by `exp(log_scale)`.
    fn at(&self, t: usize, log_scale: f64) -> f64 {
        match self.linear {
            Some(v) if log_scale == 0.0 => v[t],
            _ => (self.log[t] + 2.0 * log_scale).exp(),
        }
    }
}

struct Setup<'a> {
    kind: RunKind,
    lr: Lr<'a>,
    rho: Vec<f64>,
    lambda: Vec<f64>,
    log_p: Option<&'a [f64]>,
    sched: Option<&'a TranslatedSchedule>,
    state: TrainState,
    init_log_eta: f64,
}

/// Run SGD with momentum and weight decay `lambda` at LR `eta`.
pub fn run_sgd_wd(cfg: &RunConfig, eta: &[f64], lambda: &[f64]) -> Result<Trajectory> {
    if eta.len() != lambda.len() {
        return Err(TrainError::InvalidConfig(format!(
            "eta has {} entries but lambda has {}",
            eta.len(),
            lambda.len()
        )));
    }
    if let Some(t) = eta.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(TrainError::InvalidConfig(format!("eta[{t}] must be positive")));
    }
    cfg.validate(eta.len())?;
    let n = cfg.steps;
    let theta_buf = initial_buffer(cfg, eta[0]);
    let state = TrainState::new(cfg.init_theta.clone(), eta[0], theta_buf, eta[0])?;
    run(
        cfg,
        Setup {
            kind: RunKind::WeightDecay,
            lr: Lr {
                linear: Some(&eta[..n]),
                log: eta[..n].iter().map(|e| e.ln()).collect(),
            },
            rho: (0..n).map(|t| 1.0 - eta[t] * lambda[t]).collect(),
            lambda: lambda[..n].to_vec(),
            log_p: None,
            sched: None,
            state,
            init_log_eta: eta[0].ln(),
        },
    )
}

/// Weight-decay run matching a translated schedule; for TEXP-- this uses the
/// constant-LR, shrinking-WD equivalent.
pub fn run_sgd_wd_for(cfg: &RunConfig, sched: &TranslatedSchedule) -> Result<Trajectory> {
    run_sgd_wd(cfg, &sched.eta, &sched.lambda)
}

/// Weight-decay-free run at LR `eta_tilde_t` with momentum corrections.
pub fn run_sgd_exp(cfg: &RunConfig, sched: &TranslatedSchedule) -> Result<Trajectory> {
    cfg.validate(sched.len())?;
    let n = cfg.steps;
    let theta_buf = initial_buffer(cfg, sched.eta[0]);
    let p0 = sched.log_p[0].exp();
    let pm1 = sched.log_p_minus1.exp();
    let eta_init = sched.log_eta_tilde_init.exp();
    let state = TrainState::new(
        vecops::scale(&cfg.init_theta, p0),
        eta_init,
        vecops::scale(&theta_buf, pm1),
        eta_init,
    )?;
    run(
        cfg,
        Setup {
            kind: RunKind::Exponential,
            lr: Lr {
                linear: None,
                log: sched.log_eta_tilde[..n].to_vec(),
            },
            rho: vec![1.0; n],
            lambda: vec![0.0; n],
            log_p: Some(&sched.log_p),
            sched: Some(sched),
            state,
            init_log_eta: sched.log_eta_tilde_init,
        },
    )
}

fn initial_buffer(cfg: &RunConfig, eta_minus1: f64) -> Vec<f64> {
    match &cfg.init_v {
        None => cfg.init_theta.clone(),
        Some(v) => cfg
            .init_theta
            .iter()
            .zip(v)
            .map(|(th, vi)| th - vi * eta_minus1)
            .collect(),
    }
}

/// Rescale `state` by the equivalent scaling that brings `log ||theta||` to
/// `target_log_norm`. Returns the log of the applied factor.
pub fn stabilize(state: &mut TrainState, target_log_norm: f64) -> f64 {
    let log_c = target_log_norm - vecops::norm(&state.theta).ln();
    if log_c == 0.0 {
        return 0.0;
    }
    let c = log_c.exp();
    vecops::scale_in_place(&mut state.theta, c);
    vecops::scale_in_place(&mut state.theta_buf, c);
    state.eta *= c * c;
    state.eta_buf *= c * c;
    log_c
}

fn run(cfg: &RunConfig, setup: Setup<'_>) -> Result<Trajectory> {
    let Setup {
        kind,
        lr,
        rho,
        lambda,
        log_p,
        sched,
        mut state,
        init_log_eta,
    } = setup;
    let obj = cfg.objective.as_ref();
    let gamma = cfg.gamma;
    let n = cfg.steps;
    let mut log_scale: f64 = 0.0;
    let init_buf_log_norm = vecops::norm(&state.theta_buf).ln();
    let ref_dir = vecops::unit(&state.theta);
    let mut records = Vec::with_capacity(n + 1);
    let mut directions = cfg.record_directions.then(|| Vec::with_capacity(n + 1));

    for t in 0..=n {
        let batch = obj.batch(t as u64);
        let (loss, grad) = obj.loss_grad(&state.theta, &batch)?;
        let theta_norm = vecops::norm(&state.theta);
        let update = vecops::norm(&vecops::sub(&state.theta, &state.theta_buf));
        let scale = log_scale.exp();
        let record = StepRecord {
            t,
            log_norm: theta_norm.ln() - log_scale,
            dir_cos_ref: vecops::cosine(&state.theta, &ref_dir),
            loss,
            grad_norm: vecops::norm(&grad) * scale,
            update_norm: update / scale,
            log_eta: (t < n).then(|| lr.log[t]),
            log_p: log_p.map(|p| p[t]),
            log_scale,
        };
        if !(record.log_norm.is_finite() && loss.is_finite() && record.grad_norm.is_finite()) {
            return Err(TrainError::NumericalBlowup { t });
        }
        records.push(record);
        if let Some(d) = directions.as_mut() {
            d.push(vecops::scale(&state.theta, 1.0 / theta_norm));
        }
        if t == n {
            break;
        }

        if let Some(c) = sched.and_then(|s| s.correction_at(t)) {
            let h = statealg::build_ht(c.alpha_t, c.alpha_next, c.eta_prev, c.eta_cur)?;
            statealg::apply_in_place(&h, &mut state)?;
        }
        state.eta = lr.at(t, log_scale);
        let m = gamma / state.eta_buf;
        let (r, e) = (rho[t], state.eta);
        let next: Vec<f64> = state
            .theta
            .iter()
            .zip(&state.theta_buf)
            .zip(&grad)
            .map(|((th, tb), g)| r * th + e * (m * (th - tb) - g))
            .collect();
        state.theta_buf = std::mem::replace(&mut state.theta, next);
        state.eta_buf = state.eta;
        if !(state.eta.is_finite() && state.theta.iter().all(|v| v.is_finite())) {
            return Err(TrainError::NumericalBlowup { t: t + 1 });
        }
        if let Some(k) = cfg.stabilize_every {
            if (t + 1) % k == 0 {
                log_scale += stabilize(&mut state, 0.0);
            }
        }
    }

    Ok(Trajectory {
        kind,
        gamma,
        log_eta: lr.log,
        lambda,
        init_buf_log_norm,
        init_log_eta,
        records,
        directions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed `1 - cos` at `t = 0`.
    pub direction: f64,
    /// Allowed log-norm offset error at `t = 0`.
    pub log_norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            direction: 1e-8,
            log_norm: 1e-7,
        }
    }
}

impl Tolerances {
    /// Both tolerances grow as `1 + t/100`.
    pub fn at(&self, t: usize) -> (f64, f64) {
        let g = 1.0 + t as f64 / 100.0;
        (self.direction * g, self.log_norm * g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEntry {
    pub t: usize,
    /// `1 - cos(theta_a, theta_b)`.
    pub direction_gap: f64,
    /// `|log ||theta_b|| - log ||theta_a|| - log P_t|`.
    pub log_norm_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub tolerances: Tolerances,
    pub max_direction_gap: f64,
    pub max_log_norm_err: f64,
    pub first_failure: Option<usize>,
    pub pass: bool,
    pub per_t: Vec<EquivalenceEntry>,
}

/// Compare two trajectories in function space. `log_p[t]` is the expected
/// log-norm offset of `b` over `a`.
pub fn verify_equivalence(
    a: &Trajectory,
    b: &Trajectory,
    log_p: &[f64],
    tol: Tolerances,
) -> Result<EquivalenceReport> {
    if a.len() != b.len() {
        return Err(TrainError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if log_p.len() < a.len() {
        return Err(TrainError::LengthMismatch {
            a: a.len(),
            b: log_p.len(),
        });
    }
    let (da, db) = match (&a.directions, &b.directions) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(TrainError::MissingDirections),
    };
    let mut per_t = Vec::with_capacity(a.len());
    let mut first_failure = None;
    let (mut max_direction_gap, mut max_log_norm_err) = (0.0f64, 0.0f64);
    for t in 0..a.len() {
        // 1 - cos = |u - v|^2 / 2 for unit vectors, without cancellation.
        let direction_gap = 0.5 * vecops::norm_sq(&vecops::sub(&da[t], &db[t]));
        let log_norm_err = (b.records[t].log_norm - a.records[t].log_norm - log_p[t]).abs();
        let (td, tn) = tol.at(t);
        if first_failure.is_none() && !(direction_gap <= td && log_norm_err <= tn) {
            first_failure = Some(t);
        }
        max_direction_gap = max_direction_gap.max(direction_gap);
        max_log_norm_err = max_log_norm_err.max(log_norm_err);
        per_t.push(EquivalenceEntry {
            t,
            direction_gap,
            log_norm_err,
        });
    }
    Ok(EquivalenceReport {
        tolerances: tol,
        max_direction_gap,
        max_log_norm_err,
        first_failure,
        pass: first_failure.is_none(),
        per_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrsched::{translate, translate_constant, Method, ScheduleSpec};
    use crate::rng;
    use crate::scaleinv::{Batch, NormQuadratic};
    use crate::statealg::StateMap;

    fn quad(dim: usize) -> Arc<dyn Objective> {
        Arc::new(NormQuadratic::new(dim, 0.0, 5).unwrap())
    }

    fn theta0(dim: usize) -> Vec<f64> {
        rng::normal_vec(&mut rng::stream(77, 0), dim)
    }

    #[test]
    fn stationary_point_without_decay_stays_put() {
        let a = crate::vecops::Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 3.0]);
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::with_matrix(a).unwrap());
        let cfg = RunConfig::new(obj, 0.0, vec![2.0, 0.0], 20);
        let tr = run_sgd_wd(&cfg, &[0.1; 20], &[0.0; 20]).unwrap();
        assert!(tr.records.iter().all(|r| r.log_norm == 2f64.ln()));
    }

    #[test]
    fn one_step_matches_hand_computation() {
        let obj = quad(4);
        let th = theta0(4);
        let v = vec![0.1, -0.2, 0.3, 0.0];
        let (eta, lam, gamma) = (0.1, 5e-4, 0.9);
        let cfg = RunConfig::new(obj.clone(), gamma, th.clone(), 1)
            .with_velocity(v.clone())
            .recording_directions();
        let tr = run_sgd_wd(&cfg, &[eta], &[lam]).unwrap();
        let (_, g) = obj.loss_grad(&th, &Batch::Full).unwrap();
        // theta_{-1} = theta_0 - v eta, so the momentum term is gamma v.
        let next: Vec<f64> = (0..4)
            .map(|i| th[i] + eta * (gamma * v[i] - g[i] - lam * th[i]))
            .collect();
        let dir = &tr.directions.as_ref().unwrap()[1];
        assert!(vecops::rel_dist(dir, &vecops::unit(&next)) < 1e-15);
        assert!((tr.records[1].log_norm - vecops::norm(&next).ln()).abs() < 1e-15);
    }

    #[test]
    fn momentum_free_run_matches_composed_maps() {
        let obj = quad(6);
        let th = theta0(6);
        let (eta, lam) = (0.2, 0.01);
        let cfg = RunConfig::new(obj.clone(), 0.0, th.clone(), 2).recording_directions();
        let tr = run_sgd_wd(&cfg, &[eta; 2], &[lam; 2]).unwrap();
        let gd = |t| StateMap::gd(1.0 - eta * lam, t, 0.0, obj.clone());
        let two = StateMap::Compose(vec![gd(1), gd(0)]);
        let s = statealg::apply(&two, &TrainState::two_coord(th, eta).unwrap()).unwrap();
        let dir = &tr.directions.as_ref().unwrap()[2];
        assert!(vecops::rel_dist(dir, &vecops::unit(&s.theta)) < 1e-15);
    }

    #[test]
    fn zero_decay_exponential_run_reproduces_plain_run() {
        let obj = quad(5);
        let cfg = RunConfig::new(obj, 0.9, theta0(5), 100).recording_directions();
        let spec = ScheduleSpec::uniform_step_decay(0.9, 0.1, 0.0, 0.1, 50, 2);
        let sched = translate(&spec, Method::Texp).unwrap();
        let a = run_sgd_wd_for(&cfg, &sched).unwrap();
        let b = run_sgd_exp(&cfg, &sched).unwrap();
        let rep = verify_equivalence(&a, &b, &sched.log_p, Tolerances::default()).unwrap();
        assert!(rep.max_direction_gap < 1e-20 && rep.max_log_norm_err < 1e-13, "{rep:?}");
    }

    #[test]
    fn constant_lr_pair_is_equivalent() {
        let obj = quad(8);
        let cfg = RunConfig::new(obj, 0.9, theta0(8), 300).recording_directions();
        let sched = translate_constant(0.9, 0.1, 5e-4, 300).unwrap();
        let a = run_sgd_wd_for(&cfg, &sched).unwrap();
        let b = run_sgd_exp(&cfg, &sched).unwrap();
        let rep = verify_equivalence(&a, &b, &sched.log_p, Tolerances::default()).unwrap();
        assert!(rep.pass, "{:e} {:e}", rep.max_direction_gap, rep.max_log_norm_err);
    }

    #[test]
    fn stabilization_changes_nothing_observable() {
        let obj = quad(6);
        let sched = translate_constant(0.9, 0.1, 5e-4, 200).unwrap();
        let base = RunConfig::new(obj, 0.9, theta0(6), 200).recording_directions();
        let plain = run_sgd_exp(&base, &sched).unwrap();
        for k in [1, 50] {
            let st = run_sgd_exp(&base.clone().stabilized(Some(k)), &sched).unwrap();
            let zero = vec![0.0; 201];
            let rep = verify_equivalence(&plain, &st, &zero, Tolerances::default()).unwrap();
            assert!(rep.max_direction_gap < 1e-20, "{k}: {:e}", rep.max_direction_gap);
            assert!(rep.max_log_norm_err < 1e-12);
        }
    }

    #[test]
    fn self_comparison_is_exact_and_lengths_are_checked() {
        let cfg = RunConfig::new(quad(3), 0.5, theta0(3), 10).recording_directions();
        let a = run_sgd_wd(&cfg, &[0.1; 10], &[1e-3; 10]).unwrap();
        let rep = verify_equivalence(&a, &a, &[0.0; 11], Tolerances::default()).unwrap();
        assert_eq!((rep.max_direction_gap, rep.max_log_norm_err), (0.0, 0.0));
        let short = run_sgd_wd(&RunConfig { steps: 5, ..cfg }, &[0.1; 10], &[1e-3; 10]).unwrap();
        assert!(matches!(
            verify_equivalence(&a, &short, &[0.0; 11], Tolerances::default()),
            Err(TrainError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn runs_are_deterministic() {
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(5, 0.2, 1).unwrap());
        let cfg = RunConfig::new(obj, 0.9, theta0(5), 50).recording_directions();
        let a = run_sgd_wd(&cfg, &[0.1; 50], &[5e-4; 50]).unwrap();
        let b = run_sgd_wd(&cfg, &[0.1; 50], &[5e-4; 50]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = RunConfig::new(quad(3), 0.9, vec![0.0; 3], 5);
        assert!(run_sgd_wd(&cfg, &[0.1; 5], &[0.0; 5]).is_err());
        let cfg = RunConfig::new(quad(3), 0.9, vec![1.0; 3], 6);
        assert!(run_sgd_wd(&cfg, &[0.1; 5], &[0.0; 5]).is_err());
        let obj: Arc<dyn Objective> = Arc::new(crate::scaleinv::PlainQuadratic::new(3, 0).unwrap());
        let cfg = RunConfig::new(obj, 0.9, vec![1.0; 3], 5).stabilized(Some(1));
        assert!(run_sgd_wd(&cfg, &[0.1; 5], &[0.0; 5]).is_err());
    }

    #[test]
    fn csv_has_expected_shape() {
        let cfg = RunConfig::new(quad(3), 0.9, theta0(3), 4);
        let tr = run_sgd_wd(&cfg, &[0.1; 4], &[0.0; 4]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("t,log_norm,dir_cos_ref"));
        assert!(lines[5].ends_with(','));
    }

    #[test]
    fn step_decay_translations_are_equivalent() {
        let spec = ScheduleSpec::uniform_step_decay(0.9, 0.1, 5e-4, 0.1, 100, 3);
        let cfg = RunConfig::new(quad(10), 0.9, theta0(10), 300).recording_directions();
        for method in [Method::Texp, Method::TexpMinus, Method::TexpPlusPlus] {
            let sched = translate(&spec, method).unwrap();
            let a = run_sgd_wd_for(&cfg, &sched).unwrap();
            let b = run_sgd_exp(&cfg, &sched).unwrap();
            let rep = verify_equivalence(&a, &b, &sched.log_p, Tolerances::default()).unwrap();
            assert!(rep.pass, "{method:?} fails at {:?}", rep.first_failure);
        }
    }

    #[test]
    fn cosine_translation_is_equivalent() {
        let spec = ScheduleSpec::cosine(0.9, 0.1, 5e-4, 400);
        let sched = translate(&spec, Method::TexpPlusPlus).unwrap();
        let cfg = RunConfig::new(quad(10), 0.9, theta0(10), 400).recording_directions();
        let a = run_sgd_wd_for(&cfg, &sched).unwrap();
        let b = run_sgd_exp(&cfg, &sched).unwrap();
        let rep = verify_equivalence(&a, &b, &sched.log_p, Tolerances::default()).unwrap();
        assert!(rep.pass, "{:e} {:e}", rep.max_direction_gap, rep.max_log_norm_err);
    }

    #[test]
    fn dropping_corrections_breaks_equivalence() {
        let spec = ScheduleSpec::uniform_step_decay(0.9, 0.1, 5e-4, 0.1, 100, 3);
        let mut sched = translate(&spec, Method::Texp).unwrap();
        sched.corrections.clear();
        let cfg = RunConfig::new(quad(10), 0.9, theta0(10), 300).recording_directions();
        let a = run_sgd_wd_for(&cfg, &sched).unwrap();
        let b = run_sgd_exp(&cfg, &sched).unwrap();
        let rep = verify_equivalence(&a, &b, &sched.log_p, Tolerances::default()).unwrap();
        assert_eq!(rep.first_failure, Some(101));
    }
}
