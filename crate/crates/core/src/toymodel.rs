//! Last-layer logistic model on `x ~ N(0, I_m)` with labels `y = sgn(x_1)`.
//!
//! Three regimes:
//!
//! * `WdOnly`: plain logistic loss on `w^T x` plus `lambda/2 |w|^2`.
//! * `BnOnly`: logistic loss on `w^T x / |w|`, no weight decay.
//! * `BnWd`: the normalized loss with weight decay.
//!
//! The population training error of `w` is `arccos(w_1/|w|)/pi`, so the
//! angle to `e_1` is tracked directly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::vecops;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("invalid toy configuration: {0}")]
    InvalidConfig(String),
    #[error("escape budget undefined: {0}")]
    InvalidBudget(String),
    #[error("non-finite weights at iteration {t}")]
    NumericalBlowup { t: usize },
}

pub type Result<T> = std::result::Result<T, ToyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    WdOnly,
    BnOnly,
    BnWd,
}

/// Gradient estimate used at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Average over `batch` fresh samples.
    #[default]
    Minibatch,
    /// Closed-form expectation over the data distribution (normalized
    /// regimes only).
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub m: usize,
    pub batch: usize,
    pub eta: f64,
    pub lambda: f64,
    pub eps: f64,
    pub delta: f64,
    #[serde(default)]
    pub t0: usize,
    #[serde(default = "default_init_norm")]
    pub init_norm: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

fn default_init_norm() -> f64 {
    1.0
}

impl Default for ToyConfig {
    /// Desk-scale defaults: `eta*lambda - 2 eps^2 = 8e-4` and a budget of
    /// about two thousand iterations.
    fn default() -> Self {
        Self {
            m: 20,
            batch: 256,
            eta: 0.1,
            lambda: 0.01,
            eps: 0.01,
            delta: 0.1,
            t0: 0,
            init_norm: 1.0,
            sampling: Sampling::Minibatch,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.m < 3 {
            return bad(format!("m must be at least 3, got {}", self.m));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.eps > 0.0 && self.eps < std::f64::consts::FRAC_PI_2) {
            return bad(format!("eps must lie in (0, pi/2), got {}", self.eps));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.init_norm > 0.0 && self.init_norm.is_finite()) {
            return bad(format!("init_norm must be positive, got {}", self.init_norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrajectory {
    pub regime: Regime,
    /// Angle between `w_t` and `e_1`, `t = 0 ..= steps`.
    pub angle: Vec<f64>,
    pub norm: Vec<f64>,
    /// Angle between consecutive iterates, `t = 0 .. steps`.
    pub step_angle: Vec<f64>,
    /// Largest `|<w_{t+1} - (1 - lambda eta) w_t, w_t>| / (|step| |w_t|)`.
    pub max_orthogonality: f64,
    /// Largest relative residual of
    /// `|w_{t+1}|^2 = (1 - lambda eta)^2 |w_t|^2 + |step|^2`.
    pub max_pythagorean_residual: f64,
}

impl ToyTrajectory {
    pub fn training_error(&self) -> Vec<f64> {
        self.angle.iter().map(|a| a / std::f64::consts::PI).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,angle,norm,training_error")?;
        for (t, (a, n)) in self.angle.iter().zip(&self.norm).enumerate() {
            writeln!(w, "{t},{a:.16e},{n:.16e},{:.16e}", a / std::f64::consts::PI)?;
        }
        Ok(())
    }
}

fn sigmoid_neg(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

fn angle_to_e1(w: &[f64]) -> f64 {
    let mut e1 = vec![0.0; w.len()];
    e1[0] = 1.0;
    vecops::angle(&e1, w)
}

/// Unit vector at angle `theta` from `e_1`, tilted in a random direction.
pub fn vector_at_angle(rng: &mut impl Rng, m: usize, theta: f64, norm: f64) -> Vec<f64> {
    let mut u = rng::normal_vec(rng, m);
    u[0] = 0.0;
    let u = vecops::unit(&u);
    let mut w = vecops::scale(&u, norm * theta.sin());
    w[0] = norm * theta.cos();
    w
}

/// Descent direction (negative gradient) of the regime's loss at `w`,
/// excluding weight decay.
fn neg_grad(
    regime: Regime,
    cfg: &ToyConfig,
    w: &[f64],
    rng: &mut impl Rng,
    x: &mut [f64],
) -> Vec<f64> {
    let m = cfg.m;
    let norm = vecops::norm(w);
    if cfg.sampling == Sampling::Population {
        // E[y sigma(-y z) P_perp x] = (e1 - cos(phi) w_hat)/sqrt(2 pi) with z = w_hat^T x.
        let c = w[0] / norm;
        let k = 1.0 / (2.0 * std::f64::consts::PI).sqrt() / norm;
        let mut g: Vec<f64> = w.iter().map(|wi| -k * c * wi / norm).collect();
        g[0] += k;
        return g;
    }
    let mut acc = vec![0.0; m];
    let mut along = 0.0;
    let b = cfg.batch as f64;
    for _ in 0..cfg.batch {
        for xi in x.iter_mut() {
            *xi = StandardNormal.sample(rng);
        }
        let y = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        match regime {
            Regime::WdOnly => {
                let s = sigmoid_neg(y * vecops::dot(x, w));
                vecops::axpy(y * s / b, x, &mut acc);
            }
            Regime::BnOnly | Regime::BnWd => {
                let z = vecops::dot(x, w) / norm;
                let s = sigmoid_neg(y * z) * y / b;
                vecops::axpy(s, x, &mut acc);
                along += s * z;
            }
        }
    }
    if regime != Regime::WdOnly {
        // Project out w and divide by |w|.
        for (a, wi) in acc.iter_mut().zip(w) {
            *a = (*a - along * wi / norm) / norm;
        }
    }
    acc
}

/// Iterate the regime's SGD update from `w0` for `steps` steps. Batches for
/// step `t` come from stream `t` of `cfg.seed`.
pub fn run_case(regime: Regime, cfg: &ToyConfig, w0: &[f64], steps: usize) -> Result<ToyTrajectory> {
    simulate(regime, cfg, w0, steps, |_| false)
}

/// Like [`run_case`], but stops early once `done` returns true on the
/// trajectory so far.
pub fn run_case_until(
    regime: Regime,
    cfg: &ToyConfig,
    w0: &[f64],
    max_steps: usize,
    done: impl FnMut(&ToyTrajectory) -> bool,
) -> Result<ToyTrajectory> {
    simulate(regime, cfg, w0, max_steps, done)
}

fn simulate(
    regime: Regime,
    cfg: &ToyConfig,
    w0: &[f64],
    steps: usize,
    mut done: impl FnMut(&ToyTrajectory) -> bool,
) -> Result<ToyTrajectory> {
    cfg.validate()?;
    if w0.len() != cfg.m || vecops::norm_sq(w0) == 0.0 {
        return Err(ToyError::InvalidConfig(format!(
            "initial weight must be a nonzero vector of length {}",
            cfg.m
        )));
    }
    if cfg.sampling == Sampling::Population && regime == Regime::WdOnly {
        return Err(ToyError::InvalidConfig(
            "population sampling is only available for normalized regimes".into(),
        ));
    }
    let lambda = if regime == Regime::BnOnly { 0.0 } else { cfg.lambda };
    let shrink = 1.0 - lambda * cfg.eta;
    let mut w = w0.to_vec();
    let mut x = vec![0.0; cfg.m];
    let mut tr = ToyTrajectory {
        regime,
        angle: vec![angle_to_e1(&w)],
        norm: vec![vecops::norm(&w)],
        step_angle: Vec::new(),
        max_orthogonality: 0.0,
        max_pythagorean_residual: 0.0,
    };
    for t in 0..steps {
        let mut r = rng::iteration_stream(cfg.seed, (cfg.t0 + t) as u64);
        let g = neg_grad(regime, cfg, &w, &mut r, &mut x);
        let step = vecops::scale(&g, cfg.eta);
        let mut next = vecops::scale(&w, shrink);
        vecops::axpy(1.0, &step, &mut next);
        if !next.iter().all(|v| v.is_finite()) || vecops::norm_sq(&next) == 0.0 {
            return Err(ToyError::NumericalBlowup { t: t + 1 });
        }
        if regime != Regime::WdOnly {
            let sn = vecops::norm(&step);
            let wn = vecops::norm(&w);
            if sn > 0.0 {
                tr.max_orthogonality = tr.max_orthogonality.max(vecops::dot(&step, &w).abs() / (sn * wn));
            }
            let pred = shrink * shrink * wn * wn + sn * sn;
            let actual = vecops::norm_sq(&next);
            tr.max_pythagorean_residual = tr.max_pythagorean_residual.max((pred - actual).abs() / actual);
        }
        tr.step_angle.push(vecops::angle(&w, &next));
        w = next;
        tr.angle.push(angle_to_e1(&w));
        tr.norm.push(vecops::norm(&w));
        if done(&tr) {
            break;
        }
    }
    Ok(tr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeBudget {
    pub t1: f64,
    pub t2: f64,
    pub total: f64,
}

/// `T1 = ln(64 |w|^2 eps sqrt(B) / (eta sqrt(m - 2))) / (2 (eta lambda - 2 eps^2))`
/// (zero when the log argument is at most one) and `T2 = 9 ln(1/delta)`.
pub fn escape_budget(cfg: &ToyConfig, norm_at_t0: f64) -> Result<EscapeBudget> {
    cfg.validate()?;
    let gap = cfg.eta * cfg.lambda - 2.0 * cfg.eps * cfg.eps;
    if !(gap > 0.0) {
        return Err(ToyError::InvalidBudget(format!(
            "eta*lambda - 2 eps^2 = {gap:e} must be positive"
        )));
    }
    if !(norm_at_t0 > 0.0 && norm_at_t0.is_finite()) {
        return Err(ToyError::InvalidBudget(format!(
            "norm at T0 must be positive, got {norm_at_t0}"
        )));
    }
    let arg = 64.0 * norm_at_t0 * norm_at_t0 * cfg.eps * (cfg.batch as f64).sqrt()
        / (cfg.eta * ((cfg.m - 2) as f64).sqrt());
    let t1 = if arg > 1.0 { arg.ln() / (2.0 * gap) } else { 0.0 };
    let t2 = 9.0 * (1.0 / cfg.delta).ln();
    Ok(EscapeBudget {
        t1,
        t2,
        total: t1 + t2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub budget: EscapeBudget,
    pub window: usize,
    pub trials: usize,
    pub escaped: usize,
    pub fraction: f64,
    /// `1 - delta - 3 sqrt(delta (1 - delta) / trials)`.
    pub threshold: f64,
    /// Iteration of first escape per trial, if any.
    pub first_escape: Vec<Option<usize>>,
    /// Trials where consecutive iterates turned by more than `2 eps` at
    /// least once inside the window.
    pub large_step_trials: usize,
    pub pass: bool,
}

/// Run `trials` seeded `BnWd` runs started inside the `eps`-cone and count how
/// many leave it within the escape budget.
pub fn escape_experiment(cfg: &ToyConfig, trials: usize) -> Result<EscapeReport> {
    cfg.validate()?;
    if trials == 0 {
        return Err(ToyError::InvalidConfig("trials must be positive".into()));
    }
    let budget = escape_budget(cfg, cfg.init_norm)?;
    let window = budget.total.ceil() as usize;
    let outcomes: Vec<(Option<usize>, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = rng::child_seed(cfg.seed, i as u64);
            let trial_cfg = ToyConfig { seed, ..cfg.clone() };
            let mut init = rng::setup_stream(seed);
            let start_angle = init.random_range(0.0..cfg.eps);
            let w0 = vector_at_angle(&mut init, cfg.m, start_angle, cfg.init_norm);
            let (eps, two_eps) = (cfg.eps, 2.0 * cfg.eps);
            let (mut out, mut turned) = (false, false);
            // Both events only need to happen once, so the run can stop early.
            let tr = run_case_until(Regime::BnWd, &trial_cfg, &w0, window, |tr| {
                out |= tr.angle.last().is_some_and(|&a| a > eps);
                turned |= tr.step_angle.last().is_some_and(|&a| a > two_eps);
                out && turned
            })?;
            let first = tr.angle.iter().position(|&a| a > cfg.eps);
            let large = tr.step_angle.iter().any(|&a| a > 2.0 * cfg.eps);
            Ok((first, large))
        })
        .collect::<Result<_>>()?;
    let escaped = outcomes.iter().filter(|o| o.0.is_some()).count();
    let large_step_trials = outcomes.iter().filter(|o| o.1).count();
    let fraction = escaped as f64 / trials as f64;
    let d = cfg.delta;
    let threshold = 1.0 - d - 3.0 * (d * (1.0 - d) / trials as f64).sqrt();
    Ok(EscapeReport {
        budget,
        window,
        trials,
        escaped,
        fraction,
        threshold,
        first_escape: outcomes.iter().map(|o| o.0).collect(),
        large_step_trials,
        pass: fraction >= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub k: usize,
    pub beta: f64,
    pub samples: usize,
    /// Fraction of samples with `sum_{i<k} X_i^2 < k beta`.
    pub estimate: f64,
    pub std_err: f64,
    /// `(beta e^{1 - beta})^{k/2}`.
    pub bound: f64,
    pub pass: bool,
}

/// Monte-Carlo check of `P(chi^2_k < k beta) <= (beta e^{1-beta})^{k/2}`.
pub fn chi_square_tail_check(k: usize, beta: f64, samples: usize, seed: u64) -> Result<ChiSquareReport> {
    if k == 0 {
        return Err(ToyError::InvalidConfig("k must be positive".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(ToyError::InvalidConfig(format!("beta must lie in (0, 1), got {beta}")));
    }
    if samples == 0 {
        return Err(ToyError::InvalidConfig("samples must be positive".into()));
    }
    const CHUNK: usize = 10_000;
    let threshold = k as f64 * beta;
    let hits: usize = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            (0..n)
                .filter(|_| {
                    let s: f64 = (0..k)
                        .map(|_| {
                            let x: f64 = StandardNormal.sample(&mut r);
                            x * x
                        })
                        .sum();
                    s < threshold
                })
                .count()
        })
        .sum();
    let estimate = hits as f64 / samples as f64;
    let std_err = (estimate * (1.0 - estimate) / samples as f64).sqrt();
    let bound = (beta * (1.0 - beta).exp()).powf(k as f64 / 2.0);
    Ok(ChiSquareReport {
        k,
        beta,
        samples,
        estimate,
        std_err,
        bound,
        pass: estimate - 3.0 * std_err <= bound,
    })
}
