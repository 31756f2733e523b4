use serde::{Deserialize, Serialize};

use super::roots::check_gamma;
use super::{Result, ScheduleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    StepDecay,
    Cosine,
    Explicit,
}

/// One phase of a step-decay schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: usize,
    pub lr: f64,
    pub wd: f64,
}

/// Input learning-rate + weight-decay schedule, as read from JSON.
///
/// Which fields are required depends on `kind`:
///
/// | kind         | fields                         |
/// |--------------|--------------------------------|
/// | `constant`   | `eta0`, `wd`, `T`              |
/// | `step_decay` | `phases`, `T`                  |
/// | `cosine`     | `eta0`, `wd`, `T`              |
/// | `explicit`   | `eta_seq`, `lambda_seq`        |
///
/// `T` is the number of iterations. For `cosine` the LR reaches zero at
/// iteration `T`, which is excluded, so the schedule covers `0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub total_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wd: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta_seq: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_seq: Vec<f64>,
}

impl ScheduleSpec {
    pub fn constant(gamma: f64, eta0: f64, wd: f64, iters: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            gamma,
            phases: Vec::new(),
            eta0: Some(eta0),
            total_iters: Some(iters),
            wd: Some(wd),
            eta_seq: Vec::new(),
            lambda_seq: Vec::new(),
        }
    }

    pub fn step_decay(gamma: f64, phases: Vec<Phase>, iters: usize) -> Self {
        Self {
            kind: ScheduleKind::StepDecay,
            gamma,
            phases,
            eta0: None,
            total_iters: Some(iters),
            wd: None,
            eta_seq: Vec::new(),
            lambda_seq: Vec::new(),
        }
    }

    pub fn cosine(gamma: f64, eta0: f64, wd: f64, total: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            ..Self::constant(gamma, eta0, wd, total)
        }
    }

    pub fn explicit(gamma: f64, eta_seq: Vec<f64>, lambda_seq: Vec<f64>) -> Self {
        Self {
            kind: ScheduleKind::Explicit,
            gamma,
            phases: Vec::new(),
            eta0: None,
            total_iters: None,
            wd: None,
            eta_seq,
            lambda_seq,
        }
    }

    /// Step decay with a fixed WD and LR multiplied by `factor` every
    /// `phase_len` iterations.
    pub fn uniform_step_decay(
        gamma: f64,
        eta0: f64,
        wd: f64,
        factor: f64,
        phase_len: usize,
        num_phases: usize,
    ) -> Self {
        let phases = (0..num_phases)
            .map(|i| Phase {
                start: i * phase_len,
                lr: eta0 * factor.powi(i as i32),
                wd,
            })
            .collect();
        Self::step_decay(gamma, phases, phase_len * num_phases)
    }

    fn require<T: Copy>(&self, v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| {
            ScheduleError::InvalidSpec(format!("{:?} schedule requires `{name}`", self.kind))
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let check_lr = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ScheduleError::InvalidSpec(format!(
                    "{what} must be finite and positive, got {v}"
                )))
            }
        };
        let check_wd = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ScheduleError::InvalidSpec(format!(
                    "{what} must be finite and non-negative, got {v}"
                )))
            }
        };
        match self.kind {
            ScheduleKind::Constant | ScheduleKind::Cosine => {
                check_lr(self.require(self.eta0, "eta0")?, "eta0")?;
                check_wd(self.require(self.wd, "wd")?, "wd")?;
                let t = self.require(self.total_iters, "T")?;
                if self.kind == ScheduleKind::Cosine && t < 2 {
                    return Err(ScheduleError::InvalidSpec(format!(
                        "cosine schedule needs T >= 2, got {t}"
                    )));
                }
            }
            ScheduleKind::StepDecay => {
                let t = self.require(self.total_iters, "T")?;
                if self.phases.is_empty() {
                    return Err(ScheduleError::InvalidSpec(
                        "step_decay schedule requires at least one phase".into(),
                    ));
                }
                if self.phases[0].start != 0 {
                    return Err(ScheduleError::InvalidSpec(format!(
                        "first phase must start at 0, got {}",
                        self.phases[0].start
                    )));
                }
                for (i, w) in self.phases.windows(2).enumerate() {
                    if w[1].start <= w[0].start {
                        return Err(ScheduleError::InvalidSpec(format!(
                            "phase starts must be strictly increasing (phase {})",
                            i + 1
                        )));
                    }
                }
                for (i, p) in self.phases.iter().enumerate() {
                    check_lr(p.lr, &format!("phase {i} lr"))?;
                    check_wd(p.wd, &format!("phase {i} wd"))?;
                }
                if t == 0 {
                    return Err(ScheduleError::InvalidSpec("T must be positive".into()));
                }
            }
            ScheduleKind::Explicit => {
                if self.eta_seq.is_empty() {
                    return Err(ScheduleError::InvalidSpec(
                        "explicit schedule requires a non-empty eta_seq".into(),
                    ));
                }
                if self.eta_seq.len() != self.lambda_seq.len() {
                    return Err(ScheduleError::InvalidSpec(format!(
                        "eta_seq has {} entries but lambda_seq has {}",
                        self.eta_seq.len(),
                        self.lambda_seq.len()
                    )));
                }
                for (t, (&e, &l)) in self.eta_seq.iter().zip(&self.lambda_seq).enumerate() {
                    check_lr(e, &format!("eta_seq[{t}]"))?;
                    check_wd(l, &format!("lambda_seq[{t}]"))?;
                }
            }
        }
        Ok(())
    }

    /// Number of iterations the schedule covers.
    pub fn len(&self) -> usize {
        match self.kind {
            ScheduleKind::Explicit => self.eta_seq.len(),
            _ => self.total_iters.unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Phase index of iteration `t` for step-decay schedules.
    pub fn phase_of(&self, t: usize) -> usize {
        self.phases.partition_point(|p| p.start <= t).saturating_sub(1)
    }

    /// Per-iteration `(eta_t, lambda_t)` for `t in 0..len()`.
    pub fn expand(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let n = self.len();
        Ok(match self.kind {
            ScheduleKind::Constant => {
                let (e, l) = (self.eta0.unwrap_or_default(), self.wd.unwrap_or_default());
                (vec![e; n], vec![l; n])
            }
            ScheduleKind::Cosine => {
                let (e, l) = (self.eta0.unwrap_or_default(), self.wd.unwrap_or_default());
                let eta = (0..n)
                    .map(|t| {
                        let x = t as f64 / n as f64 * std::f64::consts::PI;
                        e * 0.5 * (1.0 + x.cos())
                    })
                    .collect();
                (eta, vec![l; n])
            }
            ScheduleKind::StepDecay => (0..n)
                .map(|t| {
                    let p = &self.phases[self.phase_of(t)];
                    (p.lr, p.wd)
                })
                .unzip(),
            ScheduleKind::Explicit => (self.eta_seq.clone(), self.lambda_seq.clone()),
        })
    }
}
