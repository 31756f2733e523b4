//! Scale-invariant objectives with analytic gradients.
//!
//! Every objective owns a seed. Construction-time randomness (fixed matrices,
//! teacher vectors, fixed batches) is drawn from the setup stream, and the
//! batch for iteration `t` from stream `t`, so two runs over the same
//! objective see identical batches.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::vecops::{self, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector is zero")]
    ZeroParameter,
    #[error("hidden unit {unit} has batch variance {variance:e}, below the 1e-12 floor")]
    DegenerateBatch { unit: usize, variance: f64 },
    #[error("batch kind does not match objective `{0}`")]
    BatchMismatch(&'static str),
    #[error("invalid objective configuration: {0}")]
    InvalidConfig(String),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Data an objective is evaluated on at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    /// Deterministic objective, or the objective's own fixed batch.
    Full,
    /// Labelled samples, one row of `x` per sample.
    Samples { x: Matrix, y: Vec<f64> },
    /// Symmetric perturbation of a quadratic form.
    Perturbation(Matrix),
}

pub trait Objective: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Batch used at iteration `t`; a pure function of the objective's seed
    /// and `t`.
    fn batch(&self, t: u64) -> Batch;

    fn loss_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        self.loss_grad(theta, batch).map(|(l, _)| l)
    }

    /// Whether the objective is meant to satisfy `L(c theta) = L(theta)`.
    /// Checked numerically elsewhere, never assumed.
    fn scale_invariant(&self) -> bool {
        true
    }
}

fn check_theta(theta: &[f64], dim: usize) -> Result<f64> {
    if theta.len() != dim {
        return Err(ObjectiveError::DimensionMismatch {
            expected: dim,
            got: theta.len(),
        });
    }
    let n = vecops::norm_sq(theta);
    if n == 0.0 {
        return Err(ObjectiveError::ZeroParameter);
    }
    Ok(n)
}

/// `ln(1 + exp(-u))` without overflow.
fn softplus_neg(u: f64) -> f64 {
    (-u).max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(u))`.
fn sigmoid_neg(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

fn random_spd(dim: usize, rng: &mut impl Rng) -> Matrix {
    let m = rng::normal_vec(rng, dim * dim);
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let s: f64 = (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum();
            a.data[i * dim + j] = s / dim as f64 + if i == j { 0.1 } else { 0.0 };
        }
    }
    a
}

/// Rayleigh quotient `theta^T A theta / theta^T theta`, optionally with a
/// fresh symmetric Gaussian perturbation of `A` at every iteration.
#[derive(Debug, Clone)]
pub struct NormQuadratic {
    a: Matrix,
    noise: f64,
    seed: u64,
}

impl NormQuadratic {
    pub fn new(dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(ObjectiveError::InvalidConfig("dim must be positive".into()));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "noise must be finite and non-negative, got {noise}"
            )));
        }
        let a = random_spd(dim, &mut rng::setup_stream(seed));
        Ok(Self { a, noise, seed })
    }

    /// Deterministic objective with a caller-supplied symmetric matrix.
    pub fn with_matrix(a: Matrix) -> Result<Self> {
        if a.rows != a.cols || a.rows == 0 {
            return Err(ObjectiveError::InvalidConfig("matrix must be square".into()));
        }
        Ok(Self {
            a,
            noise: 0.0,
            seed: 0,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

impl Objective for NormQuadratic {
    fn name(&self) -> &'static str {
        "norm_quadratic"
    }

    fn dim(&self) -> usize {
        self.a.rows
    }

    fn batch(&self, t: u64) -> Batch {
        if self.noise == 0.0 {
            return Batch::Full;
        }
        let n = self.dim();
        let mut rng = rng::iteration_stream(self.seed, t);
        let g = rng::normal_vec(&mut rng, n * n);
        let mut e = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                e.data[i * n + j] = 0.5 * self.noise * (g[i * n + j] + g[j * n + i]);
            }
        }
        Batch::Perturbation(e)
    }

    fn loss_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let nsq = check_theta(theta, self.dim())?;
        let mut bt = self.a.matvec(theta);
        match batch {
            Batch::Full => {}
            Batch::Perturbation(e) => {
                if e.rows != self.dim() {
                    return Err(ObjectiveError::BatchMismatch(self.name()));
                }
                vecops::axpy(1.0, &e.matvec(theta), &mut bt);
            }
            Batch::Samples { .. } => return Err(ObjectiveError::BatchMismatch(self.name())),
        }
        let r = vecops::dot(theta, &bt) / nsq;
        let grad = bt
            .iter()
            .zip(theta)
            .map(|(b, th)| 2.0 * (b - r * th) / nsq)
            .collect();
        Ok((r, grad))
    }
}

/// How the single output unit of [`NormLogistic`] is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BnStats {
    /// Divide by `||w||`, the population standard deviation of `w^T x` for
    /// standard Gaussian inputs.
    #[default]
    Global,
    /// Center and scale with the statistics of the current batch.
    PerBatch,
}

/// Batch-normalized linear classifier `ln(1 + exp(-y * BN(w^T x)))` on
/// `x ~ N(0, I_m)`, `y = sgn(x_1)`.
#[derive(Debug, Clone)]
pub struct NormLogistic {
    m: usize,
    batch_size: usize,
    stats: BnStats,
    fixed: Option<(Matrix, Vec<f64>)>,
    seed: u64,
}

fn sample_first_coord_labels(rng: &mut impl Rng, b: usize, m: usize) -> (Matrix, Vec<f64>) {
    let x = Matrix::from_vec(b, m, rng::normal_vec(rng, b * m));
    let y = (0..b)
        .map(|i| if x.get(i, 0) >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    (x, y)
}

impl NormLogistic {
    /// Fresh batch of `batch_size` samples at every iteration.
    pub fn sampled(m: usize, batch_size: usize, stats: BnStats, seed: u64) -> Result<Self> {
        if m == 0 || batch_size == 0 {
            return Err(ObjectiveError::InvalidConfig(
                "m and batch must be positive".into(),
            ));
        }
        Ok(Self {
            m,
            batch_size,
            stats,
            fixed: None,
            seed,
        })
    }

    /// One large batch drawn at construction and reused at every iteration,
    /// which makes the objective deterministic.
    pub fn fixed(m: usize, batch_size: usize, stats: BnStats, seed: u64) -> Result<Self> {
        let mut obj = Self::sampled(m, batch_size, stats, seed)?;
        obj.fixed = Some(sample_first_coord_labels(
            &mut rng::setup_stream(seed),
            batch_size,
            m,
        ));
        Ok(obj)
    }

    fn global(&self, w: &[f64], x: &Matrix, y: &[f64], nsq: f64) -> (f64, Vec<f64>) {
        let norm = nsq.sqrt();
        let b = x.rows as f64;
        let mut loss = 0.0;
        let mut gx = vec![0.0; self.m];
        let mut gz_dot_z = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let z = vecops::dot(x.row(i), w) / norm;
            let u = yi * z;
            loss += softplus_neg(u);
            let g = -yi * sigmoid_neg(u) / b;
            vecops::axpy(g, x.row(i), &mut gx);
            gz_dot_z += g * z;
        }
        // Project out w: d z / d w = (I - w w^T/|w|^2) x / |w|.
        let grad = gx
            .iter()
            .zip(w)
            .map(|(gxi, wi)| (gxi - gz_dot_z * wi / norm) / norm)
            .collect();
        (loss / b, grad)
    }

    fn per_batch(&self, w: &[f64], x: &Matrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s = x.matvec(w);
        let (loss, ds) = bn_logistic_backward(&s, y, 0)?;
        let mut grad = vec![0.0; self.m];
        for (i, d) in ds.iter().enumerate() {
            vecops::axpy(*d, x.row(i), &mut grad);
        }
        Ok((loss, grad))
    }
}

/// Batch-normalize `s` (eps = 0) and apply the logistic loss against `y`.
/// Returns the mean loss and `dL/ds`.
fn bn_logistic_backward(s: &[f64], y: &[f64], unit: usize) -> Result<(f64, Vec<f64>)> {
    let (z, sigma) = batch_normalize(s, unit)?;
    let b = s.len() as f64;
    let mut loss = 0.0;
    let g: Vec<f64> = z
        .iter()
        .zip(y)
        .map(|(zi, yi)| {
            let u = yi * zi;
            loss += softplus_neg(u);
            -yi * sigmoid_neg(u) / b
        })
        .collect();
    Ok((loss / b, bn_backward(&z, sigma, &g)))
}

const VAR_FLOOR: f64 = 1e-12;

/// Centered, unit-variance version of `a` and its standard deviation.
fn batch_normalize(a: &[f64], unit: usize) -> Result<(Vec<f64>, f64)> {
    let b = a.len() as f64;
    let mean = a.iter().sum::<f64>() / b;
    let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b;
    if !(var > VAR_FLOOR) {
        return Err(ObjectiveError::DegenerateBatch {
            unit,
            variance: var,
        });
    }
    let sigma = var.sqrt();
    Ok((a.iter().map(|v| (v - mean) / sigma).collect(), sigma))
}

/// Backward pass through batch normalization given upstream `g = dL/dz`.
fn bn_backward(z: &[f64], sigma: f64, g: &[f64]) -> Vec<f64> {
    let b = z.len() as f64;
    let mean_g = g.iter().sum::<f64>() / b;
    let mean_gz = vecops::dot(g, z) / b;
    z.iter()
        .zip(g)
        .map(|(zi, gi)| (gi - mean_g - zi * mean_gz) / sigma)
        .collect()
}

impl Objective for NormLogistic {
    fn name(&self) -> &'static str {
        "norm_logistic"
    }

    fn dim(&self) -> usize {
        self.m
    }

    fn batch(&self, t: u64) -> Batch {
        if self.fixed.is_some() {
            return Batch::Full;
        }
        let (x, y) = sample_first_coord_labels(
            &mut rng::iteration_stream(self.seed, t),
            self.batch_size,
            self.m,
        );
        Batch::Samples { x, y }
    }

    fn loss_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let nsq = check_theta(theta, self.m)?;
        let (x, y) = match (batch, &self.fixed) {
            (Batch::Samples { x, y }, _) => (x, y.as_slice()),
            (Batch::Full, Some((x, y))) => (x, y.as_slice()),
            _ => return Err(ObjectiveError::BatchMismatch(self.name())),
        };
        if x.cols != self.m {
            return Err(ObjectiveError::BatchMismatch(self.name()));
        }
        match self.stats {
            BnStats::Global => Ok(self.global(theta, x, y, nsq)),
            BnStats::PerBatch => self.per_batch(theta, x, y),
        }
    }
}

/// Two-layer network `v^T tanh(BN(W x))` with a fixed random output layer
/// `v`; only `W` (row-major, `hidden x input`) is trainable. Labels come from
/// a fixed random teacher, `y = sgn(u^T x)`.
#[derive(Debug, Clone)]
pub struct TinyNormMlp {
    input: usize,
    hidden: usize,
    batch_size: usize,
    v: Vec<f64>,
    teacher: Vec<f64>,
    fixed: Option<(Matrix, Vec<f64>)>,
    seed: u64,
}

impl TinyNormMlp {
    pub fn new(
        input: usize,
        hidden: usize,
        batch_size: usize,
        fixed_batch: bool,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(ObjectiveError::InvalidConfig(
                "input and hidden widths must be positive".into(),
            ));
        }
        if batch_size < 2 {
            return Err(ObjectiveError::InvalidConfig(
                "batch normalization needs at least two samples".into(),
            ));
        }
        let mut rng = rng::setup_stream(seed);
        let v = rng::normal_vec(&mut rng, hidden);
        let teacher = rng::normal_vec(&mut rng, input);
        let mut obj = Self {
            input,
            hidden,
            batch_size,
            v,
            teacher,
            fixed: None,
            seed,
        };
        if fixed_batch {
            obj.fixed = Some(obj.sample(&mut rng));
        }
        Ok(obj)
    }

    fn sample(&self, rng: &mut impl Rng) -> (Matrix, Vec<f64>) {
        let x = Matrix::from_vec(
            self.batch_size,
            self.input,
            rng::normal_vec(rng, self.batch_size * self.input),
        );
        let y = (0..x.rows)
            .map(|i| {
                if vecops::dot(x.row(i), &self.teacher) >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        (x, y)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }
}

impl Objective for TinyNormMlp {
    fn name(&self) -> &'static str {
        "tiny_norm_mlp"
    }

    fn dim(&self) -> usize {
        self.input * self.hidden
    }

    fn batch(&self, t: u64) -> Batch {
        if self.fixed.is_some() {
            return Batch::Full;
        }
        let (x, y) = self.sample(&mut rng::iteration_stream(self.seed, t));
        Batch::Samples { x, y }
    }

    fn loss_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        check_theta(theta, self.dim())?;
        let (x, y) = match (batch, &self.fixed) {
            (Batch::Samples { x, y }, _) => (x, y.as_slice()),
            (Batch::Full, Some((x, y))) => (x, y.as_slice()),
            _ => return Err(ObjectiveError::BatchMismatch(self.name())),
        };
        if x.cols != self.input || x.rows < 2 {
            return Err(ObjectiveError::BatchMismatch(self.name()));
        }
        let w = Matrix::from_vec(self.hidden, self.input, theta.to_vec());
        let nb = x.rows;

        // Forward, unit by unit: pre-activation column, BN, tanh.
        let mut zs = Vec::with_capacity(self.hidden);
        let mut sigmas = Vec::with_capacity(self.hidden);
        let mut hs = Vec::with_capacity(self.hidden);
        for j in 0..self.hidden {
            let a: Vec<f64> = (0..nb).map(|b| vecops::dot(w.row(j), x.row(b))).collect();
            let (z, sigma) = batch_normalize(&a, j)?;
            hs.push(z.iter().map(|v| v.tanh()).collect::<Vec<_>>());
            zs.push(z);
            sigmas.push(sigma);
        }
        let mut loss = 0.0;
        let dout: Vec<f64> = (0..nb)
            .map(|b| {
                let out: f64 = (0..self.hidden).map(|j| self.v[j] * hs[j][b]).sum();
                let u = y[b] * out;
                loss += softplus_neg(u);
                -y[b] * sigmoid_neg(u) / nb as f64
            })
            .collect();

        let mut grad = vec![0.0; self.dim()];
        for j in 0..self.hidden {
            let g: Vec<f64> = (0..nb)
                .map(|b| dout[b] * self.v[j] * (1.0 - hs[j][b] * hs[j][b]))
                .collect();
            let da = bn_backward(&zs[j], sigmas[j], &g);
            let row = &mut grad[j * self.input..(j + 1) * self.input];
            for (b, d) in da.iter().enumerate() {
                vecops::axpy(*d, x.row(b), row);
            }
        }
        Ok((loss / nb as f64, grad))
    }
}

/// `0.5 theta^T A theta`; not scale invariant. Used as a negative control.
#[derive(Debug, Clone)]
pub struct PlainQuadratic {
    a: Matrix,
}

impl PlainQuadratic {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(ObjectiveError::InvalidConfig("dim must be positive".into()));
        }
        Ok(Self {
            a: random_spd(dim, &mut rng::setup_stream(seed)),
        })
    }
}

impl Objective for PlainQuadratic {
    fn name(&self) -> &'static str {
        "plain_quadratic"
    }

    fn dim(&self) -> usize {
        self.a.rows
    }

    fn batch(&self, _t: u64) -> Batch {
        Batch::Full
    }

    fn loss_grad(&self, theta: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>)> {
        check_theta(theta, self.dim())?;
        let g = self.a.matvec(theta);
        Ok((0.5 * vecops::dot(theta, &g), g))
    }

    fn scale_invariant(&self) -> bool {
        false
    }
}

/// Objective selection as it appears in run configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    NormQuadratic {
        #[serde(alias = "m")]
        dim: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    NormLogistic {
        #[serde(alias = "dim")]
        m: usize,
        batch: usize,
        #[serde(default)]
        fixed: bool,
        #[serde(default)]
        stats: BnStats,
        #[serde(default)]
        seed: u64,
    },
    TinyNormMlp {
        #[serde(alias = "m")]
        dim: usize,
        hidden: usize,
        batch: usize,
        #[serde(default)]
        fixed: bool,
        #[serde(default)]
        seed: u64,
    },
    PlainQuadratic {
        #[serde(alias = "m")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Arc<dyn Objective>> {
        Ok(match *self {
            Self::NormQuadratic { dim, noise, seed } => Arc::new(NormQuadratic::new(dim, noise, seed)?),
            Self::NormLogistic {
                m,
                batch,
                fixed,
                stats,
                seed,
            } => {
                if fixed {
                    Arc::new(NormLogistic::fixed(m, batch, stats, seed)?)
                } else {
                    Arc::new(NormLogistic::sampled(m, batch, stats, seed)?)
                }
            }
            Self::TinyNormMlp {
                dim,
                hidden,
                batch,
                fixed,
                seed,
            } => Arc::new(TinyNormMlp::new(dim, hidden, batch, fixed, seed)?),
            Self::PlainQuadratic { dim, seed } => Arc::new(PlainQuadratic::new(dim, seed)?),
        })
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            Self::NormQuadratic { seed, .. }
            | Self::NormLogistic { seed, .. }
            | Self::TinyNormMlp { seed, .. }
            | Self::PlainQuadratic { seed, .. } => *seed = new_seed,
        }
        s
    }
}

const INVARIANCE_TOL: f64 = 1e-10;
const ORTHOGONALITY_TOL: f64 = 1e-10;
const INVERSE_SCALING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub objective: String,
    /// `max_c |L(c theta) - L(theta)| / (1 + |L(theta)|)`.
    pub max_rel_diff: f64,
    pub worst_scale: f64,
    pub pass: bool,
}

pub fn check_scale_invariance(
    obj: &dyn Objective,
    theta: &[f64],
    scales: &[f64],
    batch: &Batch,
) -> Result<InvarianceReport> {
    let base = obj.loss(theta, batch)?;
    let mut max_rel_diff = 0.0;
    let mut worst_scale = 1.0;
    for &c in scales {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "scales must be positive, got {c}"
            )));
        }
        let l = obj.loss(&vecops::scale(theta, c), batch)?;
        let d = (l - base).abs() / (1.0 + base.abs());
        if d > max_rel_diff {
            max_rel_diff = d;
            worst_scale = c;
        }
    }
    Ok(InvarianceReport {
        objective: obj.name().to_string(),
        max_rel_diff,
        worst_scale,
        pass: max_rel_diff <= INVARIANCE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub objective: String,
    pub grad_norm: f64,
    /// `|<grad, theta>| / (||grad|| ||theta||)`, zero when the gradient vanishes.
    pub orthogonality: f64,
    /// `max_c ||c grad(c theta) - grad(theta)|| / ||grad(theta)||`.
    pub inverse_scaling: f64,
    pub pass: bool,
}

pub fn check_gradient_properties(
    obj: &dyn Objective,
    theta: &[f64],
    scales: &[f64],
    batch: &Batch,
) -> Result<GradientReport> {
    let (_, g) = obj.loss_grad(theta, batch)?;
    let gn = vecops::norm(&g);
    let tn = vecops::norm(theta);
    let orthogonality = if gn == 0.0 {
        0.0
    } else {
        vecops::dot(&g, theta).abs() / (gn * tn)
    };
    let mut inverse_scaling: f64 = 0.0;
    for &c in scales {
        let (_, gc) = obj.loss_grad(&vecops::scale(theta, c), batch)?;
        let diff = vecops::norm(&vecops::sub(&vecops::scale(&gc, c), &g));
        let rel = if gn == 0.0 { diff } else { diff / gn };
        inverse_scaling = inverse_scaling.max(rel);
    }
    Ok(GradientReport {
        objective: obj.name().to_string(),
        grad_norm: gn,
        orthogonality,
        inverse_scaling,
        pass: orthogonality <= ORTHOGONALITY_TOL && inverse_scaling <= INVERSE_SCALING_TOL,
    })
}

/// Central-difference gradient with step `h` per coordinate.
pub fn finite_diff_grad(
    obj: &dyn Objective,
    theta: &[f64],
    batch: &Batch,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ObjectiveError::InvalidStep(h));
    }
    if theta.len() != obj.dim() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: obj.dim(),
            got: theta.len(),
        });
    }
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = obj.loss(&x, batch)?;
            x[i] = theta[i] - h;
            let down = obj.loss(&x, batch)?;
            x[i] = theta[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}
