use std::fs;
use std::sync::Arc;

use expwd::dynamics::{
    check_monotone_growth, check_norm_recursion, check_pythagorean, estimate_equilibrium,
    sufficient_decrease_audit, EquilibriumReport, MonotoneReport, NormSeries, PythagoreanReport,
    DecreaseAudit, RecursionReport,
};
use expwd::graphhom::{
    is_scale_invariant, numeric_crosscheck, verdict_is_order_independent, CompGraph,
    CrosscheckReport, GraphError, GraphNet, Realization, Verdict, CROSSCHECK_SCALES,
};
use expwd::lrsched::{
    alpha_bounds_check, translate, BoundsReport, Method, PhaseSummary, ScheduleError,
    ScheduleSpec, TranslatedSchedule,
};
use expwd::rng;
use expwd::scaleinv::{Objective, ObjectiveSpec};
use expwd::statealg::{verify_all, verify_negative_control, LemmaReport};
use expwd::toymodel::{
    chi_square_tail_check, escape_experiment, run_case, vector_at_angle, ChiSquareReport,
    EscapeReport, Regime, Sampling, ToyConfig, ToyTrajectory,
};
use expwd::trainer::{
    run_sgd_exp, run_sgd_wd, run_sgd_wd_for, verify_equivalence, EquivalenceReport, RunConfig,
    Tolerances, Trajectory,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::output::{config_hash, Sink};
use crate::{Common, Failure};

fn read_json(c: &Common) -> Result<Value, Failure> {
    let text = fs::read_to_string(&c.config).map_err(|e| Failure::io(&c.config, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", c.config.display())))
}

fn parse<T: DeserializeOwned>(v: Value, what: &str) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure::usage(format!("invalid {what} config: {e}")))
}

fn schedule_failure(spec: &ScheduleSpec, e: ScheduleError) -> Failure {
    match e {
        ScheduleError::InfeasibleRoots { .. } => Failure::infeasible(e.to_string()),
        ScheduleError::NonPositiveAlpha { t, .. } => Failure::infeasible(format!(
            "{e} (phase {}); the schedule has no exponential equivalent",
            spec.phase_of(t)
        )),
        other => Failure::usage(other.to_string()),
    }
}

fn translate_checked(spec: &ScheduleSpec, method: Method) -> Result<TranslatedSchedule, Failure> {
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    translate(spec, method).map_err(|e| schedule_failure(spec, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TranslateConfig {
    #[serde(flatten)]
    schedule: ScheduleSpec,
    #[serde(default)]
    method: Method,
}

#[derive(Serialize)]
struct TranslateSummary<'a> {
    method: Method,
    gamma: f64,
    iterations: usize,
    phases: &'a [PhaseSummary],
    corrections: usize,
    first_overflow: Option<usize>,
    log_eta_tilde_final: Option<f64>,
    bounds: Option<BoundsReport>,
}

pub fn translate_schedule(c: &Common) -> Result<String, Failure> {
    let cfg: TranslateConfig = parse(read_json(c)?, "translate")?;
    let mut sink = Sink::new(&c.out, "translate", config_hash(&cfg)?)?;
    let sched = translate_checked(&cfg.schedule, cfg.method)?;
    let bounds = match cfg.method {
        Method::TexpPlusPlus => Some(
            alpha_bounds_check(&sched).map_err(|e| Failure::verification(e.to_string()))?,
        ),
        _ => None,
    };
    sink.csv("schedule.csv", |w| sched.write_csv(w))?;
    let summary = TranslateSummary {
        method: cfg.method,
        gamma: sched.gamma,
        iterations: sched.len(),
        phases: &sched.phases,
        corrections: sched.corrections.len(),
        first_overflow: sched.first_overflow(),
        log_eta_tilde_final: sched.log_eta_tilde.last().copied(),
        bounds,
    };
    sink.json("summary.json", &summary)?;
    let margins: Vec<String> = sched
        .phases
        .iter()
        .map(|p| format!("{:.4}", p.feasibility_margin))
        .collect();
    Ok(format!(
        "translated {} iterations in {} phase(s); feasibility margins [{}]; wrote {}",
        sched.len(),
        sched.phases.len(),
        margins.join(", "),
        c.out.display()
    ))
}

/// Keys of a training config that are not objective fields.
const TRAIN_KEYS: [&str; 8] = [
    "schedule",
    "method",
    "steps",
    "init_seed",
    "stabilize_every",
    "mode",
    "tolerances",
    "perturb",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Wd,
    Exp,
    #[default]
    Both,
}

/// Additive change to one `log eta_tilde_t`, used to show that a broken
/// schedule is caught.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Perturb {
    t: usize,
    delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOptions {
    schedule: ScheduleSpec,
    #[serde(default)]
    method: Method,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    init_seed: Option<u64>,
    #[serde(default)]
    stabilize_every: Option<usize>,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    tolerances: Option<Tolerances>,
    #[serde(default)]
    perturb: Option<Perturb>,
}

#[derive(Debug, Serialize)]
struct TrainConfig {
    objective: ObjectiveSpec,
    #[serde(flatten)]
    options: TrainOptions,
}

/// Split a flat config into the objective fields and everything else.
fn split_objective(v: Value, keys: &[&str]) -> Result<(ObjectiveSpec, Value), Failure> {
    let Value::Object(mut all) = v else {
        return Err(Failure::usage("config must be a JSON object"));
    };
    let mut rest = Map::new();
    for k in keys {
        if let Some(x) = all.remove(*k) {
            rest.insert((*k).to_string(), x);
        }
    }
    let objective = parse(Value::Object(all), "objective")?;
    Ok((objective, Value::Object(rest)))
}

fn objective_seed(spec: &ObjectiveSpec) -> u64 {
    match spec {
        ObjectiveSpec::NormQuadratic { seed, .. }
        | ObjectiveSpec::NormLogistic { seed, .. }
        | ObjectiveSpec::TinyNormMlp { seed, .. }
        | ObjectiveSpec::PlainQuadratic { seed, .. } => *seed,
    }
}

fn load_train(c: &Common) -> Result<TrainConfig, Failure> {
    let (mut objective, rest) = split_objective(read_json(c)?, &TRAIN_KEYS)?;
    let mut options: TrainOptions = parse(rest, "run")?;
    if let Some(s) = c.seed {
        objective = objective.with_seed(s);
        options.init_seed = Some(s);
    }
    Ok(TrainConfig { objective, options })
}

fn build_objective(spec: &ObjectiveSpec) -> Result<Arc<dyn Objective>, Failure> {
    spec.build().map_err(|e| Failure::usage(e.to_string()))
}

fn initial_theta(obj: &dyn Objective, seed: u64) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, 0), obj.dim())
}

struct Prepared {
    run: RunConfig,
    sched: TranslatedSchedule,
}

fn prepare(cfg: &TrainConfig, directions: bool) -> Result<Prepared, Failure> {
    let o = &cfg.options;
    let sched = translate_checked(&o.schedule, o.method)?;
    let obj = build_objective(&cfg.objective)?;
    let steps = o.steps.unwrap_or(sched.len());
    let seed = o.init_seed.unwrap_or_else(|| objective_seed(&cfg.objective));
    let theta = initial_theta(obj.as_ref(), seed);
    let mut run = RunConfig::new(obj, sched.gamma, theta, steps).stabilized(o.stabilize_every);
    if directions {
        run = run.recording_directions();
    }
    Ok(Prepared { run, sched })
}

fn train_failure(e: expwd::trainer::TrainError) -> Failure {
    match e {
        expwd::trainer::TrainError::NumericalBlowup { .. } => Failure::verification(e.to_string()),
        other => Failure::usage(other.to_string()),
    }
}

fn exp_schedule(p: &Prepared, perturb: Option<Perturb>) -> Result<TranslatedSchedule, Failure> {
    let mut s = p.sched.clone();
    if let Some(Perturb { t, delta }) = perturb {
        let slot = s
            .log_eta_tilde
            .get_mut(t)
            .ok_or_else(|| Failure::usage(format!("perturb.t = {t} is past the schedule")))?;
        *slot += delta;
    }
    Ok(s)
}

fn write_trajectory(sink: &mut Sink, name: &str, tr: &Trajectory) -> Result<(), Failure> {
    sink.csv(name, |w| tr.write_csv(w))
}

pub fn run(c: &Common) -> Result<String, Failure> {
    let cfg = load_train(c)?;
    let mut sink = Sink::new(&c.out, "run", config_hash(&cfg)?)?;
    let p = prepare(&cfg, false)?;
    let mut lines = Vec::new();
    if cfg.options.mode != Mode::Exp {
        let tr = run_sgd_wd_for(&p.run, &p.sched).map_err(train_failure)?;
        write_trajectory(&mut sink, "wd.csv", &tr)?;
        lines.push(format!("wd: final log-norm {:.6}", tr.records.last().map_or(0.0, |r| r.log_norm)));
    }
    if cfg.options.mode != Mode::Wd {
        let sched = exp_schedule(&p, cfg.options.perturb)?;
        let tr = run_sgd_exp(&p.run, &sched).map_err(train_failure)?;
        write_trajectory(&mut sink, "exp.csv", &tr)?;
        lines.push(format!("exp: final log-norm {:.6}", tr.records.last().map_or(0.0, |r| r.log_norm)));
    }
    Ok(format!("{} steps; {}; wrote {}", p.run.steps, lines.join(", "), c.out.display()))
}

#[derive(Serialize)]
struct VacuousReport {
    steps: usize,
    pass: bool,
}

pub fn verify(c: &Common) -> Result<String, Failure> {
    let mut cfg = load_train(c)?;
    let tol = cfg.options.tolerances.unwrap_or_default();
    cfg.options.tolerances = Some(tol);
    let mut sink = Sink::new(&c.out, "verify", config_hash(&cfg)?)?;
    if cfg.options.steps == Some(0) {
        sink.json("report.json", &VacuousReport { steps: 0, pass: true })?;
        return Ok("0 steps: equivalence holds vacuously".into());
    }
    let p = prepare(&cfg, true)?;
    let a = run_sgd_wd_for(&p.run, &p.sched).map_err(train_failure)?;
    let b = run_sgd_exp(&p.run, &exp_schedule(&p, cfg.options.perturb)?).map_err(train_failure)?;
    let rep: EquivalenceReport =
        verify_equivalence(&a, &b, &p.sched.log_p, tol).map_err(train_failure)?;
    write_trajectory(&mut sink, "wd.csv", &a)?;
    write_trajectory(&mut sink, "exp.csv", &b)?;
    sink.csv("equivalence.csv", |w| {
        writeln!(w, "t,direction_gap,log_norm_err")?;
        for e in &rep.per_t {
            writeln!(w, "{},{:.16e},{:.16e}", e.t, e.direction_gap, e.log_norm_err)?;
        }
        Ok(())
    })?;
    sink.json("report.json", &rep)?;
    let line = format!(
        "{} steps: max 1-cos {:.3e}, max log-norm error {:.3e}",
        p.run.steps, rep.max_direction_gap, rep.max_log_norm_err
    );
    if rep.pass {
        Ok(format!("{line}; equivalent"))
    } else {
        Err(Failure::verification(format!(
            "{line}; tolerance first exceeded at t = {}",
            rep.first_failure.map_or("?".into(), |t| t.to_string())
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicsOptions {
    gamma: f64,
    eta: f64,
    lambda: f64,
    steps: usize,
    #[serde(default)]
    init_seed: Option<u64>,
    #[serde(default)]
    burn_in: Option<usize>,
    /// Constant of the sufficient-decrease audit.
    #[serde(default = "default_audit_c")]
    audit_c: f64,
}

fn default_audit_c() -> f64 {
    0.5
}

const DYNAMICS_KEYS: [&str; 7] = ["gamma", "eta", "lambda", "steps", "init_seed", "burn_in", "audit_c"];

#[derive(Debug, Serialize)]
struct DynamicsConfig {
    objective: ObjectiveSpec,
    #[serde(flatten)]
    options: DynamicsOptions,
}

#[derive(Serialize)]
struct DynamicsReport {
    recursion_max_abs_residual: f64,
    recursion_max_r: f64,
    recursion_pass: bool,
    monotone: Option<MonotoneReport>,
    pythagorean: Option<PythagoreanReport>,
    equilibrium: Option<EquilibriumReport>,
    decrease_audit: Option<DecreaseAudit>,
    pass: bool,
}

pub fn dynamics(c: &Common) -> Result<String, Failure> {
    let (mut objective, rest) = split_objective(read_json(c)?, &DYNAMICS_KEYS)?;
    let mut options: DynamicsOptions = parse(rest, "dynamics")?;
    if let Some(s) = c.seed {
        objective = objective.with_seed(s);
        options.init_seed = Some(s);
    }
    let cfg = DynamicsConfig { objective, options };
    let mut sink = Sink::new(&c.out, "dynamics", config_hash(&cfg)?)?;
    let o = &cfg.options;
    let obj = build_objective(&cfg.objective)?;
    let seed = o.init_seed.unwrap_or_else(|| objective_seed(&cfg.objective));
    let run = RunConfig::new(obj.clone(), o.gamma, initial_theta(obj.as_ref(), seed), o.steps);
    let tr = run_sgd_wd(&run, &vec![o.eta; o.steps], &vec![o.lambda; o.steps]).map_err(train_failure)?;
    let series = NormSeries::from_trajectory(&tr);

    let rec: RecursionReport = check_norm_recursion(&series);
    let monotone = (o.lambda == 0.0).then(|| check_monotone_growth(&series)).transpose();
    let pythagorean = (o.gamma == 0.0).then(|| check_pythagorean(&series)).transpose();
    let equilibrium = (o.lambda > 0.0).then(|| estimate_equilibrium(&series, o.burn_in)).transpose();
    let audit = (o.gamma == 0.0 && o.lambda > 0.0)
        .then(|| sufficient_decrease_audit(&tr, o.audit_c))
        .transpose();
    let to_usage = |e: expwd::dynamics::DynamicsError| Failure::usage(e.to_string());
    let (monotone, pythagorean) = (monotone.map_err(to_usage)?, pythagorean.map_err(to_usage)?);
    let (equilibrium, decrease_audit) = (equilibrium.map_err(to_usage)?, audit.map_err(to_usage)?);

    let pass = rec.pass
        && monotone.as_ref().is_none_or(|m| m.pass)
        && pythagorean.as_ref().is_none_or(|p| p.pass)
        && equilibrium.as_ref().is_none_or(|e| e.pass)
        && decrease_audit.as_ref().is_none_or(|a| a.consistent);
    write_trajectory(&mut sink, "trajectory.csv", &tr)?;
    sink.csv("recursion_residuals.csv", |w| rec.write_csv(w))?;
    let report = DynamicsReport {
        recursion_max_abs_residual: rec.max_abs_residual,
        recursion_max_r: rec.max_r,
        recursion_pass: rec.pass,
        monotone,
        pythagorean,
        equilibrium,
        decrease_audit,
        pass,
    };
    sink.json("report.json", &report)?;
    let mut line = format!("{} steps: recursion residual {:.3e}", o.steps, rec.max_abs_residual);
    if let Some(e) = &report.equilibrium {
        line += &format!(", D/R {:.4e} vs {:.4e}", e.ratio, e.theory);
    }
    if pass {
        Ok(line)
    } else {
        Err(Failure::verification(format!("{line}; a norm check failed, see report.json")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChiSquareCase {
    k: usize,
    beta: f64,
}

fn default_trials() -> usize {
    100
}

fn default_samples() -> usize {
    100_000
}

fn default_start_angle() -> f64 {
    0.5
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyCommandConfig {
    toy: ToyConfig,
    #[serde(default = "default_trials")]
    trials: usize,
    /// Length of the per-regime angle series; defaults to the escape window.
    #[serde(default)]
    regime_steps: Option<usize>,
    #[serde(default = "default_start_angle")]
    start_angle: f64,
    #[serde(default)]
    chi_square: Vec<ChiSquareCase>,
    #[serde(default = "default_samples")]
    samples: usize,
}

#[derive(Serialize)]
struct ToyReport {
    escape: EscapeReport,
    chi_square: Vec<ChiSquareReport>,
    pass: bool,
}

pub fn toy(c: &Common) -> Result<String, Failure> {
    let mut cfg: ToyCommandConfig = parse(read_json(c)?, "toy")?;
    if let Some(s) = c.seed {
        cfg.toy.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    let mut sink = Sink::new(&c.out, "toy", config_hash(&cfg)?)?;
    let toy_err = |e: expwd::toymodel::ToyError| Failure::usage(e.to_string());
    cfg.toy.validate().map_err(toy_err)?;
    let escape = escape_experiment(&cfg.toy, cfg.trials).map_err(toy_err)?;

    let steps = cfg.regime_steps.unwrap_or(escape.window);
    let w0 = vector_at_angle(
        &mut rng::setup_stream(cfg.toy.seed),
        cfg.toy.m,
        cfg.start_angle,
        cfg.toy.init_norm,
    );
    let regimes = [Regime::WdOnly, Regime::BnOnly, Regime::BnWd];
    let runs: Vec<Option<ToyTrajectory>> = regimes
        .iter()
        .map(|&r| {
            if r == Regime::WdOnly && cfg.toy.sampling == Sampling::Population {
                return Ok(None);
            }
            run_case(r, &cfg.toy, &w0, steps).map(Some)
        })
        .collect::<Result<_, _>>()
        .map_err(toy_err)?;
    sink.csv("regimes.csv", |w| {
        writeln!(w, "t,wd_only_angle,bn_only_angle,bn_wd_angle,wd_only_norm,bn_only_norm,bn_wd_norm")?;
        for t in 0..=steps {
            let cell = |tr: &Option<ToyTrajectory>, f: fn(&ToyTrajectory) -> &Vec<f64>| {
                tr.as_ref().map(|x| format!("{:.16e}", f(x)[t])).unwrap_or_default()
            };
            let a: Vec<String> = runs.iter().map(|r| cell(r, |x| &x.angle)).collect();
            let n: Vec<String> = runs.iter().map(|r| cell(r, |x| &x.norm)).collect();
            writeln!(w, "{t},{},{}", a.join(","), n.join(","))?;
        }
        Ok(())
    })?;

    let chi_square = cfg
        .chi_square
        .iter()
        .enumerate()
        .map(|(i, case)| {
            chi_square_tail_check(case.k, case.beta, cfg.samples, rng::child_seed(cfg.toy.seed, i as u64))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(toy_err)?;
    let pass = escape.pass && chi_square.iter().all(|r| r.pass);
    let line = format!(
        "{}/{} trials escaped within {} iterations (threshold {:.3}); {} chi-square case(s)",
        escape.escaped,
        escape.trials,
        escape.window,
        escape.threshold,
        chi_square.len()
    );
    sink.json("report.json", &ToyReport { escape, chi_square, pass })?;
    if pass {
        Ok(line)
    } else {
        Err(Failure::verification(format!("{line}; a check failed, see report.json")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericOptions {
    width: usize,
    batch: usize,
    seed: u64,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self {
            width: 4,
            batch: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphCheckConfig {
    #[serde(flatten)]
    graph: CompGraph,
    #[serde(default)]
    simplify_bias_before_norm: bool,
    #[serde(default)]
    numeric: Option<NumericOptions>,
}

#[derive(Serialize)]
struct GraphReport {
    verdict: Verdict,
    simplified: bool,
    order_independent: bool,
    crosscheck: Option<CrosscheckReport>,
}

fn graph_failure(e: GraphError) -> Failure {
    match e {
        GraphError::RealizationMismatch { .. } | GraphError::Realization(_) => {
            Failure::verification(e.to_string())
        }
        other => Failure::usage(other.to_string()),
    }
}

pub fn graph_check(c: &Common) -> Result<String, Failure> {
    let mut cfg: GraphCheckConfig = parse(read_json(c)?, "graph")?;
    let mut numeric = cfg.numeric.unwrap_or_default();
    if let Some(s) = c.seed {
        numeric.seed = s;
    }
    cfg.numeric = Some(numeric);
    let mut sink = Sink::new(&c.out, "graph-check", config_hash(&cfg)?)?;
    cfg.graph.validate().map_err(graph_failure)?;
    let checked = if cfg.simplify_bias_before_norm {
        cfg.graph.without_bias_before_norm().map_err(graph_failure)?
    } else {
        cfg.graph.clone()
    };
    let verdict = is_scale_invariant(&checked).map_err(graph_failure)?;
    let order_independent = verdict_is_order_independent(&checked, 16).map_err(graph_failure)?;
    // The realization is always the graph as written.
    let net = GraphNet::new(&cfg.graph, numeric.width, numeric.batch, numeric.seed)
        .map_err(graph_failure)?;
    let theta = net.random_theta(numeric.seed);
    let crosscheck = if net.dim() == 0 {
        None
    } else {
        Some(numeric_crosscheck(&checked, &net, &theta, &CROSSCHECK_SCALES).map_err(graph_failure)?)
    };
    let line = match (&verdict.invariant, &verdict.failing_node) {
        (true, _) => "scale invariant".to_string(),
        (false, Some(n)) => format!("not scale invariant: fails at node `{n}`"),
        (false, None) => "not scale invariant".to_string(),
    };
    let agree = crosscheck.as_ref().is_none_or(|r| r.pass);
    sink.json(
        "verdict.json",
        &GraphReport {
            verdict,
            simplified: cfg.simplify_bias_before_norm,
            order_independent,
            crosscheck,
        },
    )?;
    if agree && order_independent {
        Ok(line)
    } else {
        Err(Failure::verification(format!(
            "{line}; numeric realization disagrees with the symbolic verdict"
        )))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LemmasConfig {
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    negative_control_only: bool,
}

#[derive(Serialize)]
struct LemmasReport {
    reports: Vec<LemmaReport>,
    positive_violations: usize,
    negative_control_flagged: bool,
    pass: bool,
}

pub fn lemmas(c: &Common) -> Result<String, Failure> {
    let mut cfg: LemmasConfig = parse(read_json(c)?, "lemmas")?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    let mut sink = Sink::new(&c.out, "lemmas", config_hash(&cfg)?)?;
    let state_err = |e: expwd::statealg::StateError| Failure::usage(e.to_string());
    let reports = if cfg.negative_control_only {
        vec![verify_negative_control(cfg.trials, cfg.seed).map_err(state_err)?]
    } else {
        verify_all(cfg.trials, cfg.seed).map_err(state_err)?
    };
    let (control, positive) = reports.split_last().expect("harness list is never empty");
    let positive_violations: usize = positive.iter().map(|r| r.violations.len()).sum();
    let negative_control_flagged = !control.violations.is_empty();
    let pass = positive_violations == 0 && (negative_control_flagged || cfg.trials == 0);
    let line = format!(
        "{} harness(es) x {} trials: {} violation(s) on lemmas, negative control {}",
        reports.len(),
        cfg.trials,
        positive_violations,
        if negative_control_flagged { "flagged" } else { "not flagged" }
    );
    sink.json(
        "report.json",
        &LemmasReport {
            reports,
            positive_violations,
            negative_control_flagged,
            pass,
        },
    )?;
    if pass {
        Ok(line)
    } else {
        Err(Failure::verification(line))
    }
}
