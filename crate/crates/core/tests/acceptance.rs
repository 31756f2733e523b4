//! End-to-end acceptance checks. Runs without the libtest harness so that each
//! criterion prints exactly one result line; the process exits non-zero if
//! any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use expwd::dynamics::{
    check_monotone_growth, check_norm_recursion, check_pythagorean, estimate_equilibrium,
    NormSeries,
};
use expwd::graphhom::{
    fixtures, is_scale_invariant, numeric_crosscheck, CompGraph, GraphNet, CROSSCHECK_SCALES,
};
use expwd::lrsched::{
    solve_quadratic, texp_texppp_deviation, translate, translate_constant, HyperParams, Method,
    ScheduleSpec, TranslatedSchedule,
};
use expwd::rng;
use expwd::scaleinv::{BnStats, NormLogistic, NormQuadratic, Objective};
use expwd::statealg::verify_all;
use expwd::toymodel::{chi_square_tail_check, escape_experiment, ToyConfig};
use expwd::trainer::{
    run_sgd_exp, run_sgd_wd, run_sgd_wd_for, verify_equivalence, EquivalenceReport, RunConfig,
    Tolerances,
};

const GAMMA: f64 = 0.9;
const LAMBDA: f64 = 5e-4;
const ETA: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn theta0(dim: usize, seed: u64) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, 0), dim)
}

fn logistic(seed: u64) -> Arc<dyn Objective> {
    Arc::new(NormLogistic::sampled(20, 256, BnStats::Global, seed).unwrap())
}

fn pair(cfg: &RunConfig, sched: &TranslatedSchedule, tol: Tolerances) -> EquivalenceReport {
    let a = run_sgd_wd_for(cfg, sched).unwrap();
    let b = run_sgd_exp(cfg, sched).unwrap();
    verify_equivalence(&a, &b, &sched.log_p, tol).unwrap()
}

/// Larger root of `z^2 - (1 + gamma - x) z + gamma` by bisection.
fn bisect_root(gamma: f64, x: f64) -> f64 {
    let f = |z: f64| z * z - (1.0 + gamma - x) * z + gamma;
    let (mut lo, mut hi) = (gamma.sqrt(), 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn root_growth() -> Outcome {
    let z = solve_quadratic(GAMMA, LAMBDA, ETA).unwrap().z1;
    let oracle = bisect_root(GAMMA, LAMBDA * ETA);
    let sched = translate_constant(GAMMA, ETA, LAMBDA, 1000).unwrap();
    let alpha_late = *sched.alpha.last().unwrap();
    let growth = (-2.0 * 391.0 * z.ln()).exp();
    let pass = (growth - 1.481).abs() <= 1e-3
        && (z - oracle).abs() <= 1e-12
        && (alpha_late - oracle).abs() <= 1e-12;
    outcome(
        pass,
        format!("epoch growth {growth:.6}, |z1 - bisection| = {:.1e}, |alpha_1000 - bisection| = {:.1e}",
            (z - oracle).abs(), (alpha_late - oracle).abs()),
    )
}

fn feasibility_margin() -> Outcome {
    let m = HyperParams::new(GAMMA, LAMBDA, ETA).unwrap().feasibility_margin();
    outcome((m - 0.019).abs() <= 1e-3, format!("margin {m:.6}"))
}

fn momentum_free_equivalence() -> Outcome {
    let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(20, 0.0, 3).unwrap());
    let cfg = RunConfig::new(obj, 0.0, theta0(20, 3), 200).recording_directions();
    let sched = translate_constant(0.0, ETA, LAMBDA, 200).unwrap();
    let rep = pair(&cfg, &sched, Tolerances::default());
    let shrink = (1.0 - LAMBDA * ETA).ln();
    let offset_err = (0..=200)
        .map(|t| (sched.log_p[t] - sched.log_p[0] + t as f64 * shrink).abs())
        .fold(0.0, f64::max);
    let cos_ok = rep.max_direction_gap <= 1e-8;
    let norm_ok = rep.max_log_norm_err <= 1e-7 && offset_err <= 1e-7;
    outcome(
        cos_ok && norm_ok,
        format!(
            "max 1-cos {:.1e}, max log-norm err {:.1e}, |logP_t - logP_0 + t ln(1-lambda eta)| <= {:.1e}",
            rep.max_direction_gap, rep.max_log_norm_err, offset_err
        ),
    )
}

fn momentum_tolerances() -> Tolerances {
    Tolerances {
        direction: 1e-7,
        log_norm: 1e-6,
    }
}

fn max_gap(rep: &EquivalenceReport) -> (f64, f64) {
    let dir = rep.per_t.iter().map(|e| e.direction_gap).fold(0.0, f64::max);
    let ln = rep.per_t.iter().map(|e| e.log_norm_err).fold(0.0, f64::max);
    (dir, ln)
}

/// Fixed tolerances, not the `1 + t/100` growth used elsewhere.
fn within(rep: &EquivalenceReport, tol: Tolerances) -> bool {
    let (dir, ln) = max_gap(rep);
    dir <= tol.direction && ln <= tol.log_norm
}

fn momentum_equivalence() -> Outcome {
    let cfg = RunConfig::new(logistic(4), GAMMA, theta0(20, 4), 300).recording_directions();
    let sched = translate_constant(GAMMA, ETA, LAMBDA, 300).unwrap();
    let rep = pair(&cfg, &sched, momentum_tolerances());
    let (dir, ln) = max_gap(&rep);
    outcome(
        within(&rep, momentum_tolerances()),
        format!("max 1-cos {dir:.1e}, max log-norm err {ln:.1e}"),
    )
}

fn multi_phase_equivalence() -> Outcome {
    let spec = ScheduleSpec::uniform_step_decay(GAMMA, ETA, LAMBDA, 0.1, 100, 3);
    let cfg = RunConfig::new(logistic(5), GAMMA, theta0(20, 5), 300).recording_directions();
    let sched = translate(&spec, Method::Texp).unwrap();
    let rep = pair(&cfg, &sched, momentum_tolerances());
    let (dir, ln) = max_gap(&rep);

    let mut bare = sched.clone();
    bare.corrections.clear();
    let broken = pair(&cfg, &bare, momentum_tolerances());
    // Removing the corrections must raise both error measures by three
    // orders of magnitude at every phase start, and above rounding noise.
    let mut power = true;
    let mut shown = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for start in [100, 200] {
        let t = start + 1;
        let (w, b) = (&rep.per_t[t], &broken.per_t[t]);
        power &= b.direction_gap >= 1e3 * w.direction_gap && b.direction_gap > 1e-24;
        power &= b.log_norm_err >= 1e3 * w.log_norm_err && b.log_norm_err > 1e-10;
        shown = (
            shown.0.max(w.direction_gap),
            shown.1.max(b.direction_gap),
            shown.2.max(w.log_norm_err),
            shown.3.max(b.log_norm_err),
        );
    }
    outcome(
        within(&rep, momentum_tolerances()) && power,
        format!(
            "max 1-cos {dir:.1e}, max log-norm err {ln:.1e}; after phase starts without corrections 1-cos {:.1e} -> {:.1e}, log-norm err {:.1e} -> {:.1e}",
            shown.0, shown.1, shown.2, shown.3
        ),
    )
}

fn texp_vs_texppp() -> Outcome {
    let spec = ScheduleSpec::uniform_step_decay(GAMMA, ETA, LAMBDA, 0.1, 200, 3);
    let rep = texp_texppp_deviation(&spec).unwrap();
    let ex = rep.exceedances_for(0.0015, 0.9009);
    let worst = rep.entries.iter().map(|e| e.deviation).fold(0.0, f64::max);
    outcome(
        ex.is_empty(),
        format!("{} iterations, {} exceedances, max deviation {worst:.2e}", rep.entries.len(), ex.len()),
    )
}

fn lemma_harness() -> Outcome {
    let reports = verify_all(100, 7).unwrap();
    let (control, positive) = reports.split_last().unwrap();
    let worst = positive.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let ok = positive.iter().all(|r| r.trials == 100 && r.passed()) && !control.passed();
    outcome(
        ok,
        format!(
            "{} lemmas x 100 trials, max rel err {worst:.1e}; negative control flagged {} of {}",
            positive.len(),
            control.violations.len(),
            control.trials
        ),
    )
}

fn norm_identities() -> Outcome {
    let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(20, 0.5, 6).unwrap());
    let run = |gamma: f64, lambda: f64| {
        let cfg = RunConfig::new(obj.clone(), gamma, theta0(20, 6), 1000);
        NormSeries::from_trajectory(&run_sgd_wd(&cfg, &[ETA; 1000], &[lambda; 1000]).unwrap())
    };
    let rec = check_norm_recursion(&run(GAMMA, LAMBDA));
    let mono = check_monotone_growth(&run(GAMMA, 0.0)).unwrap();
    let cum = mono.cumulative_max_rel_err.unwrap_or(f64::INFINITY);
    let pyth = check_pythagorean(&run(0.0, LAMBDA)).unwrap();
    outcome(
        rec.pass && cum <= 1e-9 && pyth.pass,
        format!(
            "recursion residual {:.1e} (maxR {:.2}), cumulative rel err {cum:.1e}, pythagorean rel residual {:.1e}",
            rec.max_abs_residual, rec.max_r, pyth.max_rel_residual
        ),
    )
}

fn equilibrium() -> Outcome {
    let n = 100_000;
    let cfg = RunConfig::new(logistic(8), GAMMA, theta0(20, 8), n);
    let tr = run_sgd_wd(&cfg, &vec![ETA; n], &vec![LAMBDA; n]).unwrap();
    let e = estimate_equilibrium(&NormSeries::from_trajectory(&tr), None).unwrap();
    outcome(
        e.pass,
        format!("D/R {:.3e} vs {:.3e} ({:.1}% off)", e.ratio, e.theory, 100.0 * e.rel_err),
    )
}

fn escape() -> Outcome {
    let r = escape_experiment(&ToyConfig::default(), 100).unwrap();
    outcome(
        r.pass,
        format!(
            "{}/{} escaped within {} iterations (threshold {:.3})",
            r.escaped, r.trials, r.window, r.threshold
        ),
    )
}

fn chi_square() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, (k, beta)) in [(3, 0.125), (10, 0.5), (50, 0.5)].into_iter().enumerate() {
        let r = chi_square_tail_check(k, beta, 100_000, 11 + i as u64).unwrap();
        pass &= r.pass;
        parts.push(format!("k={k}: {:.2e} <= {:.2e}", r.estimate, r.bound));
    }
    outcome(pass, parts.join(", "))
}

fn graph_checker() -> Outcome {
    let cases: [(&str, CompGraph, bool, Option<&str>); 5] = [
        ("chain", fixtures::normalized_chain(), true, None),
        ("resnet", fixtures::resnet_block(), true, None),
        ("resnet-unnormalized", fixtures::resnet_block_unnormalized_shortcut(), false, Some("add")),
        ("gn-bias", fixtures::gn_trainable_bias(), false, Some("n5")),
        ("bias-mixed-sum", fixtures::bias_into_mixed_sum(), false, Some("add")),
    ];
    let mut failures = Vec::new();
    for (i, (name, g, invariant, failing)) in cases.iter().enumerate() {
        let v = is_scale_invariant(g).unwrap();
        let net = GraphNet::new(g, 4, 8, i as u64).unwrap();
        let theta = net.random_theta(i as u64);
        let numeric = numeric_crosscheck(g, &net, &theta, &CROSSCHECK_SCALES).unwrap();
        if v.invariant != *invariant || v.failing_node.as_deref() != *failing || !numeric.pass {
            failures.push(*name);
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} fixtures, all verdicts and numeric cross-checks agree", cases.len())
        } else {
            format!("mismatch on {}", failures.join(", "))
        },
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Duration); 12] = [
        ("root and growth factor", root_growth, Duration::from_secs(1)),
        ("feasibility margin", feasibility_margin, Duration::from_secs(1)),
        ("momentum-free equivalence", momentum_free_equivalence, Duration::from_secs(1)),
        ("momentum equivalence", momentum_equivalence, Duration::from_secs(5)),
        ("multi-phase TEXP", multi_phase_equivalence, Duration::from_secs(10)),
        ("TEXP vs TEXP++ deviation", texp_vs_texppp, Duration::from_secs(1)),
        ("lemma harness", lemma_harness, Duration::from_secs(5)),
        ("norm identities", norm_identities, Duration::from_secs(5)),
        ("equilibrium", equilibrium, Duration::from_secs(60)),
        ("nonconvergence", escape, Duration::from_secs(60)),
        ("chi-square tail", chi_square, Duration::from_secs(5)),
        ("graph checker", graph_checker, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {}  {:.3}s/{}s  {}{}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            o.detail,
            if in_time { "" } else { " (over time budget)" }
        );
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
