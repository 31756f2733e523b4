use std::sync::Arc;

use expwd::dynamics::{
    check_monotone_growth, check_norm_recursion, check_pythagorean, estimate_equilibrium,
    sufficient_decrease_audit_series, DynamicsError, NormSeries,
};
use expwd::rng;
use expwd::scaleinv::{BnStats, NormLogistic, NormQuadratic, Objective};
use expwd::trainer::{run_sgd_wd, RunConfig};
use proptest::prelude::*;

fn series(obj: Arc<dyn Objective>, gamma: f64, eta: f64, lambda: f64, steps: usize, seed: u64) -> NormSeries {
    let theta = rng::normal_vec(&mut rng::stream(seed, 0), obj.dim());
    let cfg = RunConfig::new(obj, gamma, theta, steps);
    NormSeries::from_trajectory(&run_sgd_wd(&cfg, &vec![eta; steps], &vec![lambda; steps]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recursion_holds_for_any_hyperparameters(
        seed in 0u64..1000,
        gamma in 0.0f64..0.95,
        eta in 0.01f64..0.5,
        lambda in 0.0f64..1e-2,
    ) {
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(5, 0.5, seed).unwrap());
        let s = series(obj, gamma, eta, lambda, 150, seed);
        let r = check_norm_recursion(&s);
        prop_assert!(r.pass, "{:e} vs {:e}", r.max_abs_residual, r.max_r);
    }

    #[test]
    fn norm_never_shrinks_without_decay(seed in 0u64..1000, gamma in 0.0f64..0.95) {
        let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(5, 0.5, seed).unwrap());
        let s = series(obj, gamma, 0.1, 0.0, 150, seed);
        let m = check_monotone_growth(&s).unwrap();
        prop_assert!(m.pass, "{m:?}");
        prop_assert!(s.r.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-14)));
    }
}

#[test]
fn pythagorean_identity_on_momentum_free_runs() {
    let obj: Arc<dyn Objective> = Arc::new(NormLogistic::sampled(8, 32, BnStats::PerBatch, 3).unwrap());
    let s = series(obj, 0.0, 0.2, 0.0, 300, 3);
    assert!(check_pythagorean(&s).unwrap().pass);
}

#[test]
fn inapplicable_checks_are_refused() {
    let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(4, 0.0, 1).unwrap());
    let s = series(obj, 0.9, 0.1, 1e-3, 20, 1);
    assert!(matches!(check_monotone_growth(&s), Err(DynamicsError::NotApplicable(_))));
    assert!(matches!(check_pythagorean(&s), Err(DynamicsError::NotApplicable(_))));
}

#[test]
fn equilibrium_is_reached_on_a_short_noisy_run() {
    let obj: Arc<dyn Objective> = Arc::new(NormQuadratic::new(10, 1.0, 8).unwrap());
    let s = series(obj, 0.9, 0.1, 0.01, 20_000, 8);
    let e = estimate_equilibrium(&s, None).unwrap();
    assert!(e.pass, "{e:?}");
}

#[test]
fn decrease_audit_flags_contradiction() {
    let n = 2000;
    let loss: Vec<f64> = (0..=n).map(|t| -0.1 * t as f64).collect();
    let grad_sq = vec![1.0; n + 1];
    let eta = vec![0.1; n];
    let flat = vec![0.0; n + 1];
    let audit = sufficient_decrease_audit_series(&loss, &grad_sq, &flat, &eta, 0.5).unwrap();
    assert!(audit.collapse_predicted && audit.bounded_below && !audit.consistent);
    let shrinking: Vec<f64> = (0..=n).map(|t| -0.05 * t as f64).collect();
    let audit = sufficient_decrease_audit_series(&loss, &grad_sq, &shrinking, &eta, 0.5).unwrap();
    assert!(audit.consistent);
    assert!((audit.log_norm_slope + 0.05).abs() < 1e-12);
}
