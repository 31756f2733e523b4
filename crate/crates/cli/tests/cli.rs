use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn expwd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expwd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Write `json` to a config file inside `dir` and return its path.
fn config(dir: &TempDir, name: &str, json: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_in(dir: &TempDir, cmd: &str, cfg: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.path().join(format!("out-{cmd}"));
    let mut args = vec![cmd, "--config", cfg, "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    (expwd(&args), out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn hash_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const SHORT_VERIFY: &str = r#"{
  "objective": "norm_quadratic", "dim": 8, "seed": 3,
  "schedule": {"kind": "step_decay", "gamma": 0.9, "T": 60,
    "phases": [{"start": 0, "lr": 0.1, "wd": 0.0005}, {"start": 30, "lr": 0.01, "wd": 0.0005}]}
}"#;

#[test]
fn translate_reports_feasibility_margin() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("step_decay.json");
    let (o, out) = run_in(&dir, "translate", cfg.to_str().unwrap(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&out.join("summary.json"));
    let margin = summary["phases"][0]["feasibility_margin"].as_f64().unwrap();
    assert!((margin - 0.019).abs() < 1e-3);
    assert_eq!(summary["corrections"], 2);
    let hash = summary["meta"]["config_hash"].as_str().unwrap();
    assert_eq!(hash_line(&out.join("schedule.csv")), format!("# config_hash: {hash}"));
}

#[test]
fn translate_matches_golden_two_phase_table() {
    let dir = TempDir::new().unwrap();
    let cfg = golden().join("two_phase.json");
    let (o, out) = run_in(&dir, "translate", cfg.to_str().unwrap(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let produced = fs::read_to_string(out.join("schedule.csv")).unwrap();
    let body: Vec<&str> = produced.lines().skip(1).collect();
    let expected = fs::read_to_string(golden().join("two_phase.csv")).unwrap();
    assert_eq!(body, expected.lines().collect::<Vec<_>>());
}

#[test]
fn zero_weight_decay_leaves_schedule_unchanged() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "s.json",
        r#"{"kind": "step_decay", "gamma": 0.9, "T": 20,
            "phases": [{"start": 0, "lr": 0.1, "wd": 0.0}, {"start": 10, "lr": 0.01, "wd": 0.0}]}"#,
    );
    let (o, out) = run_in(&dir, "translate", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("schedule.csv")).unwrap();
    for line in csv.lines().skip(2) {
        let cols: Vec<&str> = line.split(',').collect();
        let t: usize = cols[0].parse().unwrap();
        let eta: f64 = cols[1].parse().unwrap();
        let expected = if t < 10 { 0.1 } else { 0.01 };
        assert!((eta - expected).abs() <= 1e-15 * expected, "t={t}: {eta}");
    }
}

#[test]
fn infeasible_phase_exits_two_and_names_it() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "s.json",
        r#"{"kind": "step_decay", "gamma": 0.9, "T": 20,
            "phases": [{"start": 0, "lr": 0.1, "wd": 0.0005}, {"start": 10, "lr": 0.1, "wd": 0.5}]}"#,
    );
    let (o, _) = run_in(&dir, "translate", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("phase 1"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&expwd(&[])), 1);
    assert_eq!(code(&expwd(&["translate"])), 1);
    let (o, _) = run_in(&dir, "translate", "/nonexistent/config.json", &[]);
    assert_eq!(code(&o), 1);
    let bad = config(&dir, "bad.json", r#"{"trials": 3, "typo": true}"#);
    let (o, _) = run_in(&dir, "lemmas", &bad, &[]);
    assert_eq!(code(&o), 1);
    let bad = config(&dir, "bad2.json", r#"{"kind": "cosine", "gamma": 0.9, "eta0": 0.1, "wd": 0.0005}"#);
    let (o, _) = run_in(&dir, "translate", &bad, &[]);
    assert_eq!(code(&o), 1, "missing T must be a config error");
    assert_eq!(code(&expwd(&["--help"])), 0);
}

#[test]
fn verify_passes_and_perturbation_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "v.json", SHORT_VERIFY);
    let (o, out) = run_in(&dir, "verify", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_json(&out.join("report.json"))["pass"], true);

    let mut v: Value = serde_json::from_str(SHORT_VERIFY).unwrap();
    v["perturb"] = serde_json::json!({"t": 40, "delta": 1e-3});
    let bad = config(&dir, "bad.json", &v.to_string());
    let out_bad = dir.path().join("bad-out");
    let o = expwd(&["verify", "--config", &bad, "--out", out_bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let rep = read_json(&out_bad.join("report.json"));
    assert_eq!(rep["pass"], false);
    assert_eq!(rep["first_failure"], 41);
}

#[test]
fn zero_step_verify_is_vacuous() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::from_str(SHORT_VERIFY).unwrap();
    v["steps"] = 0.into();
    let cfg = config(&dir, "v.json", &v.to_string());
    let (o, out) = run_in(&dir, "verify", &cfg, &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("report.json"))["pass"], true);
}

#[test]
fn runs_are_deterministic_and_seed_changes_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "v.json", SHORT_VERIFY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        assert_eq!(code(&expwd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    }
    for f in ["wd.csv", "exp.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let o = expwd(&["run", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(code(&o), 0);
    assert_ne!(hash_line(&a.join("wd.csv")), hash_line(&c.join("wd.csv")));
    assert_ne!(fs::read(a.join("wd.csv")).unwrap(), fs::read(c.join("wd.csv")).unwrap());
    let header = fs::read_to_string(a.join("wd.csv")).unwrap();
    assert_eq!(
        header.lines().nth(1),
        Some("t,log_norm,dir_cos_ref,loss,grad_norm,update_norm,lr_effective_log")
    );
}

#[test]
fn lemma_modes() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "l.json", r#"{"trials": 10, "seed": 4}"#);
    let (o, out) = run_in(&dir, "lemmas", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = read_json(&out.join("report.json"));
    assert_eq!(rep["reports"].as_array().unwrap().len(), 6);
    assert_eq!(rep["negative_control_flagged"], true);

    let (o, out) = run_in(&dir, "lemmas", &cfg, &["--trials", "0"]);
    assert_eq!(code(&o), 0);
    let rep = read_json(&out.join("report.json"));
    assert!(rep["reports"].as_array().unwrap().iter().all(|r| r["trials"] == 0));

    let only = config(&dir, "n.json", r#"{"trials": 5, "negative_control_only": true}"#);
    let (o, out) = run_in(&dir, "lemmas", &only, &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&out.join("report.json"))["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn graph_check_verdicts() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("resnet_block.json");
    let (o, out) = run_in(&dir, "graph-check", cfg.to_str().unwrap(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = read_json(&out.join("verdict.json"));
    assert_eq!(v["verdict"]["invariant"], true);
    assert_eq!(v["crosscheck"]["pass"], true);

    let cfg = configs().join("gn_bias.json");
    let (o, out) = run_in(&dir, "graph-check", cfg.to_str().unwrap(), &[]);
    assert_eq!(code(&o), 0);
    let v = read_json(&out.join("verdict.json"));
    assert_eq!(v["verdict"]["failing_node"], "bias");

    let cyclic = config(
        &dir,
        "cyc.json",
        r#"{"nodes": [{"id": "x", "kind": "I"}, {"id": "a", "kind": "PLUS"}, {"id": "b", "kind": "PASS"},
                      {"id": "o", "kind": "OUT"}],
            "edges": [["x", "a"], ["b", "a"], ["a", "b"], ["a", "o"]]}"#,
    );
    let (o, _) = run_in(&dir, "graph-check", &cyclic, &[]);
    assert_eq!(code(&o), 1);

    let bias_norm = r#"{"nodes": [{"id": "x", "kind": "I"}, {"id": "b", "kind": "B"}, {"id": "n", "kind": "N"},
                      {"id": "o", "kind": "OUT"}],
            "edges": [["x", "b"], ["b", "n"], ["n", "o"]]"#;
    let plain = config(&dir, "bn.json", &format!("{bias_norm}}}"));
    let (o, _) = run_in(&dir, "graph-check", &plain, &[]);
    assert_eq!(code(&o), 3, "conservative verdict must be reported as a disagreement");
    let simplified = config(&dir, "bn2.json", &format!("{bias_norm}, \"simplify_bias_before_norm\": true}}"));
    let (o, _) = run_in(&dir, "graph-check", &simplified, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn toy_and_dynamics_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("toy.json");
    let (o, out) = run_in(&dir, "toy", cfg.to_str().unwrap(), &["--trials", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = read_json(&out.join("report.json"));
    assert_eq!(rep["escape"]["trials"], 5);
    assert_eq!(rep["chi_square"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.join("regimes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3001);

    let dyn_cfg = config(
        &dir,
        "d.json",
        r#"{"objective": "norm_quadratic", "dim": 6, "noise": 0.5, "seed": 1,
            "gamma": 0.9, "eta": 0.1, "lambda": 0.0, "steps": 500}"#,
    );
    let (o, out) = run_in(&dir, "dynamics", &dyn_cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep = read_json(&out.join("report.json"));
    assert_eq!(rep["monotone"]["pass"], true);
    assert!(rep["equilibrium"].is_null());
}
