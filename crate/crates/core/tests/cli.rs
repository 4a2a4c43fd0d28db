use std::path::Path;
use std::process::{Command, Output};

use napd::config::{parse_config, RunConfig};
use napd::diagnostics::CSV_COLUMNS;
use napd::dynamics::DynamicsParams;
use napd::runner::{parse_grid, run, sweep, RunSummary};
use tempfile::TempDir;

fn napd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_napd"))
        .args(args)
        .current_dir(dir)
        .env_remove("NAPD_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{
  "problem": { "catalog": "quadratic-easy" },
  "params": { "alpha": 3, "theta": 0.5, "beta": 1 },
  "t_end": 20,
  "samples": 64,
  "analysis": { "rate_window": [2, 20] },
  "outputs": { "csv_path": "run.csv", "json_path": "run.json", "svg_paths": ["run.svg"] }
}"#;

#[test]
fn run_writes_outputs_and_echoes_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let out = napd(&["run", &cfg, "--out-dir", "out"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    let csv = std::fs::read_to_string(out_dir.join("run.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    // Header, 64 log-spaced samples and the dyadic points 10, 5, 2.5, 1.25.
    assert_eq!(csv.lines().count(), 1 + 64 + 4);
    let svg = std::fs::read_to_string(out_dir.join("run.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    let original = parse_config(SMALL).unwrap();
    assert_eq!(summary.config, original);
    assert_eq!(parse_config(&summary.config.to_json()).unwrap(), original);
    assert!(summary.checks.iter().all(|c| c.id.starts_with('A')));

    let report = napd(&["report", "out/run.json", "--svg", "plots"], dir.path());
    assert_eq!(report.status.code(), Some(0), "{}", String::from_utf8_lossy(&report.stderr));
    assert!(dir.path().join("plots/run.svg").exists());
    assert!(dir.path().join("plots/run-residuals.svg").exists());
}

#[test]
fn output_dir_comes_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_napd"))
        .args(["run", &cfg])
        .current_dir(dir.path())
        .env("NAPD_OUTPUT_DIR", dir.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("env-out/run.csv").exists());
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    for d in ["a", "b"] {
        assert_eq!(napd(&["run", &cfg, "--out-dir", d], dir.path()).status.code(), Some(0));
    }
    let a = std::fs::read(dir.path().join("a/run.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/run.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_alpha_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"problem": {"catalog": "quartic"}, "params": {"theta": 0.5, "beta": 1}, "t_end": 10}"#,
    );
    let out = napd(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.alpha"));
}

#[test]
fn syntax_errors_report_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", "{\n  \"problem\": {\"catalog\": \"quartic\"},\n  \"params\": ,\n}");
    let out = napd(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_problem_and_suite_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"problem": {"catalog": "rosenbrock"}, "params": {"alpha": 3, "theta": 0.5, "beta": 1}, "t_end": 10}"#,
    );
    assert_eq!(napd(&["run", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(napd(&["verify", "everything"], dir.path()).status.code(), Some(2));
}

#[test]
fn step_limit_exits_with_integration_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"problem": {"catalog": "quartic"}, "params": {"alpha": 3, "theta": 0.5, "beta": 1},
            "t_end": 1000, "integrator": {"max_steps": 100}}"#,
    );
    let out = napd(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let summary: RunSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.error.is_some());
}

#[test]
fn invalid_parameters_need_the_override() {
    let dir = TempDir::new().unwrap();
    let body = |extra: &str| {
        format!(r#"{{"problem": {{"catalog": "quartic"}}, "params": {{"alpha": 2, "theta": 0.5, "beta": 1}}, "t_end": 20{extra}}}"#)
    };
    let strict = write(dir.path(), "a.json", &body(""));
    assert_eq!(napd(&["run", &strict], dir.path()).status.code(), Some(2));
    let loose = write(dir.path(), "b.json", &body(r#", "unvalidated": true"#));
    let out = napd(&["run", &loose], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: RunSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!summary.validation.unwrap().pass);
    assert!(summary.checks.iter().all(|c| !c.asserted));
}

#[test]
fn unconstrained_quadratic_reaches_little_o_rate() {
    let mut cfg = RunConfig::new("unconstrained-quad", DynamicsParams::new(5.0, 0.3, 1.0), 1e4);
    cfg.mode = napd::dynamics::ValidationMode::Strict;
    cfg.integrator.rel_tol = 1e-12;
    cfg.integrator.abs_tol = 1e-14;
    let summary = run(&cfg, None).unwrap();
    let check = summary.check("A10.o_rate.f_gap_abs").unwrap();
    assert!(check.asserted && check.pass, "{check:?}");
}

fn base() -> RunConfig {
    let mut cfg = RunConfig::new("quartic", DynamicsParams::new(3.0, 0.5, 1.0), 30.0);
    cfg.samples = 40;
    cfg.analysis.rate_window = [2.0, 30.0];
    cfg
}

fn strip_time(mut s: RunSummary) -> RunSummary {
    s.wall_seconds = 0.0;
    s
}

#[test]
fn sweep_matches_sequential_runs() {
    let grid = parse_grid(r#"{"params.alpha": [3, 3.5, 5], "params.theta": [0.5, 0.4, 0.3]}"#).unwrap();
    let results = sweep(&base(), &grid, 3, None).unwrap();
    assert_eq!(results.len(), 9);
    let mut k = 0;
    for alpha in [3.0, 3.5, 5.0] {
        for theta in [0.5, 0.4, 0.3] {
            let mut cfg = base();
            cfg.params.alpha = alpha;
            cfg.params.theta = theta;
            let r = &results[k];
            assert_eq!(r.config, cfg);
            match run(&cfg, None) {
                Ok(seq) => assert_eq!(strip_time(seq), strip_time(r.clone())),
                Err(e) => assert_eq!(r.error.as_deref(), Some(e.to_string().as_str())),
            }
            k += 1;
        }
    }
    // θ = 0.3 < 1/(α−1) = 0.5 at α = 3 is recorded as a per-run failure.
    assert_eq!(results[2].exit_code, 2);
    assert!(results[0].error.is_none());
}

#[test]
fn single_point_sweep_equals_run() {
    let grid = parse_grid(r#"{"params.beta": [2.0]}"#).unwrap();
    let results = sweep(&base(), &grid, 1, None).unwrap();
    let mut cfg = base();
    cfg.params.beta = 2.0;
    assert_eq!(strip_time(results[0].clone()), strip_time(run(&cfg, None).unwrap()));
}

#[test]
fn sweep_cli_orders_by_grid_index() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let out = napd(
        &["sweep", &cfg, "--grid", r#"{"params.beta": [0, 1, 2]}"#, "--parallelism", "2", "--out-dir", "s"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summaries: Vec<RunSummary> = serde_json::from_slice(&out.stdout).unwrap();
    let betas: Vec<f64> = summaries.iter().map(|s| s.config.params.beta).collect();
    assert_eq!(betas, vec![0.0, 1.0, 2.0]);
    for i in 0..3 {
        assert!(dir.path().join(format!("s/run-{i:03}.csv")).exists());
    }
}
