//! Single runs and parameter sweeps: oracle → integrate → diagnostics → rates → files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{config_error, parse_config, RunConfig};
use crate::diagnostics::{
    check_o_rate, diagnostics_series, energy_monotonicity, estimate_rate, tail_change,
    trajectory_convergence_check, velocity_bound_ratio, ConvergenceReport, DiagnosticRow, MonotonicityReport, Quantity,
    RateEstimate,
};
use crate::dynamics::{
    default_initial_state, validate_params, ScalingFunction, SystemState, ValidationReport,
};
use crate::error::{Error, Result};
use crate::integrator::{integrate, make_log_schedule, StepStats, Termination, TrajectoryLog};
use crate::problem::{solve_kkt_oracle, PrimalDualPoint, Problem};
use crate::report;

/// KKT tolerance for the reference solution.
pub const ORACLE_TOL: f64 = 1e-10;

/// Environment variable naming the default output directory.
/// Problems on which `t·vel → 0` is asserted.
pub const VELOCITY_O_RATE_PROBLEMS: [&str; 2] = ["quadratic-easy", "quartic"];
pub const OUTPUT_DIR_ENV: &str = "NAPD_OUTPUT_DIR";

/// Everything produced by one integration.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub problem: Problem,
    pub validation: ValidationReport,
    pub z_star: PrimalDualPoint,
    pub log: TrajectoryLog,
    pub rows: Vec<DiagnosticRow>,
}

/// A pass/fail flag tied to an acceptance criterion identifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Criterion identifier followed by a qualifier, e.g. `A3.slope.feas`.
    pub id: String,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub measured: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub threshold: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub pass: bool,
    /// Whether the run's validated parameters make this claim applicable.
    pub asserted: bool,
}

impl Check {
    pub fn at_most(id: impl Into<String>, measured: f64, threshold: f64, asserted: bool) -> Self {
        Check {
            id: id.into(),
            measured,
            threshold,
            relation: "<=".into(),
            pass: measured <= threshold,
            asserted,
        }
    }

    pub fn flag(id: impl Into<String>, pass: bool, asserted: bool) -> Self {
        Check {
            id: id.into(),
            measured: if pass { 1.0 } else { 0.0 },
            threshold: 1.0,
            relation: ">=".into(),
            pass,
            asserted,
        }
    }

    /// Criterion identifier without the qualifier.
    pub fn criterion(&self) -> &str {
        self.id.split('.').next().unwrap_or(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub validation: Option<ValidationReport>,
    pub oracle: Option<PrimalDualPoint>,
    pub termination: Option<Termination>,
    pub step_stats: Option<StepStats>,
    pub final_row: Option<DiagnosticRow>,
    pub rates: Vec<RateEstimate>,
    pub o_rates: Vec<RateEstimate>,
    pub convergence: Option<ConvergenceReport>,
    pub energy: Option<MonotonicityReport>,
    /// max t·vel over all samples divided by its max over the first decade.
    pub velocity_bound_ratio: Option<f64>,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub exit_code: i32,
    pub wall_seconds: f64,
    /// Location of the CSV series written for this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_file: Option<String>,
}

impl RunSummary {
    fn failed(config: RunConfig, err: &Error, wall_seconds: f64) -> Self {
        RunSummary {
            config,
            validation: None,
            oracle: None,
            termination: None,
            step_stats: None,
            final_row: None,
            rates: Vec::new(),
            o_rates: Vec::new(),
            convergence: None,
            energy: None,
            velocity_bound_ratio: None,
            checks: Vec::new(),
            error: Some(err.to_string()),
            exit_code: err.exit_code(),
            wall_seconds,
            csv_file: None,
        }
    }

    /// All asserted checks passed.
    pub fn asserted_pass(&self) -> bool {
        self.checks.iter().filter(|c| c.asserted).all(|c| c.pass)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Log-spaced samples merged with the dyadic points `t_end / 2^k` used by
/// the o-rate and Cauchy tests.
pub fn run_schedule(t0: f64, t_end: f64, samples: usize, dyadic: usize) -> Result<Vec<f64>> {
    let mut s = make_log_schedule(t0, t_end, samples)?;
    for k in 1..=dyadic.max(2) {
        let t = t_end / 2f64.powi(k as i32);
        if t > t0 {
            s.push(t);
        }
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    Ok(s)
}

fn initial_state(config: &RunConfig, problem: &Problem, z_star: &PrimalDualPoint) -> Result<SystemState> {
    let mut state = default_initial_state(z_star, config.t0);
    let Some(init) = &config.initial else {
        return Ok(state);
    };
    let take = |v: &Option<Vec<f64>>, len: usize, field: &str, dst: &mut DVector<f64>| -> Result<()> {
        if let Some(v) = v {
            if v.len() != len {
                return Err(config_error(field, format!("expected {len} entries, got {}", v.len())));
            }
            *dst = DVector::from_column_slice(v);
        }
        Ok(())
    };
    take(&init.x0, problem.n(), "initial.x0", &mut state.x)?;
    take(&init.lambda0, problem.m(), "initial.lambda0", &mut state.lambda)?;
    take(&init.x_dot0, problem.n(), "initial.x_dot0", &mut state.x_dot)?;
    take(&init.lambda_dot0, problem.m(), "initial.lambda_dot0", &mut state.lambda_dot)?;
    Ok(state)
}

/// Solve, integrate and evaluate diagnostics. Writes no files.
pub fn execute(config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let problem = config.problem.build()?;
    let validation = validate_params(&config.params, config.mode, config.t0);
    if !validation.pass && !config.unvalidated {
        return Err(config_error(
            "params",
            format!(
                "parameters fail {} validation: {} (set \"unvalidated\": true to run anyway)",
                config.mode,
                validation.violations.join("; ")
            ),
        ));
    }
    let z_star = solve_kkt_oracle(&problem, ORACLE_TOL)?;
    let initial = initial_state(config, &problem, &z_star)?;
    let mut icfg = config.integrator_config();
    icfg.sample_schedule = Some(run_schedule(
        config.t0,
        config.t_end,
        config.samples,
        config.analysis.o_windows,
    )?);
    // Validation against the declared mode already happened above.
    icfg.allow_unvalidated = true;
    let log = integrate(&problem, &config.params, &initial, config.t_end, &icfg)?;
    let rows = diagnostics_series(&log, &problem, &config.params, &z_star, true)?;
    Ok(Experiment {
        config: config.clone(),
        problem,
        validation,
        z_star,
        log,
        rows,
    })
}

fn is_unconstrained(problem: &Problem) -> bool {
    problem.a().iter().all(|&v| v == 0.0)
}

/// Rate estimates and criterion-tagged checks for a finished experiment.
pub fn summarize(exp: &Experiment, wall_seconds: f64) -> RunSummary {
    let cfg = &exp.config;
    let an = &cfg.analysis;
    let rows = &exp.rows;
    let completed = exp.log.completed();
    let valid = exp.validation.pass;
    let strict = valid && cfg.mode.is_strict();
    let mut checks = Vec::new();
    let mut rates = Vec::new();
    let mut o_rates = Vec::new();

    let energy = completed.then(|| energy_monotonicity(rows, cfg.integrator.rel_tol));
    if let Some(e) = &energy {
        checks.push(Check::at_most("A2.energy_increase", e.max_increase, e.budget, valid));
    }

    let power_r = match cfg.params.scaling {
        ScalingFunction::Unit => Some(0.0),
        ScalingFunction::Power { r } => Some(r),
        ScalingFunction::Exponential { .. } => None,
    };
    let [w_lo, w_hi] = an.rate_window;
    let unconstrained = is_unconstrained(&exp.problem);
    let window_fits = completed && w_lo >= cfg.t0 && w_hi <= cfg.t_end;
    for q in [Quantity::Feas, Quantity::FGapAbs, Quantity::Vel] {
        if !window_fits {
            break;
        }
        if unconstrained && q == Quantity::Feas {
            continue;
        }
        let Ok(est) = estimate_rate(rows, q, w_lo, w_hi) else {
            continue;
        };
        match power_r {
            Some(_) if cfg.params.scaling.is_unit() && q != Quantity::Vel => {
                let id = if unconstrained { "A10" } else { "A3" };
                checks.push(Check::at_most(
                    format!("{id}.slope.{q}"),
                    est.slope,
                    an.slope_threshold,
                    valid,
                ));
            }
            Some(r) if !cfg.params.scaling.is_unit() && q == Quantity::Feas => {
                checks.push(Check::at_most(
                    format!("A8.slope.{q}"),
                    est.slope,
                    -(2.0 + r) + 0.2,
                    valid && cfg.mode.is_strict(),
                ));
            }
            _ => {}
        }
        rates.push(est);
    }

    if completed {
        let r = power_r.unwrap_or(0.0);
        let plan: Vec<(Quantity, f64, String)> = if cfg.params.scaling.is_unit() {
            let id = if unconstrained { "A10" } else { "A4" };
            vec![
                (Quantity::Feas, 2.0, format!("{id}.o_rate.feas")),
                (Quantity::FGapAbs, 2.0, format!("{id}.o_rate.f_gap_abs")),
                (Quantity::Vel, 1.0, format!("{id}.o_rate.t_vel")),
            ]
        } else {
            vec![(Quantity::Feas, 2.0 + r, "A8.o_rate.feas".to_string())]
        };
        for (q, p, id) in plan {
            if unconstrained && q == Quantity::Feas {
                continue;
            }
            if let Ok(est) = check_o_rate(rows, q, p, an.o_windows, an.decay_factor) {
                let vel_ok = q != Quantity::Vel || VELOCITY_O_RATE_PROBLEMS.contains(&exp.problem.name());
                let asserted = strict && power_r.is_some() && vel_ok;
                checks.push(Check::flag(id, est.o_rate_pass, asserted));
                o_rates.push(est);
            }
        }

        if cfg.mode.is_strict() {
            for q in [Quantity::AccTDf, Quantity::AccTv2, Quantity::AccTgap] {
                checks.push(Check::at_most(
                    format!("A7.tail.{q}"),
                    tail_change(rows, q),
                    an.tail_change,
                    strict,
                ));
            }
        }
    }

    let convergence = trajectory_convergence_check(&exp.log, &exp.problem, an.tol_kkt, an.tol_cauchy).ok();
    if let Some(c) = &convergence {
        checks.push(Check::flag("A5.trajectory_convergence", c.pass, valid));
    }
    if let (true, Some(last)) = (completed, rows.last()) {
        checks.push(Check::at_most("A6.stat_resid", last.stat_resid, an.tol_kkt, valid));
        checks.push(Check::at_most("A6.dual_resid", last.dual_resid, an.tol_kkt, valid));
    }

    let exit_code = if completed { 0 } else { 4 };
    RunSummary {
        config: cfg.clone(),
        validation: Some(exp.validation.clone()),
        oracle: Some(exp.z_star.clone()),
        termination: Some(exp.log.termination),
        step_stats: Some(exp.log.step_stats),
        final_row: rows.last().copied(),
        rates,
        o_rates,
        convergence,
        energy,
        velocity_bound_ratio: (completed && cfg.t_end >= 10.0 * cfg.t0).then(|| velocity_bound_ratio(rows)),
        checks,
        error: match exp.log.termination {
            Termination::Completed => None,
            other => Some(format!("integration terminated early: {other:?}")),
        },
        exit_code,
        wall_seconds,
        csv_file: None,
    }
}

fn resolve(path: &str, out_dir: Option<&Path>) -> PathBuf {
    let p = Path::new(path);
    match out_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// Output directory from the environment, if set.
pub fn default_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Write the CSV, JSON and SVG outputs named in the config. Relative paths
/// resolve against `out_dir`. With no outputs configured and an `out_dir`
/// given, writes `series.csv`, `summary.json` and `series.svg` there.
pub fn write_outputs(exp: &Experiment, summary: &mut RunSummary, out_dir: Option<&Path>) -> Result<()> {
    let mut outputs = exp.config.outputs.clone();
    if outputs.is_empty() && out_dir.is_some() {
        outputs.csv_path = Some("series.csv".into());
        outputs.json_path = Some("summary.json".into());
        outputs.svg_paths = vec!["series.svg".into()];
    }
    let mkparent = |p: &Path| -> Result<()> {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(())
    };
    if let Some(csv) = &outputs.csv_path {
        let path = resolve(csv, out_dir);
        mkparent(&path)?;
        std::fs::write(&path, report::csv_string(&exp.rows))?;
        summary.csv_file = Some(path.display().to_string());
    }
    for svg in &outputs.svg_paths {
        let path = resolve(svg, out_dir);
        mkparent(&path)?;
        let title = format!(
            "{} (α = {}, θ = {}, β = {})",
            exp.problem.name(),
            exp.config.params.alpha,
            exp.config.params.theta,
            exp.config.params.beta
        );
        std::fs::write(&path, report::svg_for_rows(&title, &exp.rows, &report::DEFAULT_PLOT_QUANTITIES))?;
    }
    if let Some(json) = &outputs.json_path {
        let path = resolve(json, out_dir);
        mkparent(&path)?;
        std::fs::write(&path, serde_json::to_string_pretty(&*summary)?)?;
    }
    Ok(())
}

/// Execute one config end to end and write its outputs.
///
/// Config and oracle errors are returned as `Err`; early termination of the
/// integration is reported in the summary with a nonzero exit code.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    let exp = execute(config)?;
    let mut summary = summarize(&exp, start.elapsed().as_secs_f64());
    write_outputs(&exp, &mut summary, out_dir)?;
    Ok(summary)
}

/// Ordered grid axes: dotted field path → values.
pub type Grid = Vec<(String, Vec<Value>)>;

/// Parse `{"params.alpha": [3, 5], ...}`, keeping axis order.
pub fn parse_grid(text: &str) -> Result<Grid> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| config_error("grid", e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(config_error("grid", "expected an object of path → list".into()));
    };
    map.into_iter()
        .map(|(k, v)| match v {
            Value::Array(vals) if !vals.is_empty() => Ok((k, vals)),
            _ => Err(config_error(&format!("grid.{k}"), "expected a nonempty list".into())),
        })
        .collect()
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let (leaf, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = root;
    for p in parents {
        node = node
            .get_mut(*p)
            .filter(|n| n.is_object())
            .ok_or_else(|| config_error(path, format!("`{p}` does not resolve to an object")))?;
    }
    match node {
        Value::Object(map) => {
            map.insert((*leaf).to_string(), value);
            Ok(())
        }
        _ => Err(config_error(path, "parent is not an object".into())),
    }
}

fn suffixed(path: &str, index: usize) -> String {
    let p = Path::new(path);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match p.extension() {
        Some(ext) => format!("{stem}-{index:03}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{index:03}"),
    };
    p.with_file_name(name).display().to_string()
}

/// Cartesian product of the grid applied to `base`, in row-major grid order.
pub fn expand_grid(base: &RunConfig, grid: &Grid) -> Result<Vec<RunConfig>> {
    let base_value = serde_json::to_value(base)?;
    let total: usize = grid.iter().map(|(_, v)| v.len()).product();
    let mut configs = Vec::with_capacity(total);
    for index in 0..total {
        let mut value = base_value.clone();
        let mut rem = index;
        for (path, vals) in grid.iter().rev() {
            let pick = rem % vals.len();
            rem /= vals.len();
            set_path(&mut value, path, vals[pick].clone())?;
        }
        let mut cfg = parse_config(&value.to_string())?;
        if total > 1 {
            let o = &mut cfg.outputs;
            o.csv_path = o.csv_path.as_deref().map(|p| suffixed(p, index));
            o.json_path = o.json_path.as_deref().map(|p| suffixed(p, index));
            o.svg_paths = o.svg_paths.iter().map(|p| suffixed(p, index)).collect();
        }
        configs.push(cfg);
    }
    Ok(configs)
}

/// Run every grid point with at most `parallelism` concurrent runs.
///
/// Results are ordered by grid index. Failures of individual runs are
/// recorded in their summaries and do not abort the sweep.
pub fn sweep(
    base: &RunConfig,
    grid: &Grid,
    parallelism: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<RunSummary>> {
    let configs = expand_grid(base, grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let start = Instant::now();
                run(cfg, out_dir).unwrap_or_else(|e| {
                    RunSummary::failed(cfg.clone(), &e, start.elapsed().as_secs_f64())
                })
            })
            .collect()
    }))
}
