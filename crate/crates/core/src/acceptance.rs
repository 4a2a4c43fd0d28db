//! The acceptance suite: criteria A1 to A11, grouped into named suites.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dynamics::{equilibrium_state, DynamicsParams, ScalingFunction, ValidationMode};
use crate::error::{Error, Result};
use crate::integrator::{integrate, make_log_schedule, IntegratorConfig};
use crate::linalg::null_space;
use crate::problem::{catalog, kkt_residual, solve_kkt_oracle, ObjectiveFunction, LinearConstraint, PrimalDualPoint, Problem, CATALOG_NAMES};
use crate::runner::{execute, summarize, Check, RunSummary, ORACLE_TOL};

pub const CRITERIA: [&str; 11] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10", "A11"];

/// Horizon for the rate, convergence and integral criteria.
pub const HORIZON: f64 = 1e4;
/// Horizon for equilibrium preservation and energy monotonicity.
pub const SHORT_HORIZON: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    All,
    Basic,
    Strict,
    Scaled,
    Critical,
}

impl Suite {
    pub fn criteria(self) -> &'static [&'static str] {
        match self {
            Suite::All => &CRITERIA,
            Suite::Basic => &["A1", "A2", "A3", "A5", "A6", "A9", "A11"],
            Suite::Strict => &["A4", "A7", "A10"],
            Suite::Scaled => &["A8"],
            Suite::Critical => &["A3", "A5", "A6"],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::All => "all",
            Suite::Basic => "basic",
            Suite::Strict => "strict",
            Suite::Scaled => "scaled",
            Suite::Critical => "critical",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "basic" => Ok(Suite::Basic),
            "strict" => Ok(Suite::Strict),
            "scaled" => Ok(Suite::Scaled),
            "critical" => Ok(Suite::Critical),
            _ => Err(Error::Config {
                field: "suite".into(),
                line: None,
                message: format!("unknown suite `{s}`; expected all, basic, strict, scaled or critical"),
            }),
        }
    }
}

/// One measured quantity against its threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub label: String,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub measured: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub threshold: f64,
    pub relation: String,
    pub pass: bool,
}

impl Measurement {
    fn at_most(label: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Measurement {
            label: label.into(),
            measured,
            threshold,
            relation: "<=".into(),
            pass: measured <= threshold,
        }
    }

    fn at_least(label: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Measurement {
            label: label.into(),
            measured,
            threshold,
            relation: ">=".into(),
            pass: measured >= threshold,
        }
    }

    fn from_check(prefix: &str, c: &Check) -> Self {
        Measurement {
            label: format!("{prefix} {}", c.id),
            measured: c.measured,
            threshold: c.threshold,
            relation: c.relation.clone(),
            pass: c.pass,
        }
    }

    fn failure(label: impl Into<String>, message: &str) -> Self {
        Measurement {
            label: format!("{}: {message}", label.into()),
            measured: f64::NAN,
            threshold: f64::NAN,
            relation: "error".into(),
            pass: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub title: String,
    pub pass: bool,
    pub checks: Vec<Measurement>,
}

impl CriterionResult {
    fn new(id: &str, checks: Vec<Measurement>) -> Self {
        CriterionResult {
            id: id.into(),
            title: title(id).into(),
            pass: !checks.is_empty() && checks.iter().all(|c| c.pass),
            checks,
        }
    }

    /// One line: identifier, verdict, title and the worst check.
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let worst = self
            .checks
            .iter()
            .find(|c| !c.pass)
            .or_else(|| self.checks.last())
            .map(|c| format!("{} = {:.3e} ({} {:.3e})", c.label, c.measured, c.relation, c.threshold))
            .unwrap_or_default();
        format!(
            "{:<4} {verdict}  {} [{} checks] {worst}",
            self.id,
            self.title,
            self.checks.len()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub suite: Suite,
    pub pass: bool,
    pub criteria: Vec<CriterionResult>,
    pub wall_seconds: f64,
}

impl AcceptanceReport {
    pub fn criterion(&self, id: &str) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

pub fn title(id: &str) -> &'static str {
    match id {
        "A1" => "equilibrium preservation",
        "A2" => "energy monotonicity",
        "A3" => "O(1/t^2) rates at alpha = 3",
        "A4" => "o(1/t^2) rates for alpha > 3",
        "A5" => "trajectory convergence at alpha = 3",
        "A6" => "stationarity and dual-image convergence",
        "A7" => "weighted integrals settle",
        "A8" => "time-scaled rates",
        "A9" => "dual representative independence",
        "A10" => "unconstrained reduction",
        "A11" => "integrator correctness",
        _ => "unknown criterion",
    }
}

fn config(problem: &str, alpha: f64, theta: f64, beta: f64, t_end: f64, mode: ValidationMode) -> RunConfig {
    let mut c = RunConfig::new(problem, DynamicsParams::new(alpha, theta, beta), t_end);
    c.mode = mode;
    c
}

fn scaled_config(problem: &str, r: f64) -> RunConfig {
    let params = DynamicsParams::new(5.0, 0.3, 1.0).with_scaling(ScalingFunction::Power { r });
    let mut c = RunConfig::new(problem, params, HORIZON);
    c.mode = ValidationMode::ScaledStrict;
    c.integrator.max_steps = A8_MAX_STEPS;
    c
}

const A3_PROBLEMS: [&str; 2] = ["quadratic-easy", "quartic"];
const A4_PROBLEMS: [&str; 3] = ["quadratic-easy", "quartic", "expsum"];
const A5_PROBLEMS: [&str; 4] = ["quadratic-easy", "quartic", "expsum", "rank-deficient"];
const A8_PROBLEMS: [&str; 1] = ["quadratic-easy"];
/// Step budget for each time-scaled run.
pub const A8_MAX_STEPS: usize = 100_000_000;
const A8_POWERS: [f64; 2] = [0.5, 1.0];
const A10_PROBLEMS: [&str; 2] = ["unconstrained-quad", "unconstrained-quartic"];
/// Tolerances of the α = 5 runs.
pub const A4_REL_TOL: f64 = 1e-11;
pub const A4_ABS_TOL: f64 = 1e-13;
/// Tolerances of the unconstrained runs.
pub const A10_REL_TOL: f64 = 1e-12;
pub const A10_ABS_TOL: f64 = 1e-14;
const A2_PARAMS: [(f64, f64, f64); 3] = [(3.0, 0.5, 0.0), (3.0, 0.5, 2.0), (5.0, 0.3, 1.0)];

fn critical(p: &str) -> RunConfig {
    config(p, 3.0, 0.5, 1.0, HORIZON, ValidationMode::Basic)
}

fn strict(p: &str) -> RunConfig {
    config(p, 5.0, 0.3, 1.0, HORIZON, ValidationMode::Strict)
}

/// Run configurations a criterion evaluates. Criteria sharing a
/// configuration share its run.
pub fn plan(id: &str) -> Vec<RunConfig> {
    match id {
        "A2" => CATALOG_NAMES
            .iter()
            .flat_map(|p| {
                A2_PARAMS
                    .iter()
                    .map(move |&(a, th, b)| config(p, a, th, b, SHORT_HORIZON, ValidationMode::Basic))
            })
            .collect(),
        "A3" => A3_PROBLEMS.iter().map(|p| critical(p)).collect(),
        "A4" | "A7" => A4_PROBLEMS
            .iter()
            .map(|p| {
                let mut c = strict(p);
                c.integrator.rel_tol = A4_REL_TOL;
                c.integrator.abs_tol = A4_ABS_TOL;
                c
            })
            .collect(),
        "A5" | "A6" => A5_PROBLEMS.iter().map(|p| critical(p)).collect(),
        "A8" => A8_PROBLEMS
            .iter()
            .flat_map(|p| A8_POWERS.iter().map(move |&r| scaled_config(p, r)))
            .collect(),
        "A10" => A10_PROBLEMS
            .iter()
            .flat_map(|p| [strict(p), critical(p)])
            .map(|mut c| {
                c.integrator.rel_tol = A10_REL_TOL;
                c.integrator.abs_tol = A10_ABS_TOL;
                c
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn key(c: &RunConfig) -> String {
    c.to_json()
}

fn run_label(c: &RunConfig) -> String {
    let p = &c.params;
    let scaling = match p.scaling {
        ScalingFunction::Unit => String::new(),
        ScalingFunction::Power { r } => format!(" r={r}"),
        ScalingFunction::Exponential { c } => format!(" c={c}"),
    };
    format!("{} a={} th={} b={}{scaling}", c.problem.name(), p.alpha, p.theta, p.beta)
}

type Runs = BTreeMap<String, std::result::Result<RunSummary, String>>;

fn run_all(configs: Vec<RunConfig>) -> Runs {
    let mut unique: BTreeMap<String, RunConfig> = BTreeMap::new();
    for c in configs {
        unique.entry(key(&c)).or_insert(c);
    }
    unique
        .into_par_iter()
        .map(|(k, c)| {
            let start = Instant::now();
            let out = execute(&c)
                .map(|exp| summarize(&exp, start.elapsed().as_secs_f64()))
                .map_err(|e| e.to_string());
            (k, out)
        })
        .collect()
}

/// Measurements from the given check-id prefixes of each planned run.
fn from_runs(id: &str, runs: &Runs, prefixes: &[&str]) -> Vec<Measurement> {
    let mut out = Vec::new();
    for c in plan(id) {
        let label = run_label(&c);
        match runs.get(&key(&c)) {
            Some(Ok(s)) => {
                if let Some(err) = &s.error {
                    out.push(Measurement::failure(&label, err));
                    continue;
                }
                let before = out.len();
                let applicable = |k: &&Check| k.asserted && prefixes.iter().any(|p| k.id.starts_with(p));
                for check in s.checks.iter().filter(applicable) {
                    out.push(Measurement::from_check(&label, check));
                }
                if out.len() == before {
                    out.push(Measurement::failure(&label, "no applicable checks produced"));
                }
            }
            Some(Err(e)) => out.push(Measurement::failure(&label, e)),
            None => out.push(Measurement::failure(&label, "run missing")),
        }
    }
    out
}

fn evaluate(id: &str, runs: &Runs) -> CriterionResult {
    let checks = match id {
        "A1" => a1(),
        "A2" => from_runs(id, runs, &["A2."]),
        "A3" => from_runs(id, runs, &["A3.slope.feas", "A3.slope.f_gap_abs"]),
        "A4" => from_runs(id, runs, &["A4.o_rate."]),
        "A5" => from_runs(id, runs, &["A5."]),
        "A6" => from_runs(id, runs, &["A6."]),
        "A7" => from_runs(id, runs, &["A7."]),
        "A8" => from_runs(id, runs, &["A8."]),
        "A9" => a9(),
        "A10" => a10(runs),
        "A11" => a11(),
        other => vec![Measurement::failure(other, "unknown criterion")],
    };
    CriterionResult::new(id, checks)
}

fn a1() -> Vec<Measurement> {
    A3_PROBLEMS
        .iter()
        .map(|&name| {
            let label = format!("{name} max |z - z*| over [1, 1e3]");
            let measure = || -> Result<f64> {
                let problem = catalog(name)?;
                let z = solve_kkt_oracle(&problem, ORACLE_TOL)?;
                let init = equilibrium_state(&problem, &z, 1.0)?;
                let cfg = IntegratorConfig {
                    sample_schedule: Some(make_log_schedule(1.0, SHORT_HORIZON, 400)?),
                    ..IntegratorConfig::default()
                };
                let params = DynamicsParams::new(3.0, 0.5, 1.0);
                let log = integrate(&problem, &params, &init, SHORT_HORIZON, &cfg)?;
                if !log.completed() {
                    return Err(Error::Integration(format!("{:?}", log.termination)));
                }
                let zs = z.stacked();
                Ok(log.samples.iter().map(|s| (s.z() - &zs).norm()).fold(0.0, f64::max))
            };
            match measure() {
                Ok(v) => Measurement::at_most(label, v, 1e-6),
                Err(e) => Measurement::failure(label, &e.to_string()),
            }
        })
        .collect()
}

/// Two KKT points of `rank-deficient` whose multipliers differ by a
/// null-space direction of Aᵀ, with the primal part of the second solved
/// independently from its own stationarity equation.
fn a9() -> Vec<Measurement> {
    let build = || -> Result<Vec<Measurement>> {
        let problem = catalog("rank-deficient")?;
        let p1 = solve_kkt_oracle(&problem, ORACLE_TOL)?;
        let kernel = null_space(&problem.a().transpose());
        if kernel.ncols() == 0 {
            return Err(Error::Acceptance("Aᵀ has a trivial null space".into()));
        }
        let shift = kernel.column(0).into_owned() * 1.7;
        let lambda2 = &p1.lambda + &shift;
        let q = problem
            .objective()
            .quadratic_form()
            .ok_or_else(|| Error::Acceptance("expected a quadratic objective".into()))?;
        let rhs = -(&q.c + problem.a().transpose() * &lambda2);
        let x2 = q
            .q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Acceptance("Q is not positive definite".into()))?
            .solve(&rhs);
        let p2 = PrimalDualPoint::new(x2, lambda2);
        let f = problem.objective();
        let at = problem.a().transpose();
        Ok(vec![
            Measurement::at_most("kkt residual of (x1, l1)", kkt_residual(&problem, &p1)?.max(), 1e-8),
            Measurement::at_most("kkt residual of (x2, l2)", kkt_residual(&problem, &p2)?.max(), 1e-8),
            Measurement {
                label: "|l1 - l2| (distinct multipliers)".into(),
                measured: (&p1.lambda - &p2.lambda).norm(),
                threshold: 1.0,
                relation: ">=".into(),
                pass: (&p1.lambda - &p2.lambda).norm() >= 1.0,
            },
            Measurement::at_most("|A^T l1 - A^T l2|", (&at * &p1.lambda - &at * &p2.lambda).norm(), 1e-8),
            Measurement::at_most(
                "|grad f(x1) - grad f(x2)|",
                (f.gradient(&p1.x) - f.gradient(&p2.x)).norm(),
                1e-8,
            ),
        ])
    };
    build().unwrap_or_else(|e| vec![Measurement::failure("rank-deficient", &e.to_string())])
}

fn a10(runs: &Runs) -> Vec<Measurement> {
    let mut out = Vec::new();
    for c in plan("A10") {
        let label = run_label(&c);
        let wanted = if c.params.alpha > 3.0 { "A10.o_rate.f_gap_abs" } else { "A10.slope.f_gap_abs" };
        match runs.get(&key(&c)) {
            Some(Ok(s)) => match s.check(wanted) {
                Some(check) if s.error.is_none() => out.push(Measurement::from_check(&label, check)),
                _ => out.push(Measurement::failure(&label, s.error.as_deref().unwrap_or("check missing"))),
            },
            Some(Err(e)) => out.push(Measurement::failure(&label, e)),
            None => out.push(Measurement::failure(&label, "run missing")),
        }
    }
    out
}

/// `ẍ = −(3/t)ẋ` with `x(1) = 1`, `ẋ(1) = 1` has `x(t) = 1.5 − 1/(2t²)`.
pub fn damped_analytic_error(rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let problem = Problem::new("damped", ObjectiveFunction::zero(1), LinearConstraint::none(1))?;
    let params = DynamicsParams::new(3.0, 0.5, 0.0);
    let mut init = crate::dynamics::SystemState::at_rest(1.0, DVector::from_element(1, 1.0), DVector::zeros(1));
    init.x_dot[0] = 1.0;
    let cfg = IntegratorConfig {
        rel_tol,
        abs_tol,
        sample_schedule: Some(vec![1.0, 2.0]),
        ..IntegratorConfig::default()
    };
    let log = integrate(&problem, &params, &init, 2.0, &cfg)?;
    let last = log.last().ok_or_else(|| Error::Integration("empty log".into()))?;
    Ok((last.x[0] - 1.375).abs())
}

/// Successive halvings of rel_tol = abs_tol for the damped test.
pub const HALVING_TOLS: [f64; 4] = [1e-6, 5e-7, 2.5e-7, 1.25e-7];

fn a11() -> Vec<Measurement> {
    let mut out = Vec::new();
    let defaults = IntegratorConfig::default();
    match damped_analytic_error(defaults.rel_tol, defaults.abs_tol) {
        Ok(e) => out.push(Measurement::at_most("|x(2) - 1.375|", e, 1e-6)),
        Err(e) => out.push(Measurement::failure("damped analytic", &e.to_string())),
    }
    let errs: Result<Vec<f64>> = HALVING_TOLS.iter().map(|&t| damped_analytic_error(t, t)).collect();
    match errs {
        Ok(errs) => {
            for (w, tols) in errs.windows(2).zip(HALVING_TOLS.windows(2)) {
                out.push(Measurement::at_least(
                    format!("err(tol={:e}) / err(tol={:e})", tols[0], tols[1]),
                    w[0] / w[1],
                    2.0,
                ));
            }
        }
        Err(e) => out.push(Measurement::failure("tolerance halving", &e.to_string())),
    }
    out
}

/// Run the criteria of `suite`. Shared configurations run once, in parallel.
pub fn verify(suite: Suite) -> AcceptanceReport {
    verify_with_runs(suite, suite.criteria()).0
}

/// The report together with the summaries of every run it evaluated, in
/// a fixed order.
pub fn verify_with_runs(suite: Suite, ids: &[&str]) -> (AcceptanceReport, Vec<RunSummary>) {
    let start = Instant::now();
    let runs = run_all(ids.iter().flat_map(|id| plan(id)).collect());
    let criteria: Vec<CriterionResult> = ids.par_iter().map(|id| evaluate(id, &runs)).collect();
    let report = AcceptanceReport {
        suite,
        pass: criteria.iter().all(|c| c.pass),
        criteria,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    (report, runs.into_values().filter_map(|r| r.ok()).collect())
}
