//! JSON run configuration.
//!
//! ```json
//! {
//!   "problem": { "catalog": "quadratic-easy" },
//!   "params": { "alpha": 3, "theta": 0.5, "beta": 1, "scaling": { "kind": "unit" } },
//!   "mode": "basic",
//!   "t0": 1,
//!   "t_end": 10000,
//!   "samples": 2000,
//!   "integrator": { "rel_tol": 1e-8, "abs_tol": 1e-10, "max_steps": 500000000 },
//!   "outputs": { "csv_path": "run.csv", "json_path": "run.json", "svg_paths": ["run.svg"] }
//! }
//! ```
//!
//! Inline quadratic problems replace the catalog entry with
//! `{ "quadratic": { "q": [[..]], "c": [..], "a": [[..]], "b": [..] } }`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DEFAULT_DECAY_FACTOR, DEFAULT_O_WINDOWS};
use crate::dynamics::{DynamicsParams, ValidationMode};
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::problem::{catalog, LinearConstraint, ObjectiveFunction, Problem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    Catalog(String),
    Quadratic(QuadraticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    #[serde(default = "default_quadratic_name")]
    pub name: String,
    /// Row-major.
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

fn default_quadratic_name() -> String {
    "inline-quadratic".to_string()
}

fn dense(rows: &[Vec<f64>], cols: usize, field: &str) -> Result<DMatrix<f64>> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(config_error(
            field,
            format!("row {i} has {} entries, expected {cols}", r.len()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Catalog(name) => catalog(name),
            ProblemSpec::Quadratic(spec) => {
                let n = spec.c.len();
                let q = dense(&spec.q, n, "problem.quadratic.q")?;
                if q.nrows() != n {
                    return Err(config_error(
                        "problem.quadratic.q",
                        format!("expected {n} rows, got {}", q.nrows()),
                    ));
                }
                let a = dense(&spec.a, n, "problem.quadratic.a")?;
                let f = ObjectiveFunction::quadratic(&spec.name, q, DVector::from_vec(spec.c.clone()))
                    .map_err(|e| config_error("problem.quadratic.q", e.to_string()))?;
                let con = LinearConstraint::new(a, DVector::from_vec(spec.b.clone()))
                    .map_err(|e| config_error("problem.quadratic.b", e.to_string()))?;
                Problem::new(&spec.name, f, con)
            }
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ProblemSpec::Catalog(name) => name,
            ProblemSpec::Quadratic(spec) => &spec.name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}
fn default_max_steps() -> usize {
    IntegratorConfig::default().max_steps
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        IntegratorSpec {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            max_steps: default_max_steps(),
            initial_step: None,
            max_step: None,
        }
    }
}

/// Initial condition overrides; missing parts use the default start.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_dot0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_dot0: Option<Vec<f64>>,
}

/// Windows and thresholds used for the summary flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_rate_window")]
    pub rate_window: [f64; 2],
    #[serde(default = "default_slope_threshold")]
    pub slope_threshold: f64,
    #[serde(default = "default_o_windows")]
    pub o_windows: usize,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_tol_kkt")]
    pub tol_kkt: f64,
    #[serde(default = "default_tol_cauchy")]
    pub tol_cauchy: f64,
    #[serde(default = "default_tail_change")]
    pub tail_change: f64,
}

fn default_rate_window() -> [f64; 2] {
    [50.0, 5000.0]
}
fn default_slope_threshold() -> f64 {
    -1.8
}
fn default_o_windows() -> usize {
    DEFAULT_O_WINDOWS
}
fn default_decay_factor() -> f64 {
    DEFAULT_DECAY_FACTOR
}
fn default_tol_kkt() -> f64 {
    1e-3
}
fn default_tol_cauchy() -> f64 {
    1e-2
}
fn default_tail_change() -> f64 {
    0.05
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            rate_window: default_rate_window(),
            slope_threshold: default_slope_threshold(),
            o_windows: default_o_windows(),
            decay_factor: default_decay_factor(),
            tol_kkt: default_tol_kkt(),
            tol_cauchy: default_tol_cauchy(),
            tail_change: default_tail_change(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub svg_paths: Vec<String>,
}

impl OutputSpec {
    pub fn is_empty(&self) -> bool {
        self.csv_path.is_none() && self.json_path.is_none() && self.svg_paths.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub params: DynamicsParams,
    #[serde(default = "default_mode")]
    pub mode: ValidationMode,
    /// Integrate even when `params` fail `mode`.
    #[serde(default)]
    pub unvalidated: bool,
    #[serde(default = "default_t0")]
    pub t0: f64,
    pub t_end: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default, skip_serializing_if = "OutputSpec::is_empty")]
    pub outputs: OutputSpec,
}

fn default_mode() -> ValidationMode {
    ValidationMode::Basic
}
fn default_t0() -> f64 {
    1.0
}
fn default_samples() -> usize {
    2000
}

impl RunConfig {
    /// Minimal config with defaults everywhere else.
    pub fn new(problem: &str, params: DynamicsParams, t_end: f64) -> Self {
        RunConfig {
            problem: ProblemSpec::Catalog(problem.to_string()),
            params,
            mode: if params.scaling.is_unit() {
                ValidationMode::Basic
            } else {
                ValidationMode::ScaledBasic
            },
            unvalidated: false,
            t0: default_t0(),
            t_end,
            samples: default_samples(),
            integrator: IntegratorSpec::default(),
            initial: None,
            analysis: AnalysisSpec::default(),
            outputs: OutputSpec::default(),
        }
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            rel_tol: self.integrator.rel_tol,
            abs_tol: self.integrator.abs_tol,
            initial_step: self.integrator.initial_step,
            max_step: self.integrator.max_step,
            max_steps: self.integrator.max_steps,
            sample_schedule: None,
            allow_unvalidated: self.unvalidated,
        }
    }

    /// Semantic checks that the JSON schema alone cannot express.
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, field: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(config_error(field, format!("must be finite, got {v}")))
            }
        };
        finite(self.params.alpha, "params.alpha")?;
        finite(self.params.theta, "params.theta")?;
        finite(self.params.beta, "params.beta")?;
        if !(self.t0 > 0.0) {
            return Err(config_error("t0", format!("must be > 0, got {}", self.t0)));
        }
        if !(self.t_end > self.t0) || !self.t_end.is_finite() {
            return Err(config_error(
                "t_end",
                format!("must be finite and exceed t0 = {}, got {}", self.t0, self.t_end),
            ));
        }
        if self.samples < 2 {
            return Err(config_error("samples", format!("must be >= 2, got {}", self.samples)));
        }
        let tol = self.integrator.rel_tol;
        if !(tol > 0.0 && tol <= 1e-2) {
            return Err(config_error("integrator.rel_tol", format!("must lie in (0, 1e-2], got {tol}")));
        }
        if !(self.integrator.abs_tol > 0.0) {
            return Err(config_error(
                "integrator.abs_tol",
                format!("must be > 0, got {}", self.integrator.abs_tol),
            ));
        }
        let [lo, hi] = self.analysis.rate_window;
        if !(lo > 0.0 && hi > lo) {
            return Err(config_error("analysis.rate_window", format!("invalid window [{lo}, {hi}]")));
        }
        if self.analysis.o_windows < 2 {
            return Err(config_error("analysis.o_windows", "must be >= 2".to_string()));
        }
        let d = self.analysis.decay_factor;
        if !(d > 0.0 && d < 1.0) {
            return Err(config_error("analysis.decay_factor", format!("must lie in (0, 1), got {d}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub(crate) fn config_error(field: &str, message: String) -> Error {
    Error::Config {
        field: field.to_string(),
        line: None,
        message,
    }
}

/// Parse and validate a run config. Errors name the offending field path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let line = (inner.line() > 0).then_some(inner.line());
        let message = inner.to_string();
        let field = field_path(&path, &message);
        Error::Config {
            field,
            line,
            message,
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// Join the deserializer path with the field named in a missing/unknown
/// field message, e.g. `params` + "missing field `alpha`" → `params.alpha`.
fn field_path(path: &str, message: &str) -> String {
    let named = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|prefix| message.strip_prefix(prefix))
        .and_then(|rest| rest.split('`').next());
    let base = if path == "." { "" } else { path };
    match named {
        Some(name) if !base.ends_with(name) => {
            if base.is_empty() {
                name.to_string()
            } else {
                format!("{base}.{name}")
            }
        }
        _ if base.is_empty() => "<root>".to_string(),
        _ => base.to_string(),
    }
}
