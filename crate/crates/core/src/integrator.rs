//! Dormand–Prince 5(4) with PI step-size control and 4th-order dense output.

use serde::{Deserialize, Serialize};

use crate::dynamics::{validate_params, DynamicsParams, PrimalDualSystem, SystemState, ValidationMode};
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Magnitude beyond which a state component counts as divergence.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Default sample count for the log-spaced schedule.
pub const DEFAULT_SAMPLES: usize = 256;

/// A first-order system `y' = F(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Automatic choice when `None`.
    pub initial_step: Option<f64>,
    /// Unbounded when `None`.
    pub max_step: Option<f64>,
    pub max_steps: usize,
    /// Log-spaced with [`DEFAULT_SAMPLES`] points when `None`.
    pub sample_schedule: Option<Vec<f64>>,
    /// Integrate even if the parameters fail validation.
    pub allow_unvalidated: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: None,
            max_step: None,
            max_steps: 500_000_000,
            sample_schedule: None,
            allow_unvalidated: false,
        }
    }
}

impl IntegratorConfig {
    fn check(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(Error::Contract(format!(
                "rel_tol must lie in (0, 1e-2], got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::Contract(format!("abs_tol must be > 0, got {}", self.abs_tol)));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::Contract(format!("initial_step must be > 0, got {h}")));
            }
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::Contract(format!("max_step must be > 0, got {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    Blowup { t: f64 },
    StepLimit { t: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Dense samples of a generic ODE solution.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
    pub termination: Termination,
}

/// Samples of a primal-dual trajectory at the scheduled times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub samples: Vec<SystemState>,
    pub step_stats: StepStats,
    pub termination: Termination,
}

impl TrajectoryLog {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn last(&self) -> Option<&SystemState> {
        self.samples.last()
    }

    /// Sample whose time is closest to `t` on a log scale.
    pub fn nearest(&self, t: f64) -> Option<&SystemState> {
        self.samples.iter().min_by(|a, b| {
            let da = (a.t / t).ln().abs();
            let db = (b.t / t).ln().abs();
            da.total_cmp(&db)
        })
    }
}

/// `count` geometrically spaced times from `t0` to `t_end` inclusive.
pub fn make_log_schedule(t0: f64, t_end: f64, count: usize) -> Result<Vec<f64>> {
    if !(t0 > 0.0 && t_end > t0 && t_end.is_finite()) {
        return Err(Error::Contract(format!(
            "log schedule needs 0 < t0 < t_end, got t0 = {t0}, t_end = {t_end}"
        )));
    }
    if count < 2 {
        return Err(Error::Contract(format!("log schedule needs count >= 2, got {count}")));
    }
    let ratio = (t_end / t0).ln() / (count - 1) as f64;
    let mut out: Vec<f64> = (0..count).map(|k| t0 * (ratio * k as f64).exp()).collect();
    out[0] = t0;
    out[count - 1] = t_end;
    // Snap values that are integers up to rounding, e.g. 10^k from exp.
    for t in out.iter_mut() {
        let r = t.round();
        if r != 0.0 && ((*t - r) / r).abs() < 4.0 * f64::EPSILON {
            *t = r;
        }
    }
    Ok(out)
}

/// Integrate the primal-dual system from `initial` to `t_end`.
pub fn integrate(
    problem: &Problem,
    params: &DynamicsParams,
    initial: &SystemState,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryLog> {
    let t0 = initial.t;
    if !(t0 > 0.0) {
        return Err(Error::Domain { t: t0 });
    }
    if !(t_end > t0) {
        return Err(Error::Contract(format!("t_end = {t_end} must exceed t0 = {t0}")));
    }
    if !config.allow_unvalidated {
        let mode = if params.scaling.is_unit() {
            ValidationMode::Basic
        } else {
            ValidationMode::ScaledBasic
        };
        let report = validate_params(params, mode, t0);
        if !report.pass {
            return Err(Error::Precondition(format!(
                "parameters fail {mode} validation: {}",
                report.violations.join("; ")
            )));
        }
    }
    if initial.n() != problem.n() || initial.m() != problem.m() {
        return Err(Error::dim("initial state", problem.n() + problem.m(), initial.n() + initial.m()));
    }
    let schedule = match &config.sample_schedule {
        Some(s) => s.clone(),
        None => make_log_schedule(t0, t_end, DEFAULT_SAMPLES)?,
    };
    if schedule.first() != Some(&t0) {
        return Err(Error::Contract("sample schedule must start at the initial time".into()));
    }
    if schedule.last().is_some_and(|&t| t > t_end) {
        return Err(Error::Contract("sample schedule extends past t_end".into()));
    }
    let system = PrimalDualSystem::new(problem, params);
    let sol = solve(&system, t0, &initial.to_flat(), t_end, &schedule, config)?;
    let (n, m) = (problem.n(), problem.m());
    let samples = sol
        .times
        .iter()
        .zip(&sol.states)
        .map(|(&t, y)| SystemState::from_flat(t, y, n, m))
        .collect();
    Ok(TrajectoryLog {
        samples,
        step_stats: sol.stats,
        termination: sol.termination,
    })
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// b5 − b4
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step control.
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - PI_BETA * 0.75;

/// Integrate a generic system, returning the states at `schedule`.
///
/// `schedule` must be strictly increasing with `schedule[0] == t0`.
pub fn solve<S: OdeSystem + ?Sized>(
    system: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    schedule: &[f64],
    config: &IntegratorConfig,
) -> Result<OdeSolution> {
    config.check()?;
    let dim = system.dim();
    if y0.len() != dim {
        return Err(Error::dim("initial state", dim, y0.len()));
    }
    if schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("sample schedule must be strictly increasing".into()));
    }
    if schedule.first().is_some_and(|&s| s < t0) || schedule.last().is_some_and(|&s| s > t_end) {
        return Err(Error::Contract("sample times must lie in [t0, t_end]".into()));
    }

    let mut out = OdeSolution {
        times: Vec::with_capacity(schedule.len()),
        states: Vec::with_capacity(schedule.len()),
        stats: StepStats::default(),
        termination: Termination::Completed,
    };
    let mut next = 0;
    while next < schedule.len() && schedule[next] == t0 {
        out.times.push(t0);
        out.states.push(y0.to_vec());
        next += 1;
    }
    if !y0.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_THRESHOLD) {
        out.termination = Termination::Blowup { t: t0 };
        return Ok(out);
    }

    let span = t_end - t0;
    let h_max = config.max_step.unwrap_or(span).min(span);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    if system.eval(t, &y, &mut k1).is_err() {
        out.termination = Termination::Blowup { t };
        return Ok(out);
    }
    out.stats.rhs_evals += 1;

    let mut h = match config.initial_step {
        Some(h) => h.min(h_max),
        None => initial_step(system, t, &y, &k1, h_max, config, &mut out.stats),
    };

    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut cont = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        if out.stats.accepted + out.stats.rejected >= config.max_steps {
            out.termination = Termination::StepLimit { t };
            return Ok(out);
        }
        let last = t + h >= t_end || (t_end - (t + h)) <= 1e-12 * t_end.abs();
        if last {
            h = t_end - t;
        }
        if h <= 8.0 * f64::EPSILON * t.abs().max(1.0) {
            // Step size underflow: the solution is no longer resolvable.
            out.termination = Termination::Blowup { t };
            return Ok(out);
        }

        let stages = (|| -> Result<()> {
            for i in 0..dim {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            system.eval(t + C2 * h, &ytmp, &mut k2)?;
            for i in 0..dim {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            system.eval(t + C3 * h, &ytmp, &mut k3)?;
            for i in 0..dim {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            system.eval(t + C4 * h, &ytmp, &mut k4)?;
            for i in 0..dim {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            system.eval(t + C5 * h, &ytmp, &mut k5)?;
            for i in 0..dim {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_end } else { t + h };
            system.eval(t_new, &ytmp, &mut k6)?;
            for i in 0..dim {
                ynew[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            system.eval(t_new, &ynew, &mut k7)?;
            Ok(())
        })();
        out.stats.rhs_evals += 6;

        let err = match stages {
            Ok(()) => {
                let mut sum = 0.0;
                for i in 0..dim {
                    let e = h
                        * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                            + E7 * k7[i]);
                    let sc = config.abs_tol + config.rel_tol * y[i].abs().max(ynew[i].abs());
                    sum += (e / sc) * (e / sc);
                }
                (sum / dim as f64).sqrt()
            }
            Err(_) => f64::NAN,
        };

        if !err.is_finite() {
            // Trial step left the domain of F; retry with a much smaller step.
            out.stats.rejected += 1;
            h *= 0.1;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(EXPO);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            facold = err.max(1e-4);
            out.stats.accepted += 1;

            for i in 0..dim {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * k7[i] - bspl;
                cont[4][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                        + D7 * k7[i]);
            }
            let t_new = if last { t_end } else { t + h };
            while next < schedule.len() && schedule[next] <= t_new {
                let ts = schedule[next];
                let state = if ts == t_new {
                    ynew.clone()
                } else {
                    let s = (ts - t) / h;
                    let s1 = 1.0 - s;
                    (0..dim)
                        .map(|i| {
                            cont[0][i]
                                + s * (cont[1][i]
                                    + s1 * (cont[2][i] + s * (cont[3][i] + s1 * cont[4][i])))
                        })
                        .collect()
                };
                out.times.push(ts);
                out.states.push(state);
                next += 1;
            }

            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;

            if !y.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_THRESHOLD) {
                out.termination = Termination::Blowup { t };
                return Ok(out);
            }

            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new.min(h_max);
        } else {
            out.stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
    Ok(out)
}

/// Starting step from the local Lipschitz and curvature estimate (Hairer's HINIT).
fn initial_step<S: OdeSystem + ?Sized>(
    system: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    h_max: f64,
    config: &IntegratorConfig,
    stats: &mut StepStats,
) -> f64 {
    let dim = y.len();
    let sc: Vec<f64> = y.iter().map(|v| config.abs_tol + config.rel_tol * v.abs()).collect();
    let rms = |v: &dyn Fn(usize) -> f64| -> f64 {
        ((0..dim).map(|i| (v(i) / sc[i]).powi(2)).sum::<f64>() / dim as f64).sqrt()
    };
    let dnf = rms(&|i| f0[i]);
    let dny = rms(&|i| y[i]);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(h_max);
    let y1: Vec<f64> = (0..dim).map(|i| y[i] + h * f0[i]).collect();
    let mut f1 = vec![0.0; dim];
    if system.eval(t + h, &y1, &mut f1).is_err() {
        return (h * 1e-3).max(1e-12);
    }
    stats.rhs_evals += 1;
    let der2 = rms(&|i| f1[i] - f0[i]) / h;
    let der12 = der2.max(dnf);
    let h1 = if der12 <= 1e-15 {
        (1e-6_f64).max(h * 1e-3)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(h_max)
}
