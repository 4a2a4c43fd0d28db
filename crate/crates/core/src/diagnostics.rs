//! Lyapunov energy, optimality residuals and empirical rate tests along a trajectory.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{stack, DynamicsParams, SystemState};
use crate::error::{Error, Result};
use crate::integrator::{Termination, TrajectoryLog};
use crate::problem::{augmented_lagrangian, bregman_distance, kkt_residual, KktResidual, PrimalDualPoint, Problem};

/// Values at or below this are excluded from log-log fits.
pub const RATE_FLOOR: f64 = 1e-14;

/// One row per logged sample, in CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub t: f64,
    /// f(x(t)) − f(x*)
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub f_gap: f64,
    /// ‖Ax(t) − b‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub feas: f64,
    /// ‖(ẋ, λ̇)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub vel: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub energy: f64,
    /// L_β(x(t), λ*) − L_β(x*, λ(t))
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub lag_gap: f64,
    /// D_f(x*, x(t))
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub bregman: f64,
    /// ‖∇f(x(t)) − ∇f(x*)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub grad_resid: f64,
    /// ‖Aᵀ(λ(t) − λ*)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub dual_resid: f64,
    /// ‖∇f(x(t)) + Aᵀλ(t)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub stat_resid: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub acc_t_df: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub acc_tv2: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub acc_tgap: f64,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "t", "f_gap", "feas", "vel", "energy", "lag_gap", "bregman", "grad_resid", "dual_resid",
    "stat_resid", "acc_tDf", "acc_tv2", "acc_tgap",
];

impl DiagnosticRow {
    pub fn values(&self) -> [f64; 13] {
        [
            self.t,
            self.f_gap,
            self.feas,
            self.vel,
            self.energy,
            self.lag_gap,
            self.bregman,
            self.grad_resid,
            self.dual_resid,
            self.stat_resid,
            self.acc_t_df,
            self.acc_tv2,
            self.acc_tgap,
        ]
    }

    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::FGap => self.f_gap,
            Quantity::FGapAbs => self.f_gap.abs(),
            Quantity::Feas => self.feas,
            Quantity::Vel => self.vel,
            Quantity::Energy => self.energy,
            Quantity::LagGap => self.lag_gap,
            Quantity::Bregman => self.bregman,
            Quantity::GradResid => self.grad_resid,
            Quantity::DualResid => self.dual_resid,
            Quantity::StatResid => self.stat_resid,
            Quantity::AccTDf => self.acc_t_df,
            Quantity::AccTv2 => self.acc_tv2,
            Quantity::AccTgap => self.acc_tgap,
        }
    }
}

/// A named column of [`DiagnosticRow`], plus `|f_gap|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    FGap,
    FGapAbs,
    Feas,
    Vel,
    Energy,
    LagGap,
    Bregman,
    GradResid,
    DualResid,
    StatResid,
    AccTDf,
    AccTv2,
    AccTgap,
}

impl Quantity {
    pub const ALL: [Quantity; 13] = [
        Quantity::FGap,
        Quantity::FGapAbs,
        Quantity::Feas,
        Quantity::Vel,
        Quantity::Energy,
        Quantity::LagGap,
        Quantity::Bregman,
        Quantity::GradResid,
        Quantity::DualResid,
        Quantity::StatResid,
        Quantity::AccTDf,
        Quantity::AccTv2,
        Quantity::AccTgap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::FGap => "f_gap",
            Quantity::FGapAbs => "f_gap_abs",
            Quantity::Feas => "feas",
            Quantity::Vel => "vel",
            Quantity::Energy => "energy",
            Quantity::LagGap => "lag_gap",
            Quantity::Bregman => "bregman",
            Quantity::GradResid => "grad_resid",
            Quantity::DualResid => "dual_resid",
            Quantity::StatResid => "stat_resid",
            Quantity::AccTDf => "acc_tDf",
            Quantity::AccTv2 => "acc_tv2",
            Quantity::AccTgap => "acc_tgap",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if matches!(s, "f_gap-abs" | "abs_f_gap" | "|f_gap|") {
            return Ok(Quantity::FGapAbs);
        }
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| {
                Error::Estimation(format!(
                    "unknown quantity `{s}`; expected one of {}",
                    Quantity::ALL.map(|q| q.name()).join(", ")
                ))
            })
    }
}

impl Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lyapunov energy
/// `θ²t²δ(t)[L_β(x, λ*) − L_β(x*, λ)] + ½‖z − z* + θtż‖² + (ξ/2)‖z − z*‖²`.
pub fn energy(
    state: &SystemState,
    params: &DynamicsParams,
    z_star: &PrimalDualPoint,
    problem: &Problem,
) -> Result<f64> {
    let gap = lagrangian_gap(problem, &state.x, &state.lambda, z_star, params.beta)?;
    let t = state.t;
    let theta = params.theta;
    let dz = state.z() - z_star.stacked();
    let v = &dz + state.z_dot() * (theta * t);
    let delta = params.scaling.value(t);
    Ok(theta * theta * t * t * delta * gap + 0.5 * v.norm_squared() + 0.5 * params.xi() * dz.norm_squared())
}

fn lagrangian_gap(
    problem: &Problem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    z_star: &PrimalDualPoint,
    beta: f64,
) -> Result<f64> {
    Ok(augmented_lagrangian(problem, x, &z_star.lambda, beta)?
        - augmented_lagrangian(problem, &z_star.x, lambda, beta)?)
}

/// Evaluate every diagnostic column along `log`.
///
/// Logs that did not complete are rejected unless `allow_partial` is set.
pub fn diagnostics_series(
    log: &TrajectoryLog,
    problem: &Problem,
    params: &DynamicsParams,
    z_star: &PrimalDualPoint,
    allow_partial: bool,
) -> Result<Vec<DiagnosticRow>> {
    if !log.completed() && !allow_partial {
        return Err(Error::Precondition(format!(
            "diagnostics need a completed log, got {:?}",
            log.termination
        )));
    }
    let f = problem.objective();
    let at = problem.a().transpose();
    let grad_star = f.gradient(&z_star.x);

    let mut rows: Vec<DiagnosticRow> = Vec::with_capacity(log.samples.len());
    let mut prev: Option<(f64, [f64; 3])> = None;
    let mut acc = [0.0; 3];
    for s in &log.samples {
        let grad = f.gradient(&s.x);
        let vel = stack(&s.x_dot, &s.lambda_dot).norm();
        let lag_gap = lagrangian_gap(problem, &s.x, &s.lambda, z_star, params.beta)?;
        let bregman = bregman_distance(problem, &z_star.x, &s.x)?;
        let integrands = [
            s.t * bregman.max(0.0),
            s.t * vel * vel,
            s.t * lag_gap.max(0.0),
        ];
        if let Some((t_prev, g_prev)) = prev {
            let dt = s.t - t_prev;
            for k in 0..3 {
                acc[k] += 0.5 * dt * (integrands[k] + g_prev[k]);
            }
        }
        prev = Some((s.t, integrands));
        rows.push(DiagnosticRow {
            t: s.t,
            f_gap: f.difference(&s.x, &z_star.x),
            feas: problem.constraint_residual(&s.x).norm(),
            vel,
            energy: energy(s, params, z_star, problem)?,
            lag_gap,
            bregman,
            grad_resid: (&grad - &grad_star).norm(),
            dual_resid: (&at * (&s.lambda - &z_star.lambda)).norm(),
            stat_resid: (&grad + &at * &s.lambda).norm(),
            acc_t_df: acc[0],
            acc_tv2: acc[1],
            acc_tgap: acc[2],
        });
    }
    Ok(rows)
}

/// Fitted decay exponent and, for o-rate checks, dyadic tail suprema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub quantity: Quantity,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub t_min: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub t_max: f64,
    /// OLS slope of log q against log t.
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub slope: f64,
    /// Half-width of the 95% confidence interval of `slope`.
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub slope_ci: f64,
    /// Samples used in the fit.
    pub samples: usize,
    /// Samples in the window excluded for being ≤ [`RATE_FLOOR`].
    pub excluded: usize,
    /// Exponent `p` of the `t^p·q(t)` o-rate test, if one was run.
    pub power: Option<f64>,
    pub tail_sups: Vec<f64>,
    pub o_rate_pass: bool,
}

struct Fit {
    slope: f64,
    ci: f64,
    used: usize,
    excluded: usize,
}

fn fit_loglog(series: &[DiagnosticRow], q: Quantity, t_min: f64, t_max: f64) -> Result<Fit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for row in series.iter().filter(|r| r.t >= t_min && r.t <= t_max) {
        let v = row.get(q);
        if v > RATE_FLOOR && v.is_finite() {
            xs.push(row.t.ln());
            ys.push(v.ln());
        } else {
            excluded += 1;
        }
    }
    let n = xs.len();
    if n < 10 {
        return Err(Error::Estimation(format!(
            "{q}: only {n} positive samples in [{t_min}, {t_max}] ({excluded} excluded), need at least 10"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Estimation(format!("{q}: degenerate time window")));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (ssr / (nf - 2.0) / sxx).sqrt();
    let quantile = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    Ok(Fit {
        slope,
        ci: quantile * se,
        used: n,
        excluded,
    })
}

/// Least-squares log-log slope of `quantity` over `[t_min, t_max]`.
pub fn estimate_rate(
    series: &[DiagnosticRow],
    quantity: Quantity,
    t_min: f64,
    t_max: f64,
) -> Result<RateEstimate> {
    let fit = fit_loglog(series, quantity, t_min, t_max)?;
    Ok(RateEstimate {
        quantity,
        t_min,
        t_max,
        slope: fit.slope,
        slope_ci: fit.ci,
        samples: fit.used,
        excluded: fit.excluded,
        power: None,
        tail_sups: Vec::new(),
        o_rate_pass: false,
    })
}

pub const DEFAULT_O_WINDOWS: usize = 4;
pub const DEFAULT_DECAY_FACTOR: f64 = 0.5;

/// Decide whether `t^power · q(t) → 0` from the suprema over the last
/// `windows` dyadic intervals ending at the final sample.
///
/// Passes iff the last supremum is at most `decay_factor` times the largest
/// one and the suprema do not increase over the final two windows.
pub fn check_o_rate(
    series: &[DiagnosticRow],
    quantity: Quantity,
    power: f64,
    windows: usize,
    decay_factor: f64,
) -> Result<RateEstimate> {
    if windows < 2 {
        return Err(Error::Estimation(format!("need at least 2 windows, got {windows}")));
    }
    if !(decay_factor > 0.0 && decay_factor < 1.0) {
        return Err(Error::Estimation(format!(
            "decay factor must lie in (0, 1), got {decay_factor}"
        )));
    }
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::Estimation("empty series".into())),
    };
    let start = last / 2f64.powi(windows as i32);
    if first > start * (1.0 + 1e-12) {
        return Err(Error::Estimation(format!(
            "{quantity}: series starts at {first} but {windows} dyadic windows ending at {last} need data from {start}"
        )));
    }
    let mut sups = Vec::with_capacity(windows);
    for k in 0..windows {
        let lo = last / 2f64.powi((windows - k) as i32);
        let hi = last / 2f64.powi((windows - k - 1) as i32);
        let (lo_s, hi_s) = (lo * (1.0 - 1e-12), hi * (1.0 + 1e-12));
        let sup = series
            .iter()
            .filter(|r| r.t >= lo_s && r.t <= hi_s)
            .map(|r| r.t.powf(power) * r.get(quantity))
            .fold(f64::NEG_INFINITY, f64::max);
        if sup == f64::NEG_INFINITY {
            return Err(Error::Estimation(format!(
                "{quantity}: no samples in dyadic window [{lo}, {hi}]"
            )));
        }
        sups.push(sup);
    }
    let s_max = sups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_last = sups[windows - 1];
    let pass = s_last.is_finite()
        && s_last <= decay_factor * s_max
        && s_last <= sups[windows - 2];
    let (slope, ci, used, excluded) = match fit_loglog(series, quantity, start, last) {
        Ok(f) => (f.slope, f.ci, f.used, f.excluded),
        Err(_) => (f64::NAN, f64::NAN, 0, 0),
    };
    Ok(RateEstimate {
        quantity,
        t_min: start,
        t_max: last,
        slope,
        slope_ci: ci,
        samples: used,
        excluded,
        power: Some(power),
        tail_sups: sups,
        o_rate_pass: pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub pass: bool,
    pub reason: Option<String>,
    pub final_kkt: Option<KktResidual>,
    /// ‖z(T) − z(T/2)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub displacement_last: f64,
    /// ‖z(T/2) − z(T/4)‖
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub displacement_prev: f64,
    pub limit: Option<PrimalDualPoint>,
}

/// KKT residual at `T` plus a Cauchy tail test on `z(T/4), z(T/2), z(T)`.
pub fn trajectory_convergence_check(
    log: &TrajectoryLog,
    problem: &Problem,
    tol_kkt: f64,
    tol_cauchy: f64,
) -> Result<ConvergenceReport> {
    let fail = |reason: String| ConvergenceReport {
        pass: false,
        reason: Some(reason),
        final_kkt: None,
        displacement_last: f64::NAN,
        displacement_prev: f64::NAN,
        limit: None,
    };
    match log.termination {
        Termination::Completed => {}
        Termination::Blowup { t } => return Ok(fail(format!("trajectory blew up at t = {t}"))),
        Termination::StepLimit { t } => return Ok(fail(format!("step limit reached at t = {t}"))),
    }
    let end = match log.last() {
        Some(s) => s,
        None => return Ok(fail("empty log".into())),
    };
    let big_t = end.t;
    let (half, quarter) = match (log.nearest(big_t / 2.0), log.nearest(big_t / 4.0)) {
        (Some(h), Some(q)) => (h, q),
        _ => return Ok(fail("log too short".into())),
    };
    let limit = PrimalDualPoint::new(end.x.clone(), end.lambda.clone());
    let kkt = kkt_residual(problem, &limit)?;
    let d_last = (end.z() - half.z()).norm();
    let d_prev = (half.z() - quarter.z()).norm();

    let mut reasons = Vec::new();
    if kkt.feasibility > tol_kkt {
        reasons.push(format!("feasibility {:.3e} > {tol_kkt:.1e}", kkt.feasibility));
    }
    if kkt.stationarity > tol_kkt {
        reasons.push(format!("stationarity {:.3e} > {tol_kkt:.1e}", kkt.stationarity));
    }
    if !(d_last <= tol_cauchy) {
        reasons.push(format!("‖z(T) − z(T/2)‖ = {d_last:.3e} > {tol_cauchy:.1e}"));
    }
    if !(d_prev >= d_last) {
        reasons.push(format!(
            "displacement increased: ‖z(T/2) − z(T/4)‖ = {d_prev:.3e} < {d_last:.3e}"
        ));
    }
    Ok(ConvergenceReport {
        pass: reasons.is_empty(),
        reason: (!reasons.is_empty()).then(|| reasons.join("; ")),
        final_kkt: Some(kkt),
        displacement_last: d_last,
        displacement_prev: d_prev,
        limit: Some(limit),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    /// Allowed increase per sample interval.
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub budget: f64,
    /// Largest observed `E(t_{k+1}) − E(t_k)`.
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub max_increase: f64,
    #[serde(with = "crate::serde_ext::nan_as_null")]
    pub worst_t: f64,
}

/// Energy must not increase by more than `1e3·rel_tol·(1 + E(t0))` per interval.
pub fn energy_monotonicity(series: &[DiagnosticRow], rel_tol: f64) -> MonotonicityReport {
    let e0 = series.first().map_or(0.0, |r| r.energy);
    let budget = 1e3 * rel_tol * (1.0 + e0);
    let mut max_increase = f64::NEG_INFINITY;
    let mut worst_t = f64::NAN;
    for w in series.windows(2) {
        let inc = w[1].energy - w[0].energy;
        if inc > max_increase || inc.is_nan() {
            max_increase = inc;
            worst_t = w[1].t;
        }
    }
    MonotonicityReport {
        pass: series.len() < 2 || max_increase <= budget,
        budget,
        max_increase,
        worst_t,
    }
}

/// `max t·vel` over the whole series divided by its max over `[t0, 10·t0]`.
pub fn velocity_bound_ratio(series: &[DiagnosticRow]) -> f64 {
    let t0 = match series.first() {
        Some(r) => r.t,
        None => return f64::NAN,
    };
    let scaled = |r: &DiagnosticRow| r.t * r.vel;
    let early = series
        .iter()
        .filter(|r| r.t <= 10.0 * t0)
        .map(scaled)
        .fold(0.0, f64::max);
    let overall = series.iter().map(scaled).fold(0.0, f64::max);
    if early == 0.0 {
        if overall == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        overall / early
    }
}

/// Relative change `|q(T) − q(T/2)| / |q(T)|` of an accumulator column.
pub fn tail_change(series: &[DiagnosticRow], quantity: Quantity) -> f64 {
    let end = match series.last() {
        Some(r) => r,
        None => return f64::NAN,
    };
    let target = end.t / 2.0;
    let half = series
        .iter()
        .min_by(|a, b| (a.t / target).ln().abs().total_cmp(&(b.t / target).ln().abs()))
        .expect("nonempty");
    let (qe, qh) = (end.get(quantity), half.get(quantity));
    if qe == 0.0 {
        if qh == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        ((qe - qh) / qe).abs()
    }
}
