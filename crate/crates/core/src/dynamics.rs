//! Right-hand side of the (time-scaled) Nesterov accelerated primal-dual system
//!
//! ```text
//! ẍ + (α/t)ẋ + δ(t)[∇f(x) + Aᵀ(λ + θtλ̇) + βAᵀ(Ax − b)] = 0
//! λ̈ + (α/t)λ̇ − δ(t)[A(x + θtẋ) − b]               = 0
//! ```
//!
//! in first-order form with state ordering `(x, λ, ẋ, λ̇)`. With the unit
//! scaling `δ ≡ 1` this is the unscaled system.

use std::cell::RefCell;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::OdeSystem;
use crate::problem::{kkt_residual, PrimalDualPoint, Problem};

/// Time-scaling function δ(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalingFunction {
    /// δ ≡ 1.
    Unit,
    /// δ(t) = t^r.
    Power { r: f64 },
    /// δ(t) = exp(ct). Violates the bounded-ratio condition for large t.
    Exponential { c: f64 },
}

impl Default for ScalingFunction {
    fn default() -> Self {
        ScalingFunction::Unit
    }
}

impl ScalingFunction {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScalingFunction::Unit => 1.0,
            ScalingFunction::Power { r } => t.powf(r),
            ScalingFunction::Exponential { c } => (c * t).exp(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            ScalingFunction::Unit => 0.0,
            ScalingFunction::Power { r } => r * t.powf(r - 1.0),
            ScalingFunction::Exponential { c } => c * (c * t).exp(),
        }
    }

    /// ρ(t) = t·δ̇(t)/δ(t).
    pub fn log_ratio(&self, t: f64) -> f64 {
        match *self {
            ScalingFunction::Unit => 0.0,
            ScalingFunction::Power { r } => r,
            ScalingFunction::Exponential { c } => c * t,
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, ScalingFunction::Unit)
    }
}

/// Damping α, extrapolation θ, penalty β and the time scaling δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub alpha: f64,
    pub theta: f64,
    pub beta: f64,
    #[serde(default)]
    pub scaling: ScalingFunction,
}

impl DynamicsParams {
    pub fn new(alpha: f64, theta: f64, beta: f64) -> Self {
        DynamicsParams {
            alpha,
            theta,
            beta,
            scaling: ScalingFunction::Unit,
        }
    }

    pub fn with_scaling(mut self, scaling: ScalingFunction) -> Self {
        self.scaling = scaling;
        self
    }

    /// ξ = θα − θ − 1.
    pub fn xi(&self) -> f64 {
        self.theta * self.alpha - self.theta - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    Basic,
    Strict,
    ScaledBasic,
    ScaledStrict,
}

impl ValidationMode {
    pub fn is_scaled(self) -> bool {
        matches!(self, ValidationMode::ScaledBasic | ValidationMode::ScaledStrict)
    }

    pub fn is_strict(self) -> bool {
        matches!(self, ValidationMode::Strict | ValidationMode::ScaledStrict)
    }
}

impl fmt::Display for ValidationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationMode::Basic => "basic",
            ValidationMode::Strict => "strict",
            ValidationMode::ScaledBasic => "scaled-basic",
            ValidationMode::ScaledStrict => "scaled-strict",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    pub pass: bool,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

/// Check `params` against the parameter conditions of `mode`.
///
/// Failures are collected in the report, never returned as errors.
pub fn validate_params(params: &DynamicsParams, mode: ValidationMode, t0: f64) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let DynamicsParams {
        alpha,
        theta,
        beta,
        scaling,
    } = *params;

    if !(t0 > 0.0) {
        violations.push(format!("t0 = {t0} must be > 0"));
    }
    if [alpha, theta, beta].iter().any(|v| !v.is_finite()) {
        violations.push("alpha, theta and beta must be finite".to_string());
    }

    let strict = mode.is_strict();
    if strict {
        if !(alpha > 3.0) {
            violations.push(format!("alpha = {alpha} must be > 3"));
        }
    } else if !(alpha >= 3.0) {
        violations.push(format!("alpha = {alpha} must be >= 3"));
    }

    if alpha > 1.0 {
        let lo = 1.0 / (alpha - 1.0);
        let inside = if strict {
            theta > lo && theta < 0.5
        } else {
            theta >= lo && theta <= 0.5
        };
        if !inside {
            let (l, r) = if strict { ('(', ')') } else { ('[', ']') };
            violations.push(format!("theta = {theta} must lie in {l}{lo}, 0.5{r}"));
        }
    } else {
        violations.push(format!("theta range is empty for alpha = {alpha}"));
    }

    if !(beta >= 0.0) {
        violations.push(format!("beta = {beta} must be >= 0"));
    }

    if !mode.is_scaled() {
        if !scaling.is_unit() {
            violations.push(format!("mode {mode} requires unit scaling, got {scaling:?}"));
        }
    } else if theta > 0.0 {
        let bound = 1.0 / theta - 2.0;
        match scaling {
            ScalingFunction::Unit => {
                if strict && !(0.0 < bound) {
                    violations.push(format!("sup t·δ'/δ = 0 must be < 1/θ − 2 = {bound}"));
                } else if !strict && !(0.0 <= bound) {
                    violations.push(format!("sup t·δ'/δ = 0 must be <= 1/θ − 2 = {bound}"));
                }
            }
            ScalingFunction::Power { r } => {
                if !r.is_finite() {
                    violations.push("power r must be finite".to_string());
                }
                if strict && !(r < bound) {
                    violations.push(format!("sup t·δ'/δ = {r} must be < 1/θ − 2 = {bound}"));
                } else if !strict && !(r <= bound) {
                    violations.push(format!("sup t·δ'/δ = {r} must be <= 1/θ − 2 = {bound}"));
                }
                // t²δ(t) = t^{2+r} → ∞ and δ ≥ δ0 > 0 on [t0, ∞).
                if !(r > -2.0) {
                    violations.push(format!("t²δ(t) = t^(2 + {r}) does not diverge"));
                }
                if r < 0.0 {
                    violations.push(format!(
                        "δ(t) = t^{r} is not bounded below by a positive constant on [t0, ∞)"
                    ));
                }
            }
            ScalingFunction::Exponential { c } => {
                if c > 0.0 {
                    warnings.push(format!(
                        "exponential scaling: t·δ'/δ = {c}·t is unbounded; admissible only on a finite horizon"
                    ));
                } else if c < 0.0 {
                    violations.push(format!(
                        "δ(t) = exp({c}·t) is not bounded below by a positive constant"
                    ));
                    violations.push(format!("inf t·δ'/δ = -∞ for exponential rate {c}"));
                }
            }
        }
    }

    ValidationReport {
        mode,
        pass: violations.is_empty(),
        violations,
        warnings,
    }
}

/// Position and velocity of the primal-dual pair at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub lambda: DVector<f64>,
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub x_dot: DVector<f64>,
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub lambda_dot: DVector<f64>,
}

impl SystemState {
    pub fn at_rest(t: f64, x: DVector<f64>, lambda: DVector<f64>) -> Self {
        let (n, m) = (x.len(), lambda.len());
        SystemState {
            t,
            x,
            lambda,
            x_dot: DVector::zeros(n),
            lambda_dot: DVector::zeros(m),
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    /// Flat `(x, λ, ẋ, λ̇)`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.x
            .iter()
            .chain(self.lambda.iter())
            .chain(self.x_dot.iter())
            .chain(self.lambda_dot.iter())
            .copied()
            .collect()
    }

    pub fn from_flat(t: f64, y: &[f64], n: usize, m: usize) -> Self {
        debug_assert_eq!(y.len(), 2 * (n + m));
        SystemState {
            t,
            x: DVector::from_column_slice(&y[..n]),
            lambda: DVector::from_column_slice(&y[n..n + m]),
            x_dot: DVector::from_column_slice(&y[n + m..2 * n + m]),
            lambda_dot: DVector::from_column_slice(&y[2 * n + m..]),
        }
    }

    /// z = (x, λ).
    pub fn z(&self) -> DVector<f64> {
        stack(&self.x, &self.lambda)
    }

    /// ż = (ẋ, λ̇).
    pub fn z_dot(&self) -> DVector<f64> {
        stack(&self.x_dot, &self.lambda_dot)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self
                .x
                .iter()
                .chain(self.lambda.iter())
                .chain(self.x_dot.iter())
                .chain(self.lambda_dot.iter())
                .all(|v| v.is_finite())
    }

    fn check_dims(&self, problem: &Problem) -> Result<()> {
        let (n, m) = (problem.n(), problem.m());
        if self.x.len() != n || self.x_dot.len() != n {
            return Err(Error::dim("state primal part", n, self.x.len().max(self.x_dot.len())));
        }
        if self.lambda.len() != m || self.lambda_dot.len() != m {
            return Err(Error::dim(
                "state dual part",
                m,
                self.lambda.len().max(self.lambda_dot.len()),
            ));
        }
        Ok(())
    }
}

pub(crate) fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(a.len() + b.len());
    z.rows_mut(0, a.len()).copy_from(a);
    z.rows_mut(a.len(), b.len()).copy_from(b);
    z
}

/// Time derivative of a [`SystemState`], in the same `(x, λ, ẋ, λ̇)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    pub x_dot: DVector<f64>,
    pub lambda_dot: DVector<f64>,
    pub x_ddot: DVector<f64>,
    pub lambda_ddot: DVector<f64>,
}

impl StateDerivative {
    pub fn accelerations_norm(&self) -> f64 {
        (self.x_ddot.norm_squared() + self.lambda_ddot.norm_squared()).sqrt()
    }
}

/// Evaluate the first-order right-hand side at `state`.
pub fn rhs(state: &SystemState, params: &DynamicsParams, problem: &Problem) -> Result<StateDerivative> {
    state.check_dims(problem)?;
    let t = state.t;
    if !(t > 0.0) {
        return Err(Error::Domain { t });
    }
    let a = problem.a();
    let delta = params.scaling.value(t);
    let theta_t = params.theta * t;
    let damping = params.alpha / t;

    let grad = problem.objective().gradient(&state.x);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Evaluation {
            t,
            norm_x: state.x.norm(),
        });
    }
    let residual = a * &state.x - problem.b();
    let dual_force = &state.lambda + &state.lambda_dot * theta_t + &residual * params.beta;
    let primal_force = grad + a.transpose() * dual_force;
    let x_ddot = -(&state.x_dot * damping) - primal_force * delta;

    let extrapolated = residual + a * &state.x_dot * theta_t;
    let lambda_ddot = -(&state.lambda_dot * damping) + extrapolated * delta;

    Ok(StateDerivative {
        x_dot: state.x_dot.clone(),
        lambda_dot: state.lambda_dot.clone(),
        x_ddot,
        lambda_ddot,
    })
}

/// `(t0, x*, λ*, 0, 0)` for a point that satisfies the KKT conditions to 1e-8.
pub fn equilibrium_state(problem: &Problem, point: &PrimalDualPoint, t0: f64) -> Result<SystemState> {
    let res = kkt_residual(problem, point)?;
    if res.max() > 1e-8 {
        return Err(Error::Precondition(format!(
            "equilibrium requires a KKT point, residual is {:.3e}",
            res.max()
        )));
    }
    if !(t0 > 0.0) {
        return Err(Error::Domain { t: t0 });
    }
    Ok(SystemState::at_rest(t0, point.x.clone(), point.lambda.clone()))
}

/// Default start: `x0 = x* + 1` componentwise, `λ0 = 0`, zero velocities.
pub fn default_initial_state(z_star: &PrimalDualPoint, t0: f64) -> SystemState {
    SystemState::at_rest(
        t0,
        z_star.x.add_scalar(1.0),
        DVector::zeros(z_star.lambda.len()),
    )
}

/// Adapter exposing the primal-dual system to the ODE integrator.
///
/// Evaluates the same right-hand side as [`rhs`] on flat slices, with `A`
/// cached row-major and no per-call allocation.
pub struct PrimalDualSystem<'a> {
    problem: &'a Problem,
    params: &'a DynamicsParams,
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    scratch: RefCell<Scratch>,
}

struct Scratch {
    grad: Vec<f64>,
    residual: Vec<f64>,
    dual_force: Vec<f64>,
}

impl<'a> PrimalDualSystem<'a> {
    pub fn new(problem: &'a Problem, params: &'a DynamicsParams) -> Self {
        let (n, m) = (problem.n(), problem.m());
        let a = problem.a();
        PrimalDualSystem {
            problem,
            params,
            n,
            m,
            a: (0..m).flat_map(|i| (0..n).map(move |j| a[(i, j)])).collect(),
            b: problem.b().iter().copied().collect(),
            scratch: RefCell::new(Scratch {
                grad: vec![0.0; n],
                residual: vec![0.0; m],
                dual_force: vec![0.0; m],
            }),
        }
    }
}

impl OdeSystem for PrimalDualSystem<'_> {
    fn dim(&self) -> usize {
        2 * (self.n + self.m)
    }

    fn eval(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::Domain { t });
        }
        let (n, m) = (self.n, self.m);
        let (x, rest) = y.split_at(n);
        let (lambda, rest) = rest.split_at(m);
        let (x_dot, lambda_dot) = rest.split_at(n);
        let p = self.params;
        let delta = p.scaling.value(t);
        let theta_t = p.theta * t;
        let damping = p.alpha / t;

        let mut guard = self.scratch.borrow_mut();
        let Scratch { grad, residual, dual_force } = &mut *guard;
        self.problem.objective().gradient_into(x, grad);
        if grad.iter().any(|g| !g.is_finite()) {
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::Evaluation { t, norm_x });
        }
        for i in 0..m {
            let row = &self.a[i * n..(i + 1) * n];
            let mut ax = 0.0;
            let mut axd = 0.0;
            for j in 0..n {
                ax += row[j] * x[j];
                axd += row[j] * x_dot[j];
            }
            residual[i] = ax - self.b[i];
            dual_force[i] = lambda[i] + lambda_dot[i] * theta_t + residual[i] * p.beta;
            dydt[2 * n + m + i] = -(lambda_dot[i] * damping) + (residual[i] + axd * theta_t) * delta;
        }
        for j in 0..n {
            let mut atf = 0.0;
            for i in 0..m {
                atf += self.a[i * n + j] * dual_force[i];
            }
            dydt[n + m + j] = -(x_dot[j] * damping) - (grad[j] + atf) * delta;
        }
        dydt[..n].copy_from_slice(x_dot);
        dydt[n..n + m].copy_from_slice(lambda_dot);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{catalog, solve_kkt_oracle, LinearConstraint, ObjectiveFunction};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_problem() -> Problem {
        let f = ObjectiveFunction::quadratic("half", DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let c = LinearConstraint::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        Problem::new("scalar", f, c).unwrap()
    }

    fn s1(t: f64, x: f64, l: f64, xd: f64, ld: f64) -> SystemState {
        let v = |a: f64| DVector::from_element(1, a);
        SystemState {
            t,
            x: v(x),
            lambda: v(l),
            x_dot: v(xd),
            lambda_dot: v(ld),
        }
    }

    #[test]
    fn rhs_hand_values() {
        let p = scalar_problem();
        let st = s1(1.0, 1.0, 0.0, 0.0, 0.0);
        let d = rhs(&st, &DynamicsParams::new(3.0, 0.5, 0.0), &p).unwrap();
        assert_eq!(
            (d.x_dot[0], d.lambda_dot[0], d.x_ddot[0], d.lambda_ddot[0]),
            (0.0, 0.0, -1.0, 1.0)
        );
        let d = rhs(&st, &DynamicsParams::new(3.0, 0.5, 2.0), &p).unwrap();
        assert_eq!(
            (d.x_dot[0], d.lambda_dot[0], d.x_ddot[0], d.lambda_ddot[0]),
            (0.0, 0.0, -3.0, 1.0)
        );
    }

    #[test]
    fn rhs_rejects_nonpositive_time() {
        let p = scalar_problem();
        let st = s1(0.0, 1.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            rhs(&st, &DynamicsParams::new(3.0, 0.5, 0.0), &p),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn rhs_reports_non_finite_gradient() {
        let f = ObjectiveFunction::new("exp", 1, |x| x[0].exp(), |x| x.map(f64::exp));
        let p = Problem::new("p", f, LinearConstraint::none(1)).unwrap();
        let st = s1(2.0, 1e4, 0.0, 0.0, 0.0);
        match rhs(&st, &DynamicsParams::new(3.0, 0.5, 0.0), &p) {
            Err(Error::Evaluation { t, norm_x }) => {
                assert_eq!(t, 2.0);
                assert_eq!(norm_x, 1e4);
            }
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn rhs_vanishes_at_equilibrium() {
        for name in ["quadratic-easy", "quartic", "expsum", "rank-deficient"] {
            let p = catalog(name).unwrap();
            let z = solve_kkt_oracle(&p, 1e-12).unwrap();
            let st = equilibrium_state(&p, &z, 1.0).unwrap();
            for params in [
                DynamicsParams::new(3.0, 0.5, 0.0),
                DynamicsParams::new(5.0, 0.3, 1.0),
                DynamicsParams::new(5.0, 0.3, 1.0).with_scaling(ScalingFunction::Power { r: 1.0 }),
            ] {
                let d = rhs(&st, &params, &p).unwrap();
                assert!(d.accelerations_norm() <= 1e-10, "{name}: {}", d.accelerations_norm());
            }
        }
    }

    #[test]
    fn quartic_equilibrium_is_exactly_zero() {
        let p = catalog("quartic").unwrap();
        let z = PrimalDualPoint::new(DVector::zeros(3), DVector::zeros(1));
        let st = equilibrium_state(&p, &z, 1.0).unwrap();
        let d = rhs(&st, &DynamicsParams::new(3.0, 0.5, 1.0), &p).unwrap();
        assert_eq!(d.accelerations_norm(), 0.0);
        assert_eq!(d.x_dot.norm() + d.lambda_dot.norm(), 0.0);
    }

    #[test]
    fn equilibrium_requires_kkt_point() {
        let p = catalog("quadratic-easy").unwrap();
        let z = PrimalDualPoint::new(DVector::zeros(4), DVector::zeros(2));
        assert!(matches!(equilibrium_state(&p, &z, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn validation_examples() {
        let p = DynamicsParams::new(3.0, 0.5, 0.0);
        assert!(validate_params(&p, ValidationMode::Basic, 1.0).pass);
        let strict = validate_params(&p, ValidationMode::Strict, 1.0);
        assert!(!strict.pass);
        assert_eq!(strict.violations.len(), 2, "{:?}", strict.violations);

        let scaled = DynamicsParams::new(5.0, 0.3, 1.0).with_scaling(ScalingFunction::Power { r: 1.0 });
        assert!(validate_params(&scaled, ValidationMode::ScaledStrict, 1.0).pass);
        // Power scaling is not admitted in the unscaled modes.
        assert!(!validate_params(&scaled, ValidationMode::Basic, 1.0).pass);
    }

    #[test]
    fn validation_scaling_bounds() {
        let base = DynamicsParams::new(5.0, 0.3, 1.0);
        let too_fast = base.with_scaling(ScalingFunction::Power { r: 1.5 });
        assert!(!validate_params(&too_fast, ValidationMode::ScaledBasic, 1.0).pass);

        // θ = 0.5 leaves no room: 1/θ − 2 = 0.
        let edge = DynamicsParams::new(3.0, 0.5, 0.0).with_scaling(ScalingFunction::Power { r: 0.0 });
        assert!(validate_params(&edge, ValidationMode::ScaledBasic, 1.0).pass);
        assert!(!validate_params(&edge, ValidationMode::ScaledStrict, 1.0).pass);

        let exp = base.with_scaling(ScalingFunction::Exponential { c: 0.01 });
        let report = validate_params(&exp, ValidationMode::ScaledBasic, 1.0);
        assert!(report.pass);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn validation_theta_interval() {
        let lo = DynamicsParams::new(5.0, 0.25, 0.0);
        assert!(validate_params(&lo, ValidationMode::Basic, 1.0).pass);
        assert!(!validate_params(&lo, ValidationMode::Strict, 1.0).pass);
        let below = DynamicsParams::new(5.0, 0.2, 0.0);
        assert!(!validate_params(&below, ValidationMode::Basic, 1.0).pass);
        let neg_beta = DynamicsParams::new(5.0, 0.3, -1.0);
        assert!(!validate_params(&neg_beta, ValidationMode::Basic, 1.0).pass);
        assert!(!validate_params(&DynamicsParams::new(5.0, 0.3, 0.0), ValidationMode::Basic, 0.0).pass);
    }

    #[test]
    fn flat_round_trip() {
        let st = SystemState {
            t: 2.0,
            x: DVector::from_column_slice(&[1.0, 2.0]),
            lambda: DVector::from_column_slice(&[3.0]),
            x_dot: DVector::from_column_slice(&[4.0, 5.0]),
            lambda_dot: DVector::from_column_slice(&[6.0]),
        };
        let flat = st.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(SystemState::from_flat(2.0, &flat, 2, 1), st);
    }

    #[test]
    fn xi_values() {
        assert_relative_eq!(DynamicsParams::new(3.0, 0.5, 0.0).xi(), 0.0);
        assert_relative_eq!(DynamicsParams::new(5.0, 0.3, 0.0).xi(), 0.2, epsilon = 1e-15);
    }
}
