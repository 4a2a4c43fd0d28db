//! Linearly constrained convex problems `min f(x) s.t. Ax = b`.
//!
//! The objective enters only through value and gradient callables; no
//! Lipschitz constant is required. Quadratic objectives additionally carry
//! their `(Q, c)` data so the KKT oracle can solve them directly.

mod catalog;
mod oracle;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use catalog::{catalog, CATALOG_NAMES};
pub use oracle::{finite_difference_hessian, solve_kkt_oracle};

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type GradientIntoFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `½ xᵀQx + cᵀx` data attached to quadratic objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Convex C¹ objective given by value and gradient callables.
///
/// Callables must be pure and thread-safe; problems are shared across threads.
#[derive(Clone)]
pub struct ObjectiveFunction {
    dim: usize,
    label: String,
    value: ValueFn,
    gradient: GradientFn,
    gradient_into: Option<GradientIntoFn>,
    hessian: Option<HessianFn>,
    gradient_lipschitz: Option<f64>,
    quadratic: Option<QuadraticForm>,
}

impl fmt::Debug for ObjectiveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveFunction")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("gradient_lipschitz", &self.gradient_lipschitz)
            .field("quadratic", &self.quadratic.is_some())
            .finish()
    }
}

impl ObjectiveFunction {
    pub fn new<V, G>(label: impl Into<String>, dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ObjectiveFunction {
            dim,
            label: label.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            gradient_into: None,
            hessian: None,
            gradient_lipschitz: None,
            quadratic: None,
        }
    }

    /// `f(x) = ½ xᵀQx + cᵀx` with symmetric positive semidefinite `Q`.
    pub fn quadratic(label: impl Into<String>, q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let n = c.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::dim("quadratic objective Q", n, q.nrows()));
        }
        let scale = q.abs().max().max(1.0);
        if (&q - q.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::Contract("quadratic objective Q must be symmetric".into()));
        }
        let eig = q.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        let max_eig = eig.eigenvalues.max();
        if min_eig < -1e-10 * scale {
            return Err(Error::Contract(format!(
                "quadratic objective Q is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        let (qv, cv) = (q.clone(), c.clone());
        let (qg, cg) = (q.clone(), c.clone());
        let qh = q.clone();
        let mut obj = ObjectiveFunction::new(
            label,
            n,
            move |x| 0.5 * x.dot(&(&qv * x)) + cv.dot(x),
            move |x| &qg * x + &cg,
        )
        .with_hessian(move |_| qh.clone())
        .with_gradient_lipschitz(max_eig.max(0.0));
        let (qi, ci) = (q.clone(), c.clone());
        obj = obj.with_gradient_into(move |x, g| {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = ci[i] + x.iter().enumerate().map(|(j, xj)| qi[(i, j)] * xj).sum::<f64>();
            }
        });
        obj.quadratic = Some(QuadraticForm { q, c });
        Ok(obj)
    }

    /// Identically zero objective on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        let q = DMatrix::zeros(dim, dim);
        ObjectiveFunction::quadratic("zero", q, DVector::zeros(dim))
            .expect("zero matrix is a valid quadratic form")
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    /// Allocation-free gradient writing into its second argument. Must agree
    /// with the gradient callable.
    pub fn with_gradient_into<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gradient_into = Some(Arc::new(gradient));
        self
    }

    pub fn with_gradient_lipschitz(mut self, l: f64) -> Self {
        self.gradient_lipschitz = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn gradient_lipschitz(&self) -> Option<f64> {
        self.gradient_lipschitz
    }

    pub fn quadratic_form(&self) -> Option<&QuadraticForm> {
        self.quadratic.as_ref()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    /// `f(x) − f(y)`. For nearby points this is evaluated as
    /// `∫₀¹ ∇f(y + s(x − y))·(x − y) ds` (5-point Gauss–Legendre, exact for
    /// polynomial f up to degree 10).
    pub fn difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d = x - y;
        if d.amax() > SHORT_SEGMENT {
            return self.value(x) - self.value(y);
        }
        gauss_legendre_01(|s| self.gradient(&(y + &d * s)).dot(&d))
    }

    /// Gradient written into `out`, without allocating when an in-place
    /// callable is available.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.gradient_into {
            Some(g) => g(x, out),
            None => out.copy_from_slice((self.gradient)(&DVector::from_column_slice(x)).as_slice()),
        }
    }

    /// Analytic Hessian when supplied, otherwise central differences of the gradient.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.hessian {
            Some(h) => h(x),
            None => finite_difference_hessian(self, x),
        }
    }

    /// Largest relative mismatch between the gradient and central differences
    /// of the value, over `samples` random points with `|x_i| ≤ radius`.
    pub fn gradient_check(&self, samples: usize, radius: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let x = random_point(&mut rng, self.dim, radius);
            let g = self.gradient(&x);
            let mut fd = DVector::zeros(self.dim);
            for i in 0..self.dim {
                let h = 1e-5 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (self.value(&xp) - self.value(&xm)) / (2.0 * h);
            }
            let err = (&fd - &g).norm() / g.norm().max(1.0);
            worst = worst.max(err);
        }
        worst
    }

    /// Largest violation of the convexity inequality on random segments, in
    /// units of `1 + |f(x)| + |f(y)|`. Nonpositive means no violation found.
    pub fn convexity_check(&self, samples: usize, radius: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let x = random_point(&mut rng, self.dim, radius);
            let y = random_point(&mut rng, self.dim, radius);
            let (fx, fy) = (self.value(&x), self.value(&y));
            for s in [0.25, 0.5, 0.75] {
                let mid = &x * (1.0 - s) + &y * s;
                let gap = self.value(&mid) - ((1.0 - s) * fx + s * fy);
                worst = worst.max(gap / (1.0 + fx.abs() + fy.abs()));
            }
        }
        worst
    }
}

pub(crate) fn random_point(rng: &mut impl Rng, dim: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius))
}

/// Linear equality constraint `Ax = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    matrix_a: DMatrix<f64>,
    rhs_b: DVector<f64>,
}

impl LinearConstraint {
    /// Rejects constraint sets that are empty (least-squares residual > 1e-10).
    pub fn new(matrix_a: DMatrix<f64>, rhs_b: DVector<f64>) -> Result<Self> {
        if matrix_a.nrows() != rhs_b.len() {
            return Err(Error::dim("constraint rhs b", matrix_a.nrows(), rhs_b.len()));
        }
        let x = linalg::min_norm_solve(&matrix_a, &rhs_b);
        let residual = (&matrix_a * &x - &rhs_b).norm();
        if residual > 1e-10 {
            return Err(Error::Contract(format!(
                "constraint set Ax = b is empty (least-squares residual {residual:.3e})"
            )));
        }
        Ok(LinearConstraint { matrix_a, rhs_b })
    }

    /// `A = 0 ∈ R^{1×n}`, `b = 0`: no effective constraint.
    pub fn none(n: usize) -> Self {
        LinearConstraint {
            matrix_a: DMatrix::zeros(1, n),
            rhs_b: DVector::zeros(1),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.matrix_a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.rhs_b
    }

    pub fn row_rank(&self) -> usize {
        linalg::rank(&self.matrix_a)
    }
}

/// A convex objective together with its linear constraint.
#[derive(Clone, Debug)]
pub struct Problem {
    name: String,
    objective: ObjectiveFunction,
    constraint: LinearConstraint,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        objective: ObjectiveFunction,
        constraint: LinearConstraint,
    ) -> Result<Self> {
        if objective.dim() != constraint.a().ncols() {
            return Err(Error::dim(
                "constraint column count",
                objective.dim(),
                constraint.a().ncols(),
            ));
        }
        Ok(Problem {
            name: name.into(),
            objective,
            constraint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn objective(&self) -> &ObjectiveFunction {
        &self.objective
    }

    pub fn constraint(&self) -> &LinearConstraint {
        &self.constraint
    }

    /// Primal dimension.
    pub fn n(&self) -> usize {
        self.objective.dim()
    }

    /// Number of constraint rows.
    pub fn m(&self) -> usize {
        self.constraint.a().nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.constraint.a()
    }

    pub fn b(&self) -> &DVector<f64> {
        self.constraint.b()
    }

    pub(crate) fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::dim("primal vector", self.n(), x.len()));
        }
        Ok(())
    }

    pub(crate) fn check_lambda(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.m() {
            return Err(Error::dim("dual vector", self.m(), lambda.len()));
        }
        Ok(())
    }

    /// `Ax − b`.
    pub fn constraint_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a() * x - self.b()
    }
}

/// A candidate `(x, λ)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_ext::plain_vec")]
    pub lambda: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        PrimalDualPoint { x, lambda }
    }

    /// Stacked `z = (x, λ)`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.x.len() + self.lambda.len());
        z.rows_mut(0, self.x.len()).copy_from(&self.x);
        z.rows_mut(self.x.len(), self.lambda.len()).copy_from(&self.lambda);
        z
    }
}

/// `L_β(x, λ) = f(x) + ⟨λ, Ax − b⟩ + (β/2)‖Ax − b‖²`.
pub fn augmented_lagrangian(
    problem: &Problem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    beta: f64,
) -> Result<f64> {
    problem.check_x(x)?;
    problem.check_lambda(lambda)?;
    if !(beta >= 0.0) {
        return Err(Error::Contract(format!("penalty beta must be >= 0, got {beta}")));
    }
    let r = problem.constraint_residual(x);
    Ok(problem.objective().value(x) + lambda.dot(&r) + 0.5 * beta * r.norm_squared())
}

/// `D_f(x_ref, x) = f(x_ref) − f(x) − ⟨∇f(x), x_ref − x⟩`.
pub fn bregman_distance(problem: &Problem, x_ref: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    problem.check_x(x_ref)?;
    problem.check_x(x)?;
    let f = problem.objective();
    let d = x_ref - x;
    let g = f.gradient(x);
    if d.amax() > SHORT_SEGMENT {
        return Ok(f.value(x_ref) - f.value(x) - g.dot(&d));
    }
    Ok(gauss_legendre_01(|s| (f.gradient(&(x + &d * s)) - &g).dot(&d)))
}

/// Largest `‖x − y‖∞` for which value differences are integrated from gradients.
const SHORT_SEGMENT: f64 = 1.0;

fn gauss_legendre_01(g: impl Fn(f64) -> f64) -> f64 {
    const NODES: [f64; 3] = [0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 3] = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1];
    let mut sum = WEIGHTS[0] * g(0.5);
    for k in 1..3 {
        sum += WEIGHTS[k] * (g(0.5 * (1.0 - NODES[k])) + g(0.5 * (1.0 + NODES[k])));
    }
    0.5 * sum
}

/// Feasibility and stationarity residuals of the KKT system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub feasibility: f64,
    pub stationarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.feasibility.max(self.stationarity)
    }
}

/// `(‖Ax − b‖, ‖∇f(x) + Aᵀλ‖)`; both vanish exactly on the solution set.
pub fn kkt_residual(problem: &Problem, point: &PrimalDualPoint) -> Result<KktResidual> {
    problem.check_x(&point.x)?;
    problem.check_lambda(&point.lambda)?;
    let feasibility = problem.constraint_residual(&point.x).norm();
    let stationarity =
        (problem.objective().gradient(&point.x) + problem.a().transpose() * &point.lambda).norm();
    Ok(KktResidual {
        feasibility,
        stationarity,
    })
}
