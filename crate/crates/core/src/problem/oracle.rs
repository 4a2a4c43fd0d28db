//! Reference primal-dual solutions.

use nalgebra::{DMatrix, DVector};

use super::{kkt_residual, ObjectiveFunction, PrimalDualPoint, Problem};
use crate::dynamics::{DynamicsParams, ScalingFunction, SystemState};
use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegratorConfig, Termination};
use crate::linalg::min_norm_solve;

const NEWTON_MAX_ITER: usize = 100;

/// Central-difference Hessian of the gradient, step `1e-5·(1+|x_j|)`, symmetrized.
pub fn finite_difference_hessian(f: &ObjectiveFunction, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (f.gradient(&xp) - f.gradient(&xm)) / (2.0 * step);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

/// Solve the KKT system `∇f(x) + Aᵀλ = 0, Ax = b` to within `tol` on both residuals.
///
/// Quadratic objectives use one minimum-norm solve of the saddle matrix.
/// Everything else runs damped Newton from the quadratic model at the origin,
/// with a long integration of the dynamics as a restart if Newton stalls.
/// The returned multiplier is always the minimum-norm representative.
pub fn solve_kkt_oracle(problem: &Problem, tol: f64) -> Result<PrimalDualPoint> {
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("oracle tolerance must be > 0, got {tol}")));
    }
    let n = problem.n();
    let obj = problem.objective();

    let start = match obj.quadratic_form() {
        Some(qf) => saddle_solve(problem, &qf.q, &(-&qf.c)),
        None => {
            let x0 = DVector::zeros(n);
            let h0 = obj.hessian(&x0);
            let g0 = obj.gradient(&x0);
            saddle_solve(problem, &h0, &(-g0))
        }
    };
    let start = if is_finite(&start) {
        start
    } else {
        PrimalDualPoint::new(DVector::zeros(n), DVector::zeros(problem.m()))
    };

    let mut best = newton(problem, start, tol)?;
    let mut res = kkt_residual(problem, &best)?.max();
    if res > tol {
        if let Some(restart) = integrate_towards_solution(problem, &best)? {
            let candidate = newton(problem, restart, tol)?;
            let cres = kkt_residual(problem, &candidate)?.max();
            if cres < res {
                best = candidate;
                res = cres;
            }
        }
    }
    if res > tol || !res.is_finite() {
        return Err(Error::Oracle { residual: res, tol });
    }
    Ok(best)
}

fn is_finite(p: &PrimalDualPoint) -> bool {
    p.x.iter().chain(p.lambda.iter()).all(|v| v.is_finite())
}

/// Minimum-norm solution of `[[H, Aᵀ], [A, 0]] (x, λ) = (rhs_x, b)`.
fn saddle_solve(problem: &Problem, h: &DMatrix<f64>, rhs_x: &DVector<f64>) -> PrimalDualPoint {
    let (n, m) = (problem.n(), problem.m());
    let k = saddle_matrix(problem, h);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(rhs_x);
    rhs.rows_mut(n, m).copy_from(problem.b());
    let sol = min_norm_solve(&k, &rhs);
    PrimalDualPoint::new(sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned())
}

fn saddle_matrix(problem: &Problem, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (problem.n(), problem.m());
    let a = problem.a();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(a);
    k
}

fn kkt_map(problem: &Problem, p: &PrimalDualPoint) -> DVector<f64> {
    let (n, m) = (problem.n(), problem.m());
    let mut out = DVector::zeros(n + m);
    let stat = problem.objective().gradient(&p.x) + problem.a().transpose() * &p.lambda;
    out.rows_mut(0, n).copy_from(&stat);
    out.rows_mut(n, m).copy_from(&problem.constraint_residual(&p.x));
    out
}

/// Replace λ by the minimum-norm multiplier with the same `Aᵀλ`.
fn normalize_dual(problem: &Problem, p: PrimalDualPoint) -> PrimalDualPoint {
    let at = problem.a().transpose();
    let image = &at * &p.lambda;
    let lambda = min_norm_solve(&at, &image);
    PrimalDualPoint::new(p.x, lambda)
}

fn newton(problem: &Problem, start: PrimalDualPoint, tol: f64) -> Result<PrimalDualPoint> {
    let (n, m) = (problem.n(), problem.m());
    let target = (tol * 1e-3).max(1e-15);
    let mut z = start;
    let mut fz = kkt_map(problem, &z);
    let mut norm = fz.norm();
    for _ in 0..NEWTON_MAX_ITER {
        if !norm.is_finite() || norm <= target {
            break;
        }
        let h = problem.objective().hessian(&z.x);
        let step = -min_norm_solve(&saddle_matrix(problem, &h), &fz);
        let mut s = 1.0;
        let mut accepted = None;
        while s > 1e-12 {
            let trial = PrimalDualPoint::new(
                &z.x + step.rows(0, n) * s,
                &z.lambda + step.rows(n, m) * s,
            );
            let ft = kkt_map(problem, &trial);
            let tn = ft.norm();
            if tn.is_finite() && tn <= (1.0 - 1e-4 * s) * norm {
                accepted = Some((trial, ft, tn));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((trial, ft, tn)) => {
                z = trial;
                fz = ft;
                norm = tn;
            }
            None => break,
        }
    }
    Ok(normalize_dual(problem, z))
}

/// Run the (provably convergent) dynamics for a long horizon from `near`.
fn integrate_towards_solution(
    problem: &Problem,
    near: &PrimalDualPoint,
) -> Result<Option<PrimalDualPoint>> {
    let params = DynamicsParams {
        alpha: 5.0,
        theta: 0.3,
        beta: 1.0,
        scaling: ScalingFunction::Unit,
    };
    let x0 = if is_finite(near) {
        near.x.clone()
    } else {
        DVector::zeros(problem.n())
    };
    let initial = SystemState::at_rest(1.0, x0, DVector::zeros(problem.m()));
    let config = IntegratorConfig {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        sample_schedule: Some(vec![1.0, 1e4]),
        ..IntegratorConfig::default()
    };
    let log = integrate(problem, &params, &initial, 1e4, &config)?;
    if log.termination != Termination::Completed {
        return Ok(None);
    }
    Ok(log
        .samples
        .last()
        .map(|s| PrimalDualPoint::new(s.x.clone(), s.lambda.clone())))
}
