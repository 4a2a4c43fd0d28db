use nalgebra::{DMatrix, DVector};

use super::{LinearConstraint, ObjectiveFunction, Problem};
use crate::error::{Error, Result};

pub const CATALOG_NAMES: [&str; 7] = [
    "quadratic-easy",
    "quadratic-illcond",
    "quartic",
    "expsum",
    "rank-deficient",
    "unconstrained-quad",
    "unconstrained-quartic",
];

/// Look up a built-in test problem by name.
pub fn catalog(name: &str) -> Result<Problem> {
    match name {
        "quadratic-easy" => quadratic_easy(),
        "quadratic-illcond" => quadratic_illcond(),
        "quartic" => quartic(),
        "expsum" => expsum(),
        "rank-deficient" => rank_deficient(),
        "unconstrained-quad" => unconstrained_quad(),
        "unconstrained-quartic" => unconstrained_quartic(),
        _ => Err(Error::UnknownProblem {
            name: name.to_string(),
            valid: CATALOG_NAMES.to_vec(),
        }),
    }
}

fn rows(r: usize, c: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, data)
}

fn vec(data: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(data)
}

fn two_row_constraint() -> Result<LinearConstraint> {
    LinearConstraint::new(
        rows(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        vec(&[1.0, 2.0]),
    )
}

// Q = I, n = 4, m = 2.
fn quadratic_easy() -> Result<Problem> {
    let f = ObjectiveFunction::quadratic(
        "quadratic-easy",
        DMatrix::identity(4, 4),
        vec(&[1.0, -1.0, 0.5, 0.0]),
    )?;
    Problem::new("quadratic-easy", f, two_row_constraint()?)
}

// Q = H diag(1, 10, 100, 1e4) H with the Householder reflector H = I − ½·11ᵀ.
fn quadratic_illcond() -> Result<Problem> {
    let h = DMatrix::identity(4, 4) - DMatrix::from_element(4, 4, 0.5);
    let d = DMatrix::from_diagonal(&vec(&[1.0, 10.0, 100.0, 1e4]));
    let q = &h * d * &h;
    let q = (&q + q.transpose()) * 0.5;
    let f = ObjectiveFunction::quadratic("quadratic-illcond", q, vec(&[1.0, -1.0, 0.5, 0.0]))?;
    Problem::new("quadratic-illcond", f, two_row_constraint()?)
}

fn quartic_objective(label: &str, c: DVector<f64>) -> ObjectiveFunction {
    let n = c.len();
    let (cv, cg, ci) = (c.clone(), c.clone(), c);
    ObjectiveFunction::new(
        label,
        n,
        move |x| {
            x.iter().map(|xi| 0.25 * xi.powi(4) + 0.5 * xi * xi).sum::<f64>() + cv.dot(x)
        },
        move |x| x.map(|xi| xi.powi(3) + xi) + &cg,
    )
    .with_hessian(|x| DMatrix::from_diagonal(&x.map(|xi| 3.0 * xi * xi + 1.0)))
    .with_gradient_into(move |x, g| {
        for ((gi, xi), ci) in g.iter_mut().zip(x).zip(ci.iter()) {
            *gi = xi.powi(3) + xi + ci;
        }
    })
}

// f = ¼Σx⁴ + ½‖x‖²; ∇f is not globally Lipschitz.
fn quartic() -> Result<Problem> {
    let f = quartic_objective("quartic", DVector::zeros(3));
    let c = LinearConstraint::new(rows(1, 3, &[1.0, 2.0, -1.0]), vec(&[0.0]))?;
    Problem::new("quartic", f, c)
}

// f = Σ exp(x_i); ∇f is not globally Lipschitz.
fn expsum() -> Result<Problem> {
    let f = ObjectiveFunction::new(
        "expsum",
        3,
        |x| x.iter().map(|xi| xi.exp()).sum(),
        |x| x.map(f64::exp),
    )
    .with_hessian(|x| DMatrix::from_diagonal(&x.map(f64::exp)))
    .with_gradient_into(|x, g| {
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = xi.exp();
        }
    });
    let c = LinearConstraint::new(
        rows(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]),
        vec(&[1.0, 0.5]),
    )?;
    Problem::new("expsum", f, c)
}

// Rows 0 and 1 coincide, so the dual solution set is a line.
fn rank_deficient() -> Result<Problem> {
    let f = ObjectiveFunction::quadratic(
        "rank-deficient",
        DMatrix::identity(3, 3),
        vec(&[0.5, 0.0, -0.5]),
    )?;
    let c = LinearConstraint::new(
        rows(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]),
        vec(&[1.0, 1.0, 2.0]),
    )?;
    Problem::new("rank-deficient", f, c)
}

fn unconstrained_quad() -> Result<Problem> {
    let q = DMatrix::from_diagonal(&vec(&[1.0, 2.0, 4.0]));
    let f = ObjectiveFunction::quadratic("unconstrained-quad", q, vec(&[1.0, -2.0, 1.0]))?;
    Problem::new("unconstrained-quad", f, LinearConstraint::none(3))
}

fn unconstrained_quartic() -> Result<Problem> {
    let f = quartic_objective("unconstrained-quartic", vec(&[1.0, -1.0, 0.5]));
    Problem::new("unconstrained-quartic", f, LinearConstraint::none(3))
}
