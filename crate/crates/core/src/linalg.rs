//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `m · x = rhs`.
///
/// Singular values below `max(rows, cols) · eps · σ_max` are treated as zero,
/// which yields the pseudo-inverse solution for rank-deficient systems.
pub fn min_norm_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DVector::zeros(cols);
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return DVector::zeros(cols);
    }
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    svd.solve(rhs, cutoff)
        .expect("SVD computed with both U and V^T")
}

/// Numerical rank with the same cutoff as [`min_norm_solve`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let sigma_max = sv.max();
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    sv.iter().filter(|&&s| s > cutoff && s > 0.0).count()
}

/// Orthonormal basis of the null space of `m` (columns of the result).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to a square matrix so the SVD returns a full V.
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.rows_mut(0, rows).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max.max(f64::MIN_POSITIVE);
    let null_rows: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_rows.len());
    for (j, &i) in null_rows.iter().enumerate() {
        basis.set_column(j, &v_t.row(i).transpose());
    }
    basis
}
