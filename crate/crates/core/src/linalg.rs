//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Inverse and log-determinant of a symmetric positive definite matrix.
///
/// Returns `None` when the Cholesky factorization fails.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = m.clone().cholesky()?;
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Some((inv, log_det))
}

/// Log-determinant of an SPD matrix via Cholesky.
pub(crate) fn spd_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(
        2.0 * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>(),
    )
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solve the least-squares problem `min ||y - X b||` through the normal
/// equations. `None` if `X'X` is not positive definite.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty))
}
