//! Standardization and principal-component factor extraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QfaError, Result};
use crate::panel::Panel;

/// Per-series affine parameters removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Map standardized values back to the original units.
    pub fn invert(&self, standardized: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = standardized.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.iter_mut()
                .for_each(|v| *v = *v * self.sds[j] + self.means[j]);
        }
        out
    }
}

/// Center each series and scale it to unit sample standard deviation
/// (denominator `T - 1`).
pub fn standardize(panel: &Panel) -> Result<(Panel, Standardization)> {
    let x = panel.values();
    let t = x.nrows() as f64;
    let mut out = x.clone();
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.iter().sum::<f64>() / t;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(QfaError::ConstantSeries {
                label: panel.series_labels()[j].clone(),
            });
        }
        col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    Ok((panel.with_values(out)?, Standardization { means, sds }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    /// T×r, normalized so that `F'F / T = I`.
    pub factors: DMatrix<f64>,
    /// n×r least-squares loadings of the panel on the factors.
    pub loadings: DMatrix<f64>,
    /// Share of total variation captured by each component, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Principal-component factors from the eigendecomposition of the smaller
/// Gram matrix of the T×n data (numerically steadier than nalgebra's SVD on
/// rank-deficient panels).
pub fn pca_factors(panel: &Panel, r: usize) -> Result<PcaFit> {
    let x = panel.values();
    let (t, n) = x.shape();
    if r == 0 || r > t.min(n) {
        return Err(QfaError::Config(format!(
            "number of components must be in 1..={}, got {r}",
            t.min(n)
        )));
    }
    let time_side = t <= n;
    let gram = if time_side {
        x * x.transpose()
    } else {
        x.transpose() * x
    };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]];
    let kth = eig.eigenvalues[order[r - 1]];
    if !(kth > 1e-20 * top.max(f64::MIN_POSITIVE)) || !(kth > 0.0) {
        return Err(QfaError::RankDeficient(format!(
            "data matrix has rank below {r}"
        )));
    }

    let scale = (t as f64).sqrt();
    let mut factors = DMatrix::zeros(t, r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let u = if time_side {
            v.into_owned()
        } else {
            let xv = x * v;
            let norm = xv.norm();
            xv / norm
        };
        factors.set_column(k, &(u * scale));
    }
    let mut loadings = x.transpose() * &factors / t as f64;
    fix_signs(&mut factors, &mut loadings);

    let explained_variance = order
        .iter()
        .take(r)
        .map(|&i| eig.eigenvalues[i] / total)
        .collect();
    Ok(PcaFit {
        factors,
        loadings,
        explained_variance,
    })
}

/// Flip factor/loading column pairs so each loading column's first
/// nonzero entry is nonnegative.
pub fn fix_signs(factors: &mut DMatrix<f64>, loadings: &mut DMatrix<f64>) {
    for k in 0..factors.ncols() {
        let lead = loadings
            .column(k)
            .iter()
            .copied()
            .find(|v| v.abs() > 1e-14)
            .unwrap_or(0.0);
        if lead < 0.0 {
            factors.column_mut(k).neg_mut();
            loadings.column_mut(k).neg_mut();
        }
    }
}

/// Frobenius reconstruction error of `X - F L'`.
pub fn reconstruction_error(
    x: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
) -> f64 {
    (x - factors * loadings.transpose()).norm_squared()
}

/// Loadings of a panel on given factors by per-series least squares.
pub fn regress_loadings(x: &DMatrix<f64>, factors: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = x.ncols();
    let r = factors.ncols();
    let mut out = DMatrix::zeros(n, r);
    for i in 0..n {
        let y = DVector::from_iterator(x.nrows(), x.column(i).iter().copied());
        let b = crate::linalg::least_squares(factors, &y)?;
        out.set_row(i, &b.transpose());
    }
    Some(out)
}
