//! Loss-based quantile factor estimator: alternating quantile regressions
//! of series on factors and of cross-sections on loadings.
//!
//! Each inner regression minimizes the smoothed check loss
//! `rho_eps(u) = sqrt(u^2 + eps^2) / 2 + (tau - 1/2) u` by majorize-minimize
//! reweighted least squares, shrinking `eps` down to [`EPS_FINAL`], and then
//! tries the basic solution through the `k` smallest residuals, which is
//! where the unsmoothed problem attains its optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{QfaError, Result};
use crate::linalg::least_squares;
use crate::panel::{check_loss_unchecked, Panel, QuantileSpec};
use crate::pca::{fix_signs, pca_factors, standardize};

/// Smallest smoothing width used by the inner solver.
pub const EPS_FINAL: f64 = 1e-6;
const INNER_ITERS: usize = 100;
const INNER_RTOL: f64 = 1e-10;

/// Total unsmoothed check loss of the residuals `y - X b`.
pub fn total_check_loss(y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>, tau: f64) -> f64 {
    (y - x * beta)
        .iter()
        .map(|u| check_loss_unchecked(*u, tau))
        .sum()
}

/// Smoothed check loss summed over the residuals `y - X b`.
pub fn smoothed_loss(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    tau: f64,
    eps: f64,
) -> f64 {
    (y - x * beta)
        .iter()
        .map(|u| 0.5 * (u * u + eps * eps).sqrt() + (tau - 0.5) * u)
        .sum()
}

/// One majorize-minimize step at smoothing width `eps`:
/// `b = (X'WX)^-1 (X'Wy + (2 tau - 1) X'1)` with `W = diag(1/sqrt(u^2 + eps^2))`.
pub fn mm_step(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    tau: f64,
    eps: f64,
) -> Option<DVector<f64>> {
    let (t_len, k) = x.shape();
    let resid = y - x * beta;
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for t in 0..t_len {
        let w = 1.0 / (resid[t] * resid[t] + eps * eps).sqrt();
        let row = x.row(t);
        for a in 0..k {
            rhs[a] += row[a] * (w * y[t] + (2.0 * tau - 1.0));
            for b in 0..=a {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    xtwx.cholesky().map(|c| c.solve(&rhs))
}

/// Quantile regression of `y` on the columns of `x` (no implicit intercept).
pub fn qreg_fit(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64) -> Result<DVector<f64>> {
    qreg_fit_from(y, x, tau, None)
}

/// [`qreg_fit`] started from given coefficients instead of least squares.
pub fn qreg_fit_from(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    tau: f64,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let q = QuantileSpec::new(tau)?;
    let (t_len, k) = x.shape();
    if y.len() != t_len {
        return Err(QfaError::Config(format!(
            "response has {} rows, design has {t_len}",
            y.len()
        )));
    }
    if t_len <= k {
        return Err(QfaError::Config(format!(
            "quantile regression needs more rows ({t_len}) than columns ({k})"
        )));
    }
    let ls = least_squares(x, y)
        .ok_or_else(|| QfaError::RankDeficient("quantile regression design".into()))?;
    let warm = start.filter(|b| b.len() == k && b.iter().all(|v| v.is_finite()));
    let mut beta = warm.cloned().unwrap_or(ls);

    // smoothing width relative to the typical residual; a warm start is
    // already close, so it skips the widest stages
    let resid = y - x * &beta;
    let scale = resid.iter().map(|u| u.abs()).sum::<f64>() / t_len as f64;
    let first = if warm.is_some() { 1e-3 } else { 0.1 };
    let mut eps = (first * scale).max(EPS_FINAL);
    loop {
        let mut current = smoothed_loss(y, x, &beta, q.tau(), eps);
        for _ in 0..INNER_ITERS {
            let Some(next) = mm_step(y, x, &beta, q.tau(), eps) else {
                break;
            };
            let value = smoothed_loss(y, x, &next, q.tau(), eps);
            // majorize-minimize never increases the smoothed loss; guard rounding
            if value > current {
                break;
            }
            beta = next;
            let done = current - value <= INNER_RTOL * current.abs().max(1e-300);
            current = value;
            if done {
                break;
            }
        }
        if eps <= EPS_FINAL {
            break;
        }
        eps = (eps * 0.1).max(EPS_FINAL);
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(QfaError::NoConvergence(
            "quantile regression produced non-finite coefficients".into(),
        ));
    }

    if let Some(vertex) = basic_solution(y, x, &beta) {
        if total_check_loss(y, x, &vertex, q.tau()) <= total_check_loss(y, x, &beta, q.tau()) {
            beta = vertex;
        }
    }
    Ok(beta)
}

/// Coefficients interpolating the `k` observations with the smallest
/// absolute residuals, if that subsystem is nonsingular.
fn basic_solution(y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> Option<DVector<f64>> {
    let k = x.ncols();
    let resid = y - x * beta;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|a, b| resid[*a].abs().total_cmp(&resid[*b].abs()).then(a.cmp(b)));
    let rows = &order[..k];
    let xb = DMatrix::from_fn(k, k, |a, b| x[(rows[a], b)]);
    let yb = DVector::from_fn(k, |a, _| y[rows[a]]);
    let sol = xb.lu().solve(&yb)?;
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Options of [`cdg_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct CdgOptions {
    pub max_outer: usize,
    /// Stop once the relative drop of the total check loss falls below this.
    pub tol: f64,
    /// Standardize the panel before estimation.
    pub standardize: bool,
}

impl Default for CdgOptions {
    fn default() -> Self {
        Self {
            max_outer: 100,
            tol: 1e-8,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CdgFit {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub final_loss: f64,
    /// Total check loss after every outer iteration.
    pub loss_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

fn panel_loss(x: &DMatrix<f64>, f: &DMatrix<f64>, l: &DMatrix<f64>, tau: f64) -> f64 {
    (x - f * l.transpose())
        .iter()
        .map(|u| check_loss_unchecked(*u, tau))
        .sum()
}

/// Solve one block: regress every column of `data` on `design`, keeping
/// the previous coefficients whenever they are at least as good.
fn regress_block(
    data: &DMatrix<f64>,
    design: &DMatrix<f64>,
    previous: Option<&DMatrix<f64>>,
    tau: f64,
    block: &str,
    outer: usize,
) -> Result<DMatrix<f64>> {
    let k = design.ncols();
    let mut out = DMatrix::zeros(data.ncols(), k);
    for j in 0..data.ncols() {
        let y = data.column(j).into_owned();
        let start = previous.map(|p| p.row(j).transpose());
        let beta = qreg_fit_from(&y, design, tau, start.as_ref())
            .map_err(|e| QfaError::numerical(block, outer, format!("regression {j}: {e}")))?;
        let keep = previous.is_some_and(|p| {
            let old = p.row(j).transpose();
            total_check_loss(&y, design, &old, tau) <= total_check_loss(&y, design, &beta, tau)
        });
        if keep {
            out.set_row(j, &previous.unwrap().row(j));
        } else {
            out.set_row(j, &beta.transpose());
        }
    }
    Ok(out)
}

/// Rescale to `F'F/T = I`, rotate so the loading cross-product is diagonal
/// with decreasing entries, and fix signs. Leaves `F L'` unchanged.
fn normalize(f: &mut DMatrix<f64>, l: &mut DMatrix<f64>) -> Option<()> {
    let t_len = f.nrows() as f64;
    let m = f.transpose() * &*f / t_len;
    let chol = m.cholesky()?;
    let lower = chol.l();
    let lower_inv_t = lower.clone().try_inverse()?.transpose();
    *f = &*f * lower_inv_t;
    *l = &*l * lower;

    let eig = (l.transpose() * &*l).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let v = DMatrix::from_fn(order.len(), order.len(), |a, b| {
        eig.eigenvectors[(a, order[b])]
    });
    *f = &*f * &v;
    *l = &*l * &v;
    fix_signs(f, l);
    Some(())
}

/// Alternating check-loss minimization started from principal components.
pub fn cdg_fit(panel: &Panel, r: usize, q: &QuantileSpec, options: &CdgOptions) -> Result<CdgFit> {
    let (t_len, n) = (panel.periods(), panel.series());
    if r == 0 || r >= t_len.min(n) {
        return Err(QfaError::Config(format!(
            "number of factors {r} must lie in 1..{}",
            t_len.min(n)
        )));
    }
    if options.max_outer == 0 || !(options.tol >= 0.0) {
        return Err(QfaError::Config(
            "max_outer must be positive and tol nonnegative".into(),
        ));
    }
    let data = if options.standardize {
        standardize(panel)?.0
    } else {
        panel.clone()
    };
    let x = data.values();
    let tau = q.tau();
    let xt = x.transpose();

    let mut f = pca_factors(&data, r)?.factors;
    let mut l: Option<DMatrix<f64>> = None;
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut converged = false;
    for outer in 1..=options.max_outer {
        let new_l = regress_block(x, &f, l.as_ref(), tau, "cdg loadings", outer)?;
        f = regress_block(
            &xt,
            &new_l,
            (outer > 1).then_some(&f),
            tau,
            "cdg factors",
            outer,
        )?;
        let mut new_l = new_l;
        normalize(&mut f, &mut new_l).ok_or_else(|| {
            QfaError::numerical("cdg normalization", outer, "factor cross-product singular")
        })?;
        l = Some(new_l);
        let loss = panel_loss(x, &f, l.as_ref().unwrap(), tau);
        trace.push(loss);
        if previous.is_finite() && previous - loss <= options.tol * previous {
            converged = true;
            break;
        }
        previous = loss;
    }
    Ok(CdgFit {
        factors: f,
        loadings: l.expect("at least one outer iteration"),
        final_loss: *trace.last().unwrap(),
        iters: trace.len(),
        converged,
        loss_trace: trace,
    })
}
