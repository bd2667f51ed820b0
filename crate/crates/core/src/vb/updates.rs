//! The five coordinate updates of the variational posterior.
//!
//! Every update reads the current state and replaces one block. Data are
//! passed as the raw T×n matrix so the updates also run on shapes a
//! [`Panel`](crate::Panel) would reject (e.g. scalar checks).
//!
//! Sums over blocks of r×r second moments are done as matrix products on
//! vectorized blocks: `sum_t w_t vec(S_t)` is one row of `W · [vec(S_t)']`.

use nalgebra::{DMatrix, DVector};

use super::state::{VariationalState, INTERCEPT_PRECISION};
use crate::error::{QfaError, Result};
use crate::linalg::spd_inverse;
use crate::mixture::{GammaParams, GigHalf, InvGammaParams};
use crate::panel::{QuantileSpec, UpdateScheme};

/// Prior hyperparameters consumed by the updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub a0: f64,
    pub b0: f64,
    pub r0: f64,
    pub s0: f64,
}

/// Stack `vec(m_k m_k' + S_k)` (or `vec(m_k m_k')` without covariances) as
/// rows, over the leading `dim` coordinates. Coordinates of `m_k` beyond the
/// columns of `means` are the constant 1; covariance entries outside the
/// blocks are zero.
fn second_moment_rows(
    means: &DMatrix<f64>,
    covs: &[DMatrix<f64>],
    with_cov: bool,
    dim: usize,
) -> DMatrix<f64> {
    let count = means.nrows();
    let width = means.ncols();
    let mean = |k: usize, a: usize| if a < width { means[(k, a)] } else { 1.0 };
    let mut out = DMatrix::zeros(count, dim * dim);
    for k in 0..count {
        let cov = &covs[k];
        let cdim = cov.nrows();
        for b in 0..dim {
            for a in 0..dim {
                let mut v = mean(k, a) * mean(k, b);
                if with_cov && a < cdim && b < cdim {
                    v += cov[(a, b)];
                }
                out[(k, b * dim + a)] = v;
            }
        }
    }
    out
}

/// Rows `vec(S_k)`, zero-padded to `dim` coordinates.
fn cov_rows(covs: &[DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(covs.len(), dim * dim, |k, j| {
        let (a, b) = (j % dim, j / dim);
        let c = &covs[k];
        if a < c.nrows() && b < c.nrows() {
            c[(a, b)]
        } else {
            0.0
        }
    })
}

/// n×T matrix of `E[1/z_it]`.
fn inverse_weights(state: &VariationalState) -> DMatrix<f64> {
    DMatrix::from_fn(state.n_series(), state.n_periods(), |i, t| {
        state.z_at(i, t).mean_inv()
    })
}

/// n×T matrix of residuals `x_it - E[lambda_i]' E[f_t]` (intercept included).
pub(crate) fn residuals(state: &VariationalState, x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose() - &state.mu_lambda * state.augmented_factors().transpose()
}

/// n×T matrix of `E[(x_it - lambda_i' f_t)^2]`.
///
/// The exact scheme uses the full second moment
/// `e^2 + mu_f' S_l mu_f + mu_l' S_f mu_l + tr(S_l S_f)`; the plug-in scheme
/// keeps only `e^2 + mu_f' S_l mu_f`.
pub(crate) fn expected_sq_resid(
    state: &VariationalState,
    resid: &DMatrix<f64>,
    scheme: UpdateScheme,
) -> DMatrix<f64> {
    let p = state.n_loadings();
    let sl = cov_rows(&state.sigma_lambda, p);
    let mut out = resid.component_mul(resid);
    match scheme {
        UpdateScheme::Exact => {
            let ff = second_moment_rows(&state.mu_f, &state.sigma_f, true, p);
            let ll = second_moment_rows(&state.mu_lambda, &state.sigma_lambda, false, p);
            let sf = cov_rows(&state.sigma_f, p);
            out += sl * ff.transpose() + ll * sf.transpose();
        }
        UpdateScheme::Plugin => {
            let ff = second_moment_rows(&state.mu_f, &state.sigma_f, false, p);
            out += sl * ff.transpose();
        }
    }
    out
}

fn block(row: nalgebra::DMatrixView<'_, f64>, r: usize) -> DMatrix<f64> {
    // row is 1×r² in column-major vec order
    DMatrix::from_iterator(r, r, row.iter().copied())
}

/// Step 1: `q(lambda_i) = N(mu, S)` for every series.
///
/// Precision `kappa2^-2 E[1/sigma_i] sum_t E[1/z_it] E[f_t f_t'] + diag(E[alpha_i])`,
/// mean `S kappa2^-2 E[1/sigma_i] (sum_t E[1/z_it] x_it E[f_t] - kappa1 sum_t E[f_t])`.
/// The plug-in scheme uses `E[f_t] E[f_t]'` for the second moment. With an
/// intercept, `f_t` is extended by a constant 1 whose loading has the fixed
/// prior precision [`INTERCEPT_PRECISION`].
pub fn update_loadings(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    scheme: UpdateScheme,
) -> Result<()> {
    let n = x.ncols();
    let r = state.n_factors();
    let p = state.n_loadings();
    let inv_k2 = 1.0 / q.kappa2_sq();
    let k1 = q.kappa1();

    let w = inverse_weights(state);
    let ff = second_moment_rows(
        &state.mu_f,
        &state.sigma_f,
        scheme == UpdateScheme::Exact,
        p,
    );
    let prec_rows = &w * ff;
    let f_aug = state.augmented_factors();
    let lin_rows = w.component_mul(&x.transpose()) * &f_aug;
    let f_sum: DVector<f64> = DVector::from_iterator(p, f_aug.column_iter().map(|c| c.sum()));

    for i in 0..n {
        let c = state.sigma[i].mean_inverse() * inv_k2;
        let mut prec = block(prec_rows.rows(i, 1), p) * c;
        for j in 0..r {
            prec[(j, j)] += state.alpha_at(i, j).mean();
        }
        for j in r..p {
            prec[(j, j)] += INTERCEPT_PRECISION;
        }
        let rhs = (lin_rows.row(i).transpose() - &f_sum * k1) * c;
        let (cov, _) = spd_inverse(&prec).ok_or_else(|| {
            QfaError::numerical(
                "loadings",
                0,
                format!("precision of series {i} not positive definite"),
            )
        })?;
        let mean = &cov * rhs;
        state.mu_lambda.set_row(i, &mean.transpose());
        state.sigma_lambda[i] = cov;
    }
    Ok(())
}

/// Step 2: `q(alpha_ij) = Gamma(a0 + 1/2, b0 + E[lambda_ij^2] / 2)`.
pub fn update_alpha(state: &mut VariationalState, priors: &Priors) {
    let r = state.n_factors();
    for i in 0..state.n_series() {
        for j in 0..r {
            let m = state.mu_lambda[(i, j)];
            let second = m * m + state.sigma_lambda[i][(j, j)];
            state.alpha[i * r + j] = GammaParams {
                shape: priors.a0 + 0.5,
                rate: priors.b0 + 0.5 * second,
            };
        }
    }
}

/// Step 3: `q(z_it) = GIG(1/2, a_it, b_it)` with
/// `a_it = E[1/sigma_i](2 + kappa1^2 / kappa2^2)` and
/// `b_it = E[1/sigma_i] E[(x_it - lambda_i' f_t)^2] / kappa2^2`, clamped at the floor.
pub fn update_z(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    scheme: UpdateScheme,
) {
    let resid = residuals(state, x);
    let e2 = expected_sq_resid(state, &resid, scheme);
    update_z_with(state, q, &e2);
}

fn update_z_with(state: &mut VariationalState, q: &QuantileSpec, e2: &DMatrix<f64>) {
    let (n, t_len) = e2.shape();
    let k2 = q.kappa2_sq();
    let shape_factor = 2.0 + q.kappa1() * q.kappa1() / k2;
    for i in 0..n {
        let es = state.sigma[i].mean_inverse();
        let a = es * shape_factor;
        for t in 0..t_len {
            state.z[i * t_len + t] = GigHalf::clamped(a, es * e2[(i, t)] / k2);
        }
    }
}

/// Shape of `q(sigma_i)`: `r0 + 3T/2` for the exact scheme, `r0 + 3T` for
/// the plug-in scheme.
pub fn sigma_shape(r0: f64, periods: usize, scheme: UpdateScheme) -> f64 {
    match scheme {
        UpdateScheme::Exact => r0 + 1.5 * periods as f64,
        UpdateScheme::Plugin => r0 + 3.0 * periods as f64,
    }
}

/// Step 4: `q(sigma_i) = InvGamma(shape, s_i)` with
///
/// ```text
/// s_i = s0 + sum_t [ E[1/z] E[e^2] / (2 k2^2) - k1 E[e] / k2^2 + (1 + k1^2 / (2 k2^2)) E[z] ]
/// ```
///
/// Each summand is positive (AM-GM with `E[z] E[1/z] >= 1` and
/// `E[e^2] >= E[e]^2`), so `s_i > s0`.
pub fn update_sigma(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    priors: &Priors,
    scheme: UpdateScheme,
) -> Result<()> {
    let resid = residuals(state, x);
    let e2 = expected_sq_resid(state, &resid, scheme);
    update_sigma_with(state, q, priors, scheme, &resid, &e2)
}

fn update_sigma_with(
    state: &mut VariationalState,
    q: &QuantileSpec,
    priors: &Priors,
    scheme: UpdateScheme,
    resid: &DMatrix<f64>,
    e2: &DMatrix<f64>,
) -> Result<()> {
    let (n, t_len) = resid.shape();
    let k2 = q.kappa2_sq();
    let k1 = q.kappa1();
    let shape = sigma_shape(priors.r0, t_len, scheme);
    let z_weight = 1.0 + k1 * k1 / (2.0 * k2);
    for i in 0..n {
        let mut s = priors.s0;
        for t in 0..t_len {
            let z = state.z_at(i, t);
            let (ez, einv) = (z.mean(), z.mean_inv());
            s += einv * e2[(i, t)] / (2.0 * k2) - k1 * resid[(i, t)] / k2 + z_weight * ez;
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(QfaError::numerical(
                "sigma",
                0,
                format!("scale of series {i} is {s}"),
            ));
        }
        state.sigma[i] = InvGammaParams { shape, scale: s };
    }
    Ok(())
}

/// Steps 3 and 4 back to back; neither changes the residual moments the
/// other reads, so they are computed once.
pub(crate) fn update_z_and_sigma(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    priors: &Priors,
    scheme: UpdateScheme,
) -> Result<()> {
    let resid = residuals(state, x);
    let e2 = expected_sq_resid(state, &resid, scheme);
    update_z_with(state, q, &e2);
    update_sigma_with(state, q, priors, scheme, &resid, &e2)
}

/// Step 5: `q(f_t) = N(mu, S)` for every period, with a standard normal prior.
///
/// Precision `kappa2^-2 sum_i E[1/sigma_i] E[1/z_it] E[lambda_i lambda_i'] + I`,
/// mean `S kappa2^-2 sum_i E[1/sigma_i] (E[1/z_it] (x_it E[lambda_i] - E[lambda_i mu_i]) - kappa1 E[lambda_i])`
/// where `mu_i` is the intercept (zero without one).
pub fn update_factors(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    scheme: UpdateScheme,
) -> Result<()> {
    let t_len = x.nrows();
    let n = x.ncols();
    let r = state.n_factors();
    let inv_k2 = 1.0 / q.kappa2_sq();
    let k1 = q.kappa1();

    let p = state.n_loadings();
    let exact = scheme == UpdateScheme::Exact;
    let c: Vec<f64> = state
        .sigma
        .iter()
        .map(|s| s.mean_inverse() * inv_k2)
        .collect();
    let mut offset = DVector::<f64>::zeros(r);
    for i in 0..n {
        for k in 0..r {
            offset[k] += c[i] * state.mu_lambda[(i, k)];
        }
    }
    offset *= k1;

    // T×n weights c_i E[1/z_it]
    let wc = DMatrix::from_fn(t_len, n, |t, i| c[i] * state.z_at(i, t).mean_inv());
    let mu_l = state.mu_lambda.columns(0, r).into_owned();
    let ll = if p == r {
        second_moment_rows(&mu_l, &state.sigma_lambda, exact, r)
    } else {
        let blocks: Vec<DMatrix<f64>> = state
            .sigma_lambda
            .iter()
            .map(|s| s.view((0, 0), (r, r)).into_owned())
            .collect();
        second_moment_rows(&mu_l, &blocks, exact, r)
    };
    let prec_rows = &wc * ll;
    let mut lin_rows = wc.component_mul(x) * &mu_l;
    if p > r {
        // E[lambda_i mu_i]
        let cross = DMatrix::from_fn(n, r, |i, k| {
            let m = state.mu_lambda[(i, k)] * state.mu_lambda[(i, r)];
            if exact {
                m + state.sigma_lambda[i][(k, r)]
            } else {
                m
            }
        });
        lin_rows -= &wc * cross;
    }

    for t in 0..t_len {
        let mut prec = block(prec_rows.rows(t, 1), r);
        for j in 0..r {
            prec[(j, j)] += 1.0;
        }
        let (cov, _) = spd_inverse(&prec).ok_or_else(|| {
            QfaError::numerical(
                "factors",
                0,
                format!("precision of period {t} not positive definite"),
            )
        })?;
        let mean = &cov * (lin_rows.row(t).transpose() - &offset);
        state.mu_f.set_row(t, &mean.transpose());
        state.sigma_f[t] = cov;
    }
    Ok(())
}
