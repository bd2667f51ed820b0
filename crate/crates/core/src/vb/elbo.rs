//! Evidence lower bound of the mean-field posterior.
//!
//! All additive constants are kept so that bounds are comparable across
//! different numbers of factors.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::state::{VariationalState, INTERCEPT_PRECISION};
use super::updates::{expected_sq_resid, residuals};
use crate::linalg::spd_log_det;
use crate::panel::{EstimatorConfig, QuantileSpec, UpdateScheme};

/// Breakdown of the bound into its likelihood, prior and entropy parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    /// Expected conditionally Gaussian log-likelihood plus the mixture-weight
    /// prior and entropy (the `log z` terms cancel between them).
    pub likelihood_and_weights: f64,
    pub scales: f64,
    pub loadings: f64,
    pub precisions: f64,
    pub factors: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood_and_weights + self.scales + self.loadings + self.precisions + self.factors
    }
}

pub fn compute_elbo(
    state: &VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    config: &EstimatorConfig,
) -> f64 {
    elbo_terms(state, x, q, config).total()
}

pub fn elbo_terms(
    state: &VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    config: &EstimatorConfig,
) -> ElboTerms {
    let (t_len, n) = x.shape();
    let r = state.n_factors() as f64;
    let k1 = q.kappa1();
    let k2 = q.kappa2_sq();
    let log_2pi = (2.0 * PI).ln();
    let gauss_const = -0.5 * (log_2pi + k2.ln());

    let resid = residuals(state, x);
    let e2_all = expected_sq_resid(state, &resid, UpdateScheme::Exact);
    let mut lik = 0.0;
    for i in 0..n {
        let sig = &state.sigma[i];
        let es = sig.mean_inverse();
        let elog = sig.mean_log();
        let mut row = 0.0;
        for t in 0..t_len {
            let z = state.z_at(i, t);
            let (ez, einv) = (z.mean(), z.mean_inv());
            let e = resid[(i, t)];
            let e2 = e2_all[(i, t)];
            // Gaussian part of log p(x | .) without -0.5 E[log z]
            row += gauss_const
                - 0.5 * elog
                - es * (einv * e2 / (2.0 * k2) - k1 * e / k2 + k1 * k1 * ez / (2.0 * k2));
            // log p(z | sigma) for an exponential with mean sigma
            row += -elog - es * ez;
            // entropy without +0.5 E[log z]
            row += z.entropy_without_log_z();
        }
        lik += row;
    }

    let scales: f64 = state
        .sigma
        .iter()
        .map(|s| s.cross_log_prior(config.r0, config.s0) + s.entropy())
        .sum();

    let rr = state.n_factors();
    let pp = state.n_loadings();
    let mut loadings = 0.0;
    let mut precisions = 0.0;
    for i in 0..n {
        for j in 0..pp {
            let m = state.mu_lambda[(i, j)];
            let second = m * m + state.sigma_lambda[i][(j, j)];
            if j < rr {
                let a = state.alpha_at(i, j);
                loadings += -0.5 * log_2pi + 0.5 * a.mean_log() - 0.5 * a.mean() * second;
                precisions += a.cross_log_prior(config.a0, config.b0) + a.entropy();
            } else {
                loadings += -0.5 * log_2pi + 0.5 * INTERCEPT_PRECISION.ln()
                    - 0.5 * INTERCEPT_PRECISION * second;
            }
        }
        loadings += gaussian_entropy(&state.sigma_lambda[i], pp as f64);
    }

    let mut factors = 0.0;
    for t in 0..t_len {
        let sf = &state.sigma_f[t];
        let mut second = sf.trace();
        for k in 0..rr {
            second += state.mu_f[(t, k)].powi(2);
        }
        factors += -0.5 * r * log_2pi - 0.5 * second + gaussian_entropy(sf, r);
    }

    ElboTerms {
        likelihood_and_weights: lik,
        scales,
        loadings,
        precisions,
        factors,
    }
}

fn gaussian_entropy(cov: &DMatrix<f64>, dim: f64) -> f64 {
    let log_det = spd_log_det(cov).unwrap_or(f64::NEG_INFINITY);
    0.5 * dim * (1.0 + (2.0 * PI).ln()) + 0.5 * log_det
}
