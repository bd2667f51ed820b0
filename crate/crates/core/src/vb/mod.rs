//! Coordinate-ascent variational Bayes for the quantile factor model.
//!
//! Each sweep updates, in order, the loadings, their precisions, the
//! mixture weights, the scales and the factors, then evaluates the ELBO.
//! Iteration stops when successive bounds differ by at most the tolerance.

mod elbo;
mod rotate;
mod state;
mod updates;

pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use state::{
    informed_state, init_state, VariationalState, INFORMED_VARIANCE, INIT_VARIANCE,
    INTERCEPT_PRECISION,
};
pub use updates::{
    sigma_shape, update_alpha, update_factors, update_loadings, update_sigma, update_z, Priors,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{QfaError, Result};
use crate::mixture::{GammaParams, GigHalf, InvGammaParams};
use crate::panel::{EstimatorConfig, Panel, QuantileSpec};

/// Reference value the first sweep's bound is compared against.
pub const INITIAL_ELBO: f64 = -1000.0;

/// Converged output of one variational fit.
///
/// With an intercept, `loading_mean` has one extra trailing column holding
/// the intercepts and `loading_cov` blocks are `(r+1)×(r+1)`; see
/// [`QfaFit::loadings`] and [`QfaFit::intercepts`].
#[derive(Debug, Clone, PartialEq)]
pub struct QfaFit {
    pub tau: f64,
    pub factor_mean: DMatrix<f64>,
    pub factor_cov: Vec<DMatrix<f64>>,
    pub loading_mean: DMatrix<f64>,
    pub loading_cov: Vec<DMatrix<f64>>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    pub sigma_post: Vec<InvGammaParams>,
    pub alpha_post: Vec<GammaParams>,
    pub z_post: Vec<GigHalf>,
}

impl QfaFit {
    pub fn elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn n_factors(&self) -> usize {
        self.factor_mean.ncols()
    }

    /// Posterior mean loadings on the factors, n×r.
    pub fn loadings(&self) -> DMatrix<f64> {
        self.loading_mean.columns(0, self.n_factors()).into_owned()
    }

    /// Posterior mean intercepts, if the model has them.
    pub fn intercepts(&self) -> Option<DVector<f64>> {
        (self.loading_mean.ncols() > self.n_factors())
            .then(|| self.loading_mean.column(self.n_factors()).into_owned())
    }

    /// Fitted quantile surface, T×n.
    pub fn fitted(&self) -> DMatrix<f64> {
        let mut out = &self.factor_mean * self.loadings().transpose();
        if let Some(mu) = self.intercepts() {
            for mut row in out.row_iter_mut() {
                row += mu.transpose();
            }
        }
        out
    }

    /// Rebuild the variational state the fit ended in.
    pub fn state(&self) -> VariationalState {
        VariationalState {
            mu_lambda: self.loading_mean.clone(),
            sigma_lambda: self.loading_cov.clone(),
            mu_f: self.factor_mean.clone(),
            sigma_f: self.factor_cov.clone(),
            alpha: self.alpha_post.clone(),
            sigma: self.sigma_post.clone(),
            z: self.z_post.clone(),
            elbo: self.elbo(),
        }
    }

    /// Fraction of `x_it - E[lambda_i]' E[f_t]` that are negative.
    pub fn share_below(&self, x: &DMatrix<f64>) -> f64 {
        let fitted = self.fitted();
        let below = x
            .iter()
            .zip(fitted.iter())
            .filter(|(a, b)| *a - *b < 0.0)
            .count();
        below as f64 / x.len() as f64
    }
}

/// One full coordinate sweep. Numerical failures carry the iteration index.
pub fn sweep(
    state: &mut VariationalState,
    x: &DMatrix<f64>,
    q: &QuantileSpec,
    config: &EstimatorConfig,
    iteration: usize,
) -> Result<()> {
    let priors = Priors {
        a0: config.a0,
        b0: config.b0,
        r0: config.r0,
        s0: config.s0,
    };
    let scheme = config.scheme;
    update_loadings(state, x, q, scheme).map_err(|e| e.at_iteration(iteration))?;
    update_alpha(state, &priors);
    updates::update_z_and_sigma(state, x, q, &priors, scheme)
        .map_err(|e| e.at_iteration(iteration))?;
    update_factors(state, x, q, scheme).map_err(|e| e.at_iteration(iteration))?;
    if config.rotate {
        rotate::rotate(state, config.a0, config.b0);
        update_alpha(state, &priors);
    }
    Ok(())
}

/// Fit the model at a single quantile level.
///
/// Runs from two starting points, [`init_state`] and [`informed_state`], and
/// keeps the one reaching the higher bound (the first on ties).
pub fn fit(panel: &Panel, config: &EstimatorConfig, q: &QuantileSpec) -> Result<QfaFit> {
    if q.tau() <= 0.01 || q.tau() >= 0.99 {
        log::warn!(
            "quantile level {} leaves few effective observations in the tail",
            q.tau()
        );
    }
    let (plain, informed) = rayon::join(
        || init_state(panel, config, q).and_then(|s| run_from(s, panel, config, q)),
        || informed_state(panel, config, q).and_then(|s| run_from(s, panel, config, q)),
    );
    match (plain, informed) {
        (Ok(a), Ok(b)) => Ok(if b.elbo() > a.elbo() { b } else { a }),
        (Ok(a), Err(e)) | (Err(e), Ok(a)) => {
            log::debug!("one starting point failed: {e}");
            Ok(a)
        }
        (Err(e), Err(_)) => Err(e),
    }
}

/// Iterate sweeps from `state` until the bound settles or the cap is hit.
pub fn run_from(
    mut state: VariationalState,
    panel: &Panel,
    config: &EstimatorConfig,
    q: &QuantileSpec,
) -> Result<QfaFit> {
    let x = panel.values();
    let mut trace = Vec::new();
    let mut previous = INITIAL_ELBO;
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        sweep(&mut state, x, q, config, iteration)?;
        let elbo = compute_elbo(&state, x, q, config);
        if !elbo.is_finite() {
            return Err(QfaError::numerical(
                "elbo",
                iteration,
                format!("bound is {elbo}"),
            ));
        }
        state.elbo = elbo;
        trace.push(elbo);
        if (elbo - previous).abs() <= config.tolerance {
            converged = true;
            break;
        }
        previous = elbo;
    }
    orient(&mut state);
    Ok(QfaFit {
        tau: q.tau(),
        iters_used: trace.len(),
        elbo_trace: trace,
        converged,
        factor_mean: state.mu_f,
        factor_cov: state.sigma_f,
        loading_mean: state.mu_lambda,
        loading_cov: state.sigma_lambda,
        sigma_post: state.sigma,
        alpha_post: state.alpha,
        z_post: state.z,
    })
}

/// Apply the loading sign convention to the posterior means and carry the
/// flip through the covariance blocks. Leaves the ELBO unchanged.
fn orient(state: &mut VariationalState) {
    let r = state.n_factors();
    let p = state.n_loadings();
    let flips: Vec<bool> = (0..p)
        .map(|k| {
            if k >= r {
                return false;
            }
            state
                .mu_lambda
                .column(k)
                .iter()
                .find(|v| v.abs() > 1e-14)
                .is_some_and(|v| *v < 0.0)
        })
        .collect();
    if !flips.iter().any(|f| *f) {
        return;
    }
    for (k, &flip) in flips.iter().enumerate() {
        if flip {
            state.mu_lambda.column_mut(k).neg_mut();
            state.mu_f.column_mut(k).neg_mut();
        }
    }
    let flip_block = |m: &mut DMatrix<f64>| {
        let d = m.nrows();
        for j in 0..d {
            for k in 0..d {
                if flips[j] != flips[k] {
                    m[(j, k)] = -m[(j, k)];
                }
            }
        }
    };
    state.sigma_lambda.iter_mut().for_each(flip_block);
    state.sigma_f.iter_mut().for_each(flip_block);
}

/// Fit every configured quantile level independently. Levels run in
/// parallel; a failure at one level does not affect the others.
pub fn fit_all_quantiles(
    panel: &Panel,
    config: &EstimatorConfig,
) -> Result<Vec<(f64, Result<QfaFit>)>> {
    if config.quantiles.is_empty() {
        return Err(QfaError::Config("no quantile levels requested".into()));
    }
    config.validate(panel.periods(), panel.series())?;
    Ok(config
        .quantiles
        .par_iter()
        .map(|q| (q.tau(), fit(panel, config, q)))
        .collect())
}
