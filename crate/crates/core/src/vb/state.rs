use nalgebra::DMatrix;

use super::updates::sigma_shape;
use crate::error::Result;
use crate::mixture::{GammaParams, GigHalf, InvGammaParams};
use crate::panel::{EstimatorConfig, Panel, QuantileSpec};
use crate::pca::pca_factors;

/// Initial variance placed on every Gaussian block.
pub const INIT_VARIANCE: f64 = 10.0;

/// Covariance scale of the Gaussian blocks in [`informed_state`].
pub const INFORMED_VARIANCE: f64 = 0.01;

/// Fixed prior precision of the intercepts, `mu_i ~ N(0, 1e6)`. Vague on the
/// standardized scale; a shrinkage prior here would push the level into the
/// factors.
pub const INTERCEPT_PRECISION: f64 = 1e-6;

/// Parameters of the mean-field posterior for one (panel, quantile, r) fit.
///
/// With an intercept the loading blocks carry one extra trailing coordinate,
/// the loading on a constant unit regressor. Per-element blocks are stored
/// row-major: `alpha[i * r + j]` (factor loadings only), `z[i * T + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub mu_lambda: DMatrix<f64>,
    pub sigma_lambda: Vec<DMatrix<f64>>,
    pub mu_f: DMatrix<f64>,
    pub sigma_f: Vec<DMatrix<f64>>,
    pub alpha: Vec<GammaParams>,
    pub sigma: Vec<InvGammaParams>,
    pub z: Vec<GigHalf>,
    pub elbo: f64,
}

impl VariationalState {
    pub fn n_series(&self) -> usize {
        self.mu_lambda.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.mu_f.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.mu_f.ncols()
    }

    /// Loading columns: the factors plus the intercept, if any.
    pub fn n_loadings(&self) -> usize {
        self.mu_lambda.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.n_loadings() > self.n_factors()
    }

    #[inline]
    pub fn alpha_at(&self, i: usize, j: usize) -> &GammaParams {
        &self.alpha[i * self.n_factors() + j]
    }

    #[inline]
    pub fn z_at(&self, i: usize, t: usize) -> &GigHalf {
        &self.z[i * self.n_periods() + t]
    }

    /// Factor means with a trailing column of ones when there is an intercept.
    pub fn augmented_factors(&self) -> DMatrix<f64> {
        let r = self.n_factors();
        DMatrix::from_fn(self.n_periods(), self.n_loadings(), |t, k| {
            if k < r {
                self.mu_f[(t, k)]
            } else {
                1.0
            }
        })
    }

    /// Fitted quantile surface as a T×n matrix, intercepts included.
    pub fn fitted(&self) -> DMatrix<f64> {
        self.augmented_factors() * self.mu_lambda.transpose()
    }
}

/// Starting point: factor means at their principal components, loading
/// (and intercept) means at zero, every covariance block at `10 I`, precisions and scales
/// at their priors, mixture weights at GIG(1/2, 1, 1).
pub fn init_state(
    panel: &Panel,
    config: &EstimatorConfig,
    _quantile: &QuantileSpec,
) -> Result<VariationalState> {
    config.validate(panel.periods(), panel.series())?;
    let r = config.n_factors;
    let p = r + usize::from(config.intercept);
    let (t, n) = (panel.periods(), panel.series());
    let pca = pca_factors(panel, r)?;
    Ok(VariationalState {
        mu_lambda: DMatrix::zeros(n, p),
        sigma_lambda: vec![DMatrix::identity(p, p) * INIT_VARIANCE; n],
        mu_f: pca.factors,
        sigma_f: vec![DMatrix::identity(r, r) * INIT_VARIANCE; t],
        alpha: vec![
            GammaParams {
                shape: config.a0,
                rate: config.b0,
            };
            n * r
        ],
        sigma: vec![
            InvGammaParams {
                shape: config.r0,
                scale: config.s0,
            };
            n
        ],
        z: vec![GigHalf { a: 1.0, b: 1.0 }; n * t],
        elbo: f64::NEG_INFINITY,
    })
}

/// Data-calibrated starting point. Factor means at their principal
/// components; loadings at the least-squares projection on them; intercepts
/// at each series' empirical quantile; scales at the mean check loss around
/// that quantile; mixture weights at their update given those scales; tight
/// Gaussian blocks.
///
/// The default start puts every mixture weight at unit scale whatever the
/// level, so away from the median the first intercept step overshoots by
/// about `kappa1` and the loadings can collapse to zero. This start avoids it.
pub fn informed_state(
    panel: &Panel,
    config: &EstimatorConfig,
    quantile: &QuantileSpec,
) -> Result<VariationalState> {
    let mut state = init_state(panel, config, quantile)?;
    let r = config.n_factors;
    let p = state.n_loadings();
    let (t, n) = (panel.periods(), panel.series());
    let x = panel.values();
    let tau = quantile.tau();
    let k2 = quantile.kappa2_sq();
    let shape_factor = 2.0 + quantile.kappa1().powi(2) / k2;
    let shape = sigma_shape(config.r0, t, config.scheme);
    for i in 0..n {
        let col = x.column(i);
        let level = empirical_quantile(col.iter().copied().collect(), tau);
        let scale = (col
            .iter()
            .map(|v| quantile.check_loss(v - level))
            .sum::<f64>()
            / t as f64)
            .max(f64::MIN_POSITIVE.sqrt());
        for k in 0..r {
            state.mu_lambda[(i, k)] = state.mu_f.column(k).dot(&col) / t as f64;
        }
        if config.intercept {
            state.mu_lambda[(i, r)] = level;
        }
        state.sigma_lambda[i] = DMatrix::identity(p, p) * INFORMED_VARIANCE;
        state.sigma[i] = InvGammaParams {
            shape,
            scale: shape * scale,
        };
        for (s, v) in col.iter().enumerate() {
            let e = v - level;
            state.z[i * t + s] = GigHalf::clamped(shape_factor / scale, e * e / (scale * k2));
        }
    }
    for s in state.sigma_f.iter_mut() {
        *s = DMatrix::identity(r, r) * INFORMED_VARIANCE;
    }
    Ok(state)
}

/// Linearly interpolated sample quantile.
fn empirical_quantile(mut v: Vec<f64>, tau: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}
