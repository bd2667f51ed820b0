//! Panel data, quantile levels and estimator configuration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QfaError, Result};

/// A balanced T×n panel: rows are time periods, columns are series.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    time_labels: Vec<String>,
    series_labels: Vec<String>,
}

impl Panel {
    pub fn new(
        values: DMatrix<f64>,
        time_labels: Vec<String>,
        series_labels: Vec<String>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if t < 2 || n < 2 {
            return Err(QfaError::Input(format!(
                "panel must have at least 2 periods and 2 series, got {t}x{n}"
            )));
        }
        if time_labels.len() != t {
            return Err(QfaError::Input(format!(
                "{} time labels for {t} rows",
                time_labels.len()
            )));
        }
        if series_labels.len() != n {
            return Err(QfaError::Input(format!(
                "{} series labels for {n} columns",
                series_labels.len()
            )));
        }
        for (j, col) in values.column_iter().enumerate() {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(QfaError::Input(format!(
                    "non-finite value at row {}, series `{}`",
                    row + 1,
                    series_labels[j]
                )));
            }
        }
        Ok(Self {
            values,
            time_labels,
            series_labels,
        })
    }

    /// Build a panel with generated labels (`t1..tT`, `x1..xn`).
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (t, n) = values.shape();
        let time_labels = (1..=t).map(|i| format!("t{i}")).collect();
        let series_labels = (1..=n).map(|i| format!("x{i}")).collect();
        Self::new(values, time_labels, series_labels)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn series(&self) -> usize {
        self.values.ncols()
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn series_labels(&self) -> &[String] {
        &self.series_labels
    }

    /// Same labels, new values. Used by transformations that keep the shape.
    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, self.time_labels.clone(), self.series_labels.clone())
    }
}

/// A quantile level together with its location-scale mixture constants.
///
/// The asymmetric Laplace error is written as `kappa1 * z + kappa2 * sqrt(sigma * z) * v`
/// with `z ~ Exp(mean sigma)` and `v ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    tau: f64,
    kappa1: f64,
    kappa2: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(QfaError::Domain(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )));
        }
        let spread = tau * (1.0 - tau);
        Ok(Self {
            tau,
            kappa1: (1.0 - 2.0 * tau) / spread,
            kappa2: (2.0 / spread).sqrt(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn kappa2_sq(&self) -> f64 {
        self.kappa2 * self.kappa2
    }

    /// `check_loss(u, tau)` for this level.
    pub fn check_loss(&self, u: f64) -> f64 {
        check_loss_unchecked(u, self.tau)
    }
}

/// Convenience constructor mirroring [`QuantileSpec::new`].
pub fn make_quantile_spec(tau: f64) -> Result<QuantileSpec> {
    QuantileSpec::new(tau)
}

/// The check function `u * (tau - 1{u <= 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QfaError::Domain(format!(
            "quantile level must lie in (0, 1), got {tau}"
        )));
    }
    Ok(check_loss_unchecked(u, tau))
}

#[inline]
pub(crate) fn check_loss_unchecked(u: f64, tau: f64) -> f64 {
    if u <= 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Which form of the coordinate updates the variational engine applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateScheme {
    /// Full mean-field coordinate ascent: second moments of the other
    /// blocks enter every update and the scale shape is `r0 + 3T/2`.
    /// Each step maximizes the ELBO exactly, so the bound never decreases.
    #[default]
    Exact,
    /// The plug-in variant: outer products of posterior means stand in for
    /// second moments where the printed recursions use them, and the
    /// scale shape is `r0 + 3T`.
    Plugin,
}

/// Settings shared by every quantile level of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub n_factors: usize,
    pub quantiles: Vec<QuantileSpec>,
    pub tolerance: f64,
    pub max_iters: usize,
    pub a0: f64,
    pub b0: f64,
    pub r0: f64,
    pub s0: f64,
    pub seed: u64,
    pub scheme: UpdateScheme,
    /// Apply the ELBO-maximizing linear reparametrization of the factor
    /// space after every sweep.
    pub rotate: bool,
    /// Give every series its own quantile-specific intercept, estimated
    /// alongside the loadings under a fixed vague Gaussian prior.
    pub intercept: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_factors: 1,
            quantiles: Vec::new(),
            tolerance: 1e-6,
            max_iters: 300,
            a0: 1e-4,
            b0: 1e-4,
            r0: 0.01,
            s0: 0.01,
            seed: 0,
            scheme: UpdateScheme::Exact,
            rotate: true,
            intercept: true,
        }
    }
}

impl EstimatorConfig {
    pub fn new(n_factors: usize, taus: &[f64]) -> Result<Self> {
        let quantiles = taus
            .iter()
            .map(|&t| QuantileSpec::new(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_factors,
            quantiles,
            ..Self::default()
        })
    }

    /// Check the configuration against a panel of the given shape.
    pub fn validate(&self, periods: usize, series: usize) -> Result<()> {
        if self.n_factors == 0 {
            return Err(QfaError::Config(
                "number of factors must be positive".into(),
            ));
        }
        if self.n_factors >= series {
            return Err(QfaError::Config(format!(
                "number of factors ({}) must be smaller than the number of series ({series})",
                self.n_factors
            )));
        }
        if self.n_factors > periods {
            return Err(QfaError::Config(format!(
                "number of factors ({}) exceeds the number of periods ({periods})",
                self.n_factors
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(QfaError::Config("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(QfaError::Config("max_iters must be positive".into()));
        }
        for (name, v) in [
            ("a0", self.a0),
            ("b0", self.b0),
            ("r0", self.r0),
            ("s0", self.s0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QfaError::Config(format!(
                    "prior {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}
