//! Quantile factor analysis by variational Bayes.
//!
//! The crate estimates factors at chosen quantile levels of a T×n panel
//! using coordinate-ascent variational inference on an asymmetric Laplace
//! likelihood with automatic-relevance shrinkage on the loadings. Around
//! the estimator sit a Gibbs sampler for the same model, a check-loss
//! alternating estimator, principal components, ELBO-based selection of
//! the number of factors and a Monte Carlo harness.

pub mod cdg;
pub mod error;
pub mod gibbs;
pub mod io;
mod linalg;
pub mod mixture;
pub mod panel;
pub mod pca;
pub mod select;
pub mod sim;
pub mod vb;

pub use error::{QfaError, Result};
pub use io::{format_g12, read_panel_csv, RunReport};
pub use nalgebra;
pub use panel::{
    check_loss, make_quantile_spec, EstimatorConfig, Panel, QuantileSpec, UpdateScheme,
};
pub use pca::{pca_factors, standardize, PcaFit, Standardization};
pub use select::{select_r, Candidate, Selection, SelectionReport};
pub use sim::{
    generate_panel, run_monte_carlo, trace_r2, DgpConfig, ErrorFamily, Estimator, MonteCarloConfig,
    SimResult,
};
pub use vb::{fit, fit_all_quantiles, QfaFit, VariationalState};
