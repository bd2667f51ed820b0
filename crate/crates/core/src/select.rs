//! Choosing the number of factors by the evidence lower bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QfaError, Result};
use crate::panel::{EstimatorConfig, Panel, QuantileSpec};
use crate::vb::{fit, QfaFit};

/// Outcome for one candidate number of factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub r: usize,
    /// Final bound; `None` when the fit failed.
    pub elbo: Option<f64>,
    pub converged: bool,
    pub iters: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tau: f64,
    pub candidates: Vec<Candidate>,
    pub chosen_r: usize,
    /// Bound after every sweep, one list per candidate (empty on failure).
    pub elbo_traces: Vec<Vec<f64>>,
}

/// The selected fit and how it was chosen.
#[derive(Debug, Clone)]
pub struct Selection {
    pub report: SelectionReport,
    pub fit: QfaFit,
}

/// Fit every candidate independently and keep the one with the highest
/// final bound; ties go to the smaller `r`. Failed candidates are reported
/// and skipped; if all fail the first failure is returned.
pub fn select_r(
    panel: &Panel,
    config: &EstimatorConfig,
    q: &QuantileSpec,
    r_candidates: &[usize],
) -> Result<Selection> {
    if r_candidates.is_empty() {
        return Err(QfaError::Config("no candidate numbers of factors".into()));
    }
    let mut rs = r_candidates.to_vec();
    rs.sort_unstable();
    rs.dedup();
    for &r in &rs {
        let mut c = config.clone();
        c.n_factors = r;
        c.validate(panel.periods(), panel.series())?;
    }

    let fits: Vec<(usize, Result<QfaFit>)> = rs
        .par_iter()
        .map(|&r| {
            let mut c = config.clone();
            c.n_factors = r;
            (r, fit(panel, &c, q))
        })
        .collect();

    let mut candidates = Vec::with_capacity(fits.len());
    let mut traces = Vec::with_capacity(fits.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, (r, res)) in fits.iter().enumerate() {
        match res {
            Ok(f) => {
                let elbo = f.elbo();
                if best.is_none_or(|(_, b)| elbo > b) {
                    best = Some((idx, elbo));
                }
                candidates.push(Candidate {
                    r: *r,
                    elbo: Some(elbo),
                    converged: f.converged,
                    iters: f.iters_used,
                    error: None,
                });
                traces.push(f.elbo_trace.clone());
            }
            Err(e) => {
                log::warn!("candidate r = {r} failed: {e}");
                candidates.push(Candidate {
                    r: *r,
                    elbo: None,
                    converged: false,
                    iters: 0,
                    error: Some(e.to_string()),
                });
                traces.push(Vec::new());
            }
        }
    }

    let Some((idx, _)) = best else {
        let (_, first) = fits.into_iter().next().expect("nonempty");
        return Err(first.expect_err("every candidate failed"));
    };
    let chosen = fits
        .into_iter()
        .nth(idx)
        .and_then(|(_, f)| f.ok())
        .expect("best candidate succeeded");
    Ok(Selection {
        report: SelectionReport {
            tau: q.tau(),
            chosen_r: chosen.n_factors(),
            candidates,
            elbo_traces: traces,
        },
        fit: chosen,
    })
}
