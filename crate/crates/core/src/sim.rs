//! Synthetic panels, trace R² scoring and the Monte Carlo driver.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::cdg::{cdg_fit, CdgOptions};
use crate::error::{QfaError, Result};
use crate::gibbs::{gibbs_fit, GibbsConfig};
use crate::panel::{EstimatorConfig, Panel, QuantileSpec};
use crate::pca::{pca_factors, standardize};
use crate::vb::fit;

/// Idiosyncratic error distributions for the simulated panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorFamily {
    /// Student t with 3 degrees of freedom.
    M1,
    /// 2/3 N(0, 1) + 1/3 N(0, 0.1²).
    M2,
    /// 1/10 N(0, 1) + 9/10 N(0, 0.1²).
    M3,
    /// 1/2 N(-1, (2/3)²) + 1/2 N(1, (2/3)²).
    M4,
    /// 1/2 N(-3/2, (1/2)²) + 1/2 N(3/2, (1/2)²).
    M5,
    /// 3/4 N(-0.43, 1) + 1/4 N(1.07, (1/3)²).
    M6,
}

/// Components `(weight, mean, sd)` of a normal mixture.
type Mixture = &'static [(f64, f64, f64)];

impl ErrorFamily {
    pub const ALL: [ErrorFamily; 6] = [
        ErrorFamily::M1,
        ErrorFamily::M2,
        ErrorFamily::M3,
        ErrorFamily::M4,
        ErrorFamily::M5,
        ErrorFamily::M6,
    ];

    fn components(self) -> Option<Mixture> {
        match self {
            ErrorFamily::M1 => None,
            ErrorFamily::M2 => Some(&[(2.0 / 3.0, 0.0, 1.0), (1.0 / 3.0, 0.0, 0.1)]),
            ErrorFamily::M3 => Some(&[(0.1, 0.0, 1.0), (0.9, 0.0, 0.1)]),
            ErrorFamily::M4 => Some(&[(0.5, -1.0, 2.0 / 3.0), (0.5, 1.0, 2.0 / 3.0)]),
            ErrorFamily::M5 => Some(&[(0.5, -1.5, 0.5), (0.5, 1.5, 0.5)]),
            ErrorFamily::M6 => Some(&[(0.75, -0.43, 1.0), (0.25, 1.07, 1.0 / 3.0)]),
        }
    }

    pub fn mean(self) -> f64 {
        match self.components() {
            None => 0.0,
            Some(c) => c.iter().map(|(w, m, _)| w * m).sum(),
        }
    }

    pub fn variance(self) -> f64 {
        match self.components() {
            None => 3.0,
            Some(c) => {
                let second: f64 = c.iter().map(|(w, m, s)| w * (s * s + m * m)).sum();
                second - self.mean().powi(2)
            }
        }
    }
}

impl fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ErrorFamily {
    type Err = QfaError;

    fn from_str(s: &str) -> Result<Self> {
        ErrorFamily::ALL
            .iter()
            .copied()
            .find(|f| f.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| QfaError::Config(format!("unknown error family `{s}`")))
    }
}

/// One draw of the idiosyncratic error.
pub fn draw_error<R: Rng + ?Sized>(family: ErrorFamily, rng: &mut R) -> f64 {
    match family.components() {
        None => StudentT::new(3.0).expect("valid dof").sample(rng),
        Some(comps) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = comps[comps.len() - 1];
            for c in comps {
                acc += c.0;
                if u < acc {
                    chosen = *c;
                    break;
                }
            }
            let z: f64 = StandardNormal.sample(rng);
            chosen.1 + chosen.2 * z
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub periods: usize,
    pub series: usize,
    pub factors: usize,
    pub ar_coef: f64,
    pub error_family: ErrorFamily,
    /// Population share of variance explained by the common component.
    pub snr_target: Option<f64>,
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(periods: usize, series: usize, error_family: ErrorFamily, seed: u64) -> Self {
        Self {
            periods,
            series,
            factors: 3,
            ar_coef: 0.8,
            error_family,
            snr_target: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ar_coef.abs() >= 1.0 {
            return Err(QfaError::Config(format!(
                "AR coefficient must be inside (-1, 1), got {}",
                self.ar_coef
            )));
        }
        if self.periods < 2 || self.series < 2 || self.factors == 0 {
            return Err(QfaError::Config(
                "panel must be at least 2x2 with one factor".into(),
            ));
        }
        if let Some(s) = self.snr_target {
            if !(s > 0.0 && s < 1.0) {
                return Err(QfaError::Config(format!(
                    "SNR target must lie in (0, 1), got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Population variance of one entry of the unscaled common component.
    pub fn common_variance(&self) -> f64 {
        self.factors as f64 / (1.0 - self.ar_coef * self.ar_coef)
    }

    /// Multiplier on the common component that hits the SNR target.
    pub fn signal_scale(&self) -> f64 {
        match self.snr_target {
            None => 1.0,
            Some(s) => {
                (s * self.error_family.variance() / ((1.0 - s) * self.common_variance())).sqrt()
            }
        }
    }
}

/// A generated panel with its ingredients.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: Panel,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    /// Scaled common component, T×n.
    pub common: DMatrix<f64>,
}

impl SimulatedPanel {
    /// Pooled sample share of variation due to the common component,
    /// each series centered first.
    pub fn sample_r2(&self) -> f64 {
        let x = self.panel.values();
        let noise = x - &self.common;
        let centered_ss = |m: &DMatrix<f64>| -> f64 {
            m.column_iter()
                .map(|c| {
                    let mean = c.mean();
                    c.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                })
                .sum()
        };
        let sc = centered_ss(&self.common);
        sc / (sc + centered_ss(&noise))
    }
}

/// Factor panel `x_it = c * lambda_i' f_t + u_it` with AR(1) factors
/// started from their stationary distribution.
pub fn generate_panel(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (t_len, n, r) = (cfg.periods, cfg.series, cfg.factors);
    let rho = cfg.ar_coef;
    let stationary = Normal::new(0.0, (1.0 / (1.0 - rho * rho)).sqrt()).expect("valid sd");

    let loadings = DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
    let mut factors = DMatrix::zeros(t_len, r);
    for j in 0..r {
        let mut prev: f64 = stationary.sample(&mut rng);
        for t in 0..t_len {
            let eps: f64 = StandardNormal.sample(&mut rng);
            prev = rho * prev + eps;
            factors[(t, j)] = prev;
        }
    }
    let common = &factors * loadings.transpose() * cfg.signal_scale();
    let mut values = common.clone();
    for i in 0..n {
        for t in 0..t_len {
            values[(t, i)] += draw_error(cfg.error_family, &mut rng);
        }
    }
    Ok(SimulatedPanel {
        panel: Panel::from_matrix(values)?,
        factors,
        loadings,
        common,
    })
}

/// `tr(F̂' P_F F̂) / tr(F̂' F̂)` with `P_F` the projection on the columns of `F`.
pub fn trace_r2(est_factors: &DMatrix<f64>, true_factors: &DMatrix<f64>) -> Result<f64> {
    if est_factors.nrows() != true_factors.nrows() {
        return Err(QfaError::Input(format!(
            "factor matrices have {} and {} rows",
            est_factors.nrows(),
            true_factors.nrows()
        )));
    }
    let gram = true_factors.transpose() * true_factors;
    let chol = gram
        .cholesky()
        .ok_or_else(|| QfaError::RankDeficient("true factors are collinear".into()))?;
    let cross = true_factors.transpose() * est_factors;
    // tr(F̂' F (F'F)^-1 F' F̂) = tr(C' G^-1 C) with C = F'F̂
    let solved = chol.solve(&cross);
    let num: f64 = cross.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
    let den = est_factors.norm_squared();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Estimators the Monte Carlo driver can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Vbqfa,
    Cdg,
    Pca,
    Gibbs,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Vbqfa,
        Estimator::Cdg,
        Estimator::Pca,
        Estimator::Gibbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Vbqfa => "vbqfa",
            Estimator::Cdg => "cdg",
            Estimator::Pca => "pca",
            Estimator::Gibbs => "gibbs",
        }
    }

    /// Whether the estimate depends on the quantile level.
    pub fn is_quantile(self) -> bool {
        self != Estimator::Pca
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = QfaError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .iter()
            .copied()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| QfaError::Config(format!("unknown estimator `{s}`")))
    }
}

/// Grid, estimators and replication count of a Monte Carlo study.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub families: Vec<ErrorFamily>,
    pub periods: Vec<usize>,
    pub series: Vec<usize>,
    /// True number of factors in the generated panels (also the number estimated).
    pub factors: usize,
    pub snr_target: Option<f64>,
    pub taus: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub seed: u64,
    pub standardize: bool,
    /// Settings of the variational and Gibbs fits; `n_factors` and
    /// `quantiles` are overridden per run.
    pub estimator: EstimatorConfig,
    pub gibbs: GibbsConfig,
    pub cdg: CdgOptions,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            families: ErrorFamily::ALL.to_vec(),
            periods: vec![50, 100],
            series: vec![50, 100],
            factors: 3,
            snr_target: None,
            taus: vec![0.25, 0.5, 0.75],
            estimators: vec![Estimator::Vbqfa, Estimator::Cdg, Estimator::Pca],
            reps: 100,
            seed: 0,
            standardize: true,
            estimator: EstimatorConfig::default(),
            gibbs: GibbsConfig::default(),
            cdg: CdgOptions::default(),
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(QfaError::Config(
                "at least one replication is required".into(),
            ));
        }
        if self.families.is_empty() || self.periods.is_empty() || self.series.is_empty() {
            return Err(QfaError::Config("the simulation grid is empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(QfaError::Config("no estimators requested".into()));
        }
        if self.taus.is_empty() && self.estimators.iter().any(|e| e.is_quantile()) {
            return Err(QfaError::Config("no quantile levels requested".into()));
        }
        for &tau in &self.taus {
            QuantileSpec::new(tau)?;
        }
        for cell in self.cells() {
            cell.dgp(0).validate()?;
            if self.factors >= cell.periods.min(cell.series) {
                return Err(QfaError::Config(format!(
                    "{} factors cannot be estimated from a {}x{} panel",
                    self.factors, cell.periods, cell.series
                )));
            }
        }
        if self.estimators.contains(&Estimator::Gibbs) {
            self.gibbs.validate()?;
        }
        Ok(())
    }

    /// Cells of the grid in output order: family, then T, then n.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &periods in &self.periods {
                for &series in &self.series {
                    out.push(Cell {
                        family,
                        periods,
                        series,
                        factors: self.factors,
                        snr_target: self.snr_target,
                    });
                }
            }
        }
        out
    }

    /// Estimator and level pairs scored in every replication.
    pub fn targets(&self) -> Vec<(Estimator, Option<f64>)> {
        let mut out = Vec::new();
        for &e in &self.estimators {
            if e.is_quantile() {
                out.extend(self.taus.iter().map(|&t| (e, Some(t))));
            } else {
                out.push((e, None));
            }
        }
        out
    }
}

/// One point of the simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub family: ErrorFamily,
    pub periods: usize,
    pub series: usize,
    pub factors: usize,
    pub snr_target: Option<f64>,
}

impl Cell {
    /// Seed of replication `rep`; depends only on the master seed, the cell
    /// and the replication index, so growing the grid leaves it unchanged.
    pub fn rep_seed(&self, master: u64, rep: usize) -> u64 {
        let family = ErrorFamily::ALL
            .iter()
            .position(|f| *f == self.family)
            .expect("known family") as u64;
        let mut h = splitmix64(master);
        for v in [family, self.periods as u64, self.series as u64, rep as u64] {
            h = splitmix64(h ^ v);
        }
        h
    }

    fn dgp(&self, seed: u64) -> DgpConfig {
        DgpConfig {
            factors: self.factors,
            snr_target: self.snr_target,
            ..DgpConfig::new(self.periods, self.series, self.family, seed)
        }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Score of one estimator at one level in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub estimator: Estimator,
    pub tau: Option<f64>,
    /// Trace R² against the true factors; `None` when the fit failed.
    pub trace_r2: Option<f64>,
    pub error: Option<String>,
}

/// All scores of one replication, in [`MonteCarloConfig::targets`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub cell: Cell,
    pub rep: usize,
    pub seed: u64,
    pub scores: Vec<Score>,
}

/// Aggregate over the replications of one cell for one estimator and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub estimator: Estimator,
    pub tau: Option<f64>,
    pub mean: Option<f64>,
    /// Standard error of the mean.
    pub se: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// More than 5% of replications failed.
    pub flagged: bool,
}

/// Output of [`run_monte_carlo`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub replications: Vec<Replication>,
    pub summary: Vec<CellSummary>,
}

/// Share of failed replications above which a cell is flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.05;

/// Generate every replication of every cell, fit the requested estimators
/// and score them by trace R². Estimator failures are recorded, not fatal.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<SimResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|c| (0..cfg.reps).map(move |rep| (*c, rep)))
        .collect();
    let replications = jobs
        .par_iter()
        .map(|(cell, rep)| run_replication(cfg, cell, *rep))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, &cells, &replications);
    Ok(SimResult {
        replications,
        summary,
    })
}

fn run_replication(cfg: &MonteCarloConfig, cell: &Cell, rep: usize) -> Result<Replication> {
    let seed = cell.rep_seed(cfg.seed, rep);
    let sim = generate_panel(&cell.dgp(seed))?;
    let panel = if cfg.standardize {
        standardize(&sim.panel).map(|(p, _)| p)
    } else {
        Ok(sim.panel.clone())
    };
    let scores = cfg
        .targets()
        .into_iter()
        .map(|(estimator, tau)| {
            let outcome = panel
                .as_ref()
                .map_err(|e| QfaError::Input(e.to_string()))
                .and_then(|p| estimate(cfg, estimator, tau, p, seed))
                .and_then(|f| trace_r2(&f, &sim.factors));
            match outcome {
                Ok(r2) => Score {
                    estimator,
                    tau,
                    trace_r2: Some(r2),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} rep {rep} {estimator} failed: {e}", cell.family);
                    Score {
                        estimator,
                        tau,
                        trace_r2: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(Replication {
        cell: *cell,
        rep,
        seed,
        scores,
    })
}

fn estimate(
    cfg: &MonteCarloConfig,
    estimator: Estimator,
    tau: Option<f64>,
    panel: &Panel,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let r = cfg.factors;
    let q = tau.map(QuantileSpec::new).transpose()?;
    let vb_config = || -> Result<EstimatorConfig> {
        let mut c = cfg.estimator.clone();
        c.n_factors = r;
        c.quantiles = q.into_iter().collect();
        c.seed = seed;
        c.validate(panel.periods(), panel.series())?;
        Ok(c)
    };
    let level = || q.ok_or_else(|| QfaError::Config(format!("{estimator} needs a quantile level")));
    match estimator {
        Estimator::Pca => Ok(pca_factors(panel, r)?.factors),
        Estimator::Vbqfa => Ok(fit(panel, &vb_config()?, &level()?)?.factor_mean),
        Estimator::Cdg => {
            let opts = CdgOptions {
                standardize: false,
                ..cfg.cdg.clone()
            };
            Ok(cdg_fit(panel, r, &level()?, &opts)?.factors)
        }
        Estimator::Gibbs => {
            let g = GibbsConfig {
                seed,
                ..cfg.gibbs.clone()
            };
            Ok(gibbs_fit(panel, &vb_config()?, &level()?, &g)?.factor_mean())
        }
    }
}

fn summarize(cfg: &MonteCarloConfig, cells: &[Cell], reps: &[Replication]) -> Vec<CellSummary> {
    let targets = cfg.targets();
    let mut out = Vec::with_capacity(cells.len() * targets.len());
    for (ci, cell) in cells.iter().enumerate() {
        let rows = &reps[ci * cfg.reps..(ci + 1) * cfg.reps];
        for (k, (estimator, tau)) in targets.iter().enumerate() {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.scores[k].trace_r2).collect();
            let n_ok = values.len();
            let n_failed = rows.len() - n_ok;
            let mean = (n_ok > 0).then(|| values.iter().sum::<f64>() / n_ok as f64);
            let se = mean.filter(|_| n_ok > 1).map(|m| {
                let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_ok - 1) as f64;
                (var / n_ok as f64).sqrt()
            });
            out.push(CellSummary {
                cell: *cell,
                estimator: *estimator,
                tau: *tau,
                mean,
                se,
                n_ok,
                n_failed,
                flagged: n_failed as f64 > FAILURE_FLAG_SHARE * rows.len() as f64,
            });
        }
    }
    out
}
