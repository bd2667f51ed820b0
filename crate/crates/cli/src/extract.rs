//! `qfa extract`: factors and loadings from a CSV panel.

use std::time::Instant;

use qfa_core::cdg::{cdg_fit, CdgOptions};
use qfa_core::gibbs::{gibbs_fit, GibbsConfig};
use qfa_core::io::{
    factor_names, read_panel_csv, write_json, write_matrix, FitSummary, RunConfig, RunReport,
    Software, Timings, REPORT_SCHEMA_VERSION,
};
use qfa_core::nalgebra::{DMatrix, DVector};
use qfa_core::sim::Estimator;
use qfa_core::{
    fit, pca_factors, select_r, standardize, EstimatorConfig, Panel, QuantileSpec, SelectionReport,
    UpdateScheme,
};
use rayon::prelude::*;

use crate::args::{ExtractArgs, SchemeArg};
use crate::error::{CliError, CliResult};
use crate::output::OutputSet;

/// Number of factors when neither `--factors` nor `--select-r` is given.
pub const DEFAULT_FACTORS: usize = 3;

/// Everything one estimator run contributes to the outputs.
struct FitOutput {
    tau: Option<f64>,
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
    intercepts: Option<DVector<f64>>,
    converged: bool,
    iterations: usize,
    elbo: Option<f64>,
    elbo_trace: Vec<f64>,
    check_loss: Option<f64>,
    selection: Option<SelectionReport>,
    seconds: f64,
}

impl FitOutput {
    fn stem(&self) -> String {
        match self.tau {
            Some(t) => format!("tau{t}"),
            None => "pca".into(),
        }
    }
}

pub fn run(args: &ExtractArgs) -> CliResult<()> {
    let started = Instant::now();
    let estimator = Estimator::from(args.estimator);
    let mut warnings = Vec::new();

    if args.quantiles.is_empty() {
        return Err(CliError::Usage(
            "at least one quantile level is required".into(),
        ));
    }
    let specs = args
        .quantiles
        .iter()
        .map(|&t| QuantileSpec::new(t))
        .collect::<qfa_core::Result<Vec<_>>>()?;
    if args.select_r.is_some() && estimator != Estimator::Vbqfa {
        return Err(CliError::Usage(format!(
            "--select-r uses the variational bound and is only available with vbqfa, not {estimator}"
        )));
    }
    let candidates = args.select_r.as_ref().map(|c| c.0.clone());
    let n_factors = match (&candidates, args.factors) {
        (Some(c), _) => c[0],
        (None, Some(r)) => r,
        (None, None) => DEFAULT_FACTORS,
    };

    let mut config = EstimatorConfig::new(n_factors, &args.quantiles)?;
    config.tolerance = args.fit.tol;
    config.max_iters = args.fit.max_iters;
    config.seed = args.fit.seed;
    config.intercept = !args.fit.no_intercept;
    config.scheme = match args.fit.scheme {
        SchemeArg::Exact => UpdateScheme::Exact,
        SchemeArg::Plugin => UpdateScheme::Plugin,
    };
    let gibbs = GibbsConfig {
        n_draws: args.fit.gibbs_draws,
        burn_in: args.fit.gibbs_burn_in,
        thin: args.fit.gibbs_thin,
        seed: args.fit.seed,
    };
    if estimator == Estimator::Gibbs {
        gibbs.validate()?;
    }

    let raw = read_panel_csv(&args.input)?;
    let panel = if args.fit.no_standardize {
        raw
    } else {
        standardize(&raw)?.0
    };
    if candidates.is_none() {
        config.validate(panel.periods(), panel.series())?;
        if estimator == Estimator::Cdg && n_factors >= panel.periods().min(panel.series()) {
            return Err(CliError::Usage(format!(
                "{n_factors} factors cannot be estimated from a {}x{} panel",
                panel.periods(),
                panel.series()
            )));
        }
    }

    let levels: Vec<Option<QuantileSpec>> = if estimator.is_quantile() {
        specs.iter().copied().map(Some).collect()
    } else {
        let msg = format!(
            "pca ignores quantile levels ({}); writing a single factor file",
            join(&args.quantiles)
        );
        log::warn!("{msg}");
        warnings.push(msg);
        vec![None]
    };

    let outputs = levels
        .par_iter()
        .enumerate()
        .map(|(k, q)| {
            estimate(
                estimator,
                &panel,
                &config,
                q.as_ref(),
                candidates.as_deref(),
                &GibbsConfig {
                    seed: gibbs.seed.wrapping_add(k as u64),
                    ..gibbs.clone()
                },
            )
        })
        .collect::<CliResult<Vec<_>>>()?;

    for out in &outputs {
        if !out.converged {
            let msg = format!(
                "{estimator} at {} stopped after {} iterations without converging",
                out.stem(),
                out.iterations
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut files = OutputSet::new(&args.fit.output_dir)?;
    let result = write_outputs(
        &mut files, args, estimator, &panel, &config, &gibbs, &outputs, warnings, started,
    );
    if result.is_err() {
        files.discard();
    }
    result
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn estimate(
    estimator: Estimator,
    panel: &Panel,
    config: &EstimatorConfig,
    q: Option<&QuantileSpec>,
    candidates: Option<&[usize]>,
    gibbs: &GibbsConfig,
) -> CliResult<FitOutput> {
    let started = Instant::now();
    let r = config.n_factors;
    let mut out = match (estimator, q) {
        (Estimator::Pca, _) => {
            let f = pca_factors(panel, r)?;
            FitOutput {
                tau: None,
                factors: f.factors,
                loadings: f.loadings,
                intercepts: None,
                converged: true,
                iterations: 1,
                elbo: None,
                elbo_trace: Vec::new(),
                check_loss: None,
                selection: None,
                seconds: 0.0,
            }
        }
        (Estimator::Vbqfa, Some(q)) => {
            let (f, selection) = match candidates {
                Some(c) => {
                    let s = select_r(panel, config, q, c)?;
                    (s.fit, Some(s.report))
                }
                None => (fit(panel, config, q)?, None),
            };
            FitOutput {
                tau: Some(q.tau()),
                loadings: f.loadings(),
                intercepts: f.intercepts(),
                converged: f.converged,
                iterations: f.iters_used,
                elbo: Some(f.elbo()),
                elbo_trace: f.elbo_trace.clone(),
                factors: f.factor_mean,
                check_loss: None,
                selection,
                seconds: 0.0,
            }
        }
        (Estimator::Cdg, Some(q)) => {
            let opts = CdgOptions {
                standardize: false,
                ..CdgOptions::default()
            };
            let f = cdg_fit(panel, r, q, &opts)?;
            FitOutput {
                tau: Some(q.tau()),
                factors: f.factors,
                loadings: f.loadings,
                intercepts: None,
                converged: f.converged,
                iterations: f.iters,
                elbo: None,
                elbo_trace: Vec::new(),
                check_loss: Some(f.final_loss),
                selection: None,
                seconds: 0.0,
            }
        }
        (Estimator::Gibbs, Some(q)) => {
            let draws = gibbs_fit(panel, config, q, gibbs)?;
            let mean = draws.loading_mean();
            let intercepts = (mean.ncols() > r).then(|| mean.column(r).into_owned());
            FitOutput {
                tau: Some(q.tau()),
                factors: draws.factor_mean(),
                loadings: mean.columns(0, r).into_owned(),
                intercepts,
                converged: true,
                iterations: gibbs.n_draws,
                elbo: None,
                elbo_trace: Vec::new(),
                check_loss: None,
                selection: None,
                seconds: 0.0,
            }
        }
        (_, None) => unreachable!("quantile estimators always get a level"),
    };
    out.seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    files: &mut OutputSet,
    args: &ExtractArgs,
    estimator: Estimator,
    panel: &Panel,
    config: &EstimatorConfig,
    gibbs: &GibbsConfig,
    outputs: &[FitOutput],
    warnings: Vec<String>,
    started: Instant,
) -> CliResult<()> {
    let mut fits = Vec::with_capacity(outputs.len());
    for out in outputs {
        let stem = out.stem();
        let r = out.factors.ncols();
        let factors_file = format!("factors_{stem}.csv");
        files.write(&factors_file, |w| {
            Ok(write_matrix(
                w,
                "time",
                &factor_names(r),
                panel.time_labels(),
                &out.factors,
            )?)
        })?;
        let loadings_file = format!("loadings_{stem}.csv");
        files.write(&loadings_file, |w| {
            Ok(write_matrix(
                w,
                "series",
                &factor_names(r),
                panel.series_labels(),
                &out.loadings,
            )?)
        })?;
        let intercepts_file = match &out.intercepts {
            Some(mu) => {
                let name = format!("intercepts_{stem}.csv");
                let m = DMatrix::from_column_slice(mu.len(), 1, mu.as_slice());
                files.write(&name, |w| {
                    Ok(write_matrix(
                        w,
                        "series",
                        &["intercept".into()],
                        panel.series_labels(),
                        &m,
                    )?)
                })?;
                Some(name)
            }
            None => None,
        };
        fits.push(FitSummary {
            tau: out.tau,
            estimator: estimator.to_string(),
            n_factors: r,
            converged: out.converged,
            iterations: out.iterations,
            elbo: out.elbo,
            elbo_trace: out.elbo_trace.clone(),
            check_loss: out.check_loss,
            factors_file,
            loadings_file,
            intercepts_file,
            selection: out.selection.clone(),
        });
    }

    let uses_gibbs = estimator == Estimator::Gibbs;
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        software: software(),
        seed: args.fit.seed,
        config: RunConfig {
            input: args.input.display().to_string(),
            periods: panel.periods(),
            series: panel.series(),
            estimator: estimator.to_string(),
            quantiles: args.quantiles.clone(),
            factors: args.select_r.is_none().then_some(config.n_factors),
            select_r: args.select_r.as_ref().map(|c| c.0.clone()),
            tol: config.tolerance,
            max_iters: config.max_iters,
            seed: args.fit.seed,
            standardize: !args.fit.no_standardize,
            intercept: config.intercept,
            scheme: match config.scheme {
                UpdateScheme::Exact => "exact".into(),
                UpdateScheme::Plugin => "plugin".into(),
            },
            gibbs_draws: uses_gibbs.then_some(gibbs.n_draws),
            gibbs_burn_in: uses_gibbs.then_some(gibbs.burn_in),
            gibbs_thin: uses_gibbs.then_some(gibbs.thin),
        },
        fits,
        warnings,
        timings: args.record_timings.then(|| Timings {
            total_seconds: started.elapsed().as_secs_f64(),
            fit_seconds: outputs.iter().map(|o| o.seconds).collect(),
        }),
    };
    files.write("report.json", |w| Ok(write_json(w, &report)?))
}

pub fn software() -> Software {
    Software {
        name: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
    }
}
