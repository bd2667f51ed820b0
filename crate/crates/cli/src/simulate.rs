//! `qfa simulate`: Monte Carlo study on simulated panels.

use qfa_core::gibbs::GibbsConfig;
use qfa_core::io::{write_json, write_replications, SimSummary};
use qfa_core::sim::{run_monte_carlo, MonteCarloConfig};
use qfa_core::{EstimatorConfig, UpdateScheme};

use crate::args::{GridAxis, SchemeArg, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::extract::software;
use crate::output::OutputSet;

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const DESK_SIZES: [usize; 2] = [50, 100];
const FULL_SIZES: [usize; 3] = [50, 100, 200];

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let sizes = if args.full_grid {
        &FULL_SIZES[..]
    } else {
        &DESK_SIZES[..]
    };
    let mut periods = sizes.to_vec();
    let mut series = sizes.to_vec();
    for axis in &args.grid {
        match axis {
            GridAxis::Periods(v) => periods = v.clone(),
            GridAxis::Series(v) => series = v.clone(),
        }
    }
    if args.estimators.is_empty() {
        return Err(CliError::Usage("no estimators given".into()));
    }
    let mut estimators: Vec<_> = args.estimators.iter().map(|&e| e.into()).collect();
    estimators.dedup();

    let estimator = EstimatorConfig {
        tolerance: args.fit.tol,
        max_iters: args.fit.max_iters,
        seed: args.fit.seed,
        intercept: !args.fit.no_intercept,
        scheme: match args.fit.scheme {
            SchemeArg::Exact => UpdateScheme::Exact,
            SchemeArg::Plugin => UpdateScheme::Plugin,
        },
        ..EstimatorConfig::default()
    };
    let cfg = MonteCarloConfig {
        families: args.families.0.clone(),
        periods,
        series,
        factors: args.factors,
        snr_target: args.snr.0,
        taus: args.quantiles.clone(),
        estimators,
        reps: args.reps,
        seed: args.fit.seed,
        standardize: !args.fit.no_standardize,
        estimator,
        gibbs: GibbsConfig {
            n_draws: args.fit.gibbs_draws,
            burn_in: args.fit.gibbs_burn_in,
            thin: args.fit.gibbs_thin,
            seed: args.fit.seed,
        },
        ..MonteCarloConfig::default()
    };
    let result = run_monte_carlo(&cfg)?;
    for s in result.summary.iter().filter(|s| s.flagged) {
        log::warn!(
            "{} T={} n={} {}: {} of {} replications failed",
            s.cell.family,
            s.cell.periods,
            s.cell.series,
            s.estimator,
            s.n_failed,
            s.n_ok + s.n_failed
        );
    }

    let mut files = OutputSet::new(&args.fit.output_dir)?;
    let written = files
        .write(REPLICATIONS_FILE, |w| Ok(write_replications(w, &result)?))
        .and_then(|_| {
            let summary = SimSummary::new(&result, &cfg, software());
            files.write(SUMMARY_FILE, |w| Ok(write_json(w, &summary)?))
        });
    if written.is_err() {
        files.discard();
    }
    written
}
