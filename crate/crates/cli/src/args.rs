//! Command-line definitions and value parsers.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfa_core::sim::{ErrorFamily, Estimator};

#[derive(Debug, Parser)]
#[command(
    name = "qfa",
    version,
    about = "Quantile factor analysis by variational Bayes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate factors at one or more quantile levels from a CSV panel.
    Extract(ExtractArgs),
    /// Run a Monte Carlo study on simulated panels.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Vbqfa,
    Cdg,
    Pca,
    Gibbs,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Vbqfa => Estimator::Vbqfa,
            EstimatorArg::Cdg => Estimator::Cdg,
            EstimatorArg::Pca => Estimator::Pca,
            EstimatorArg::Gibbs => Estimator::Gibbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Exact,
    Plugin,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Convergence tolerance on the absolute change of the bound.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Estimate on the raw panel instead of standardizing each series.
    #[arg(long)]
    pub no_standardize: bool,
    /// Form of the variational updates.
    #[arg(long, value_enum, default_value_t = SchemeArg::Exact)]
    pub scheme: SchemeArg,
    /// Drop the per-series quantile intercepts.
    #[arg(long)]
    pub no_intercept: bool,
    /// Gibbs sweeps, burn-in included.
    #[arg(long, default_value_t = 5000)]
    pub gibbs_draws: usize,
    #[arg(long, default_value_t = 1000)]
    pub gibbs_burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub gibbs_thin: usize,
    /// Directory receiving the output files (created if missing).
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// CSV panel: header row, time labels in the first column.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
    pub quantiles: Vec<f64>,
    /// Number of factors [default: 3].
    #[arg(long, conflicts_with = "select_r")]
    pub factors: Option<usize>,
    /// Choose the number of factors by the bound over a range such as
    /// `1..8` (inclusive) or a list such as `2,4,6`.
    #[arg(long, value_parser = parse_candidates)]
    pub select_r: Option<Candidates>,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Vbqfa)]
    pub estimator: EstimatorArg,
    /// Record wall-clock timings in the report (makes it run-dependent).
    #[arg(long)]
    pub record_timings: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Error families, as a range `M1..M6` or a list `M1,M3`.
    #[arg(long, value_parser = parse_families, default_value = "M1..M6")]
    pub families: Families,
    /// Panel sizes, e.g. `--grid T=50,100 n=50,100`.
    #[arg(long, num_args = 1.., value_parser = parse_grid_axis)]
    pub grid: Vec<GridAxis>,
    /// Use T, n in {50, 100, 200} unless `--grid` overrides an axis.
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
    pub quantiles: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [EstimatorArg::Vbqfa, EstimatorArg::Cdg, EstimatorArg::Pca])]
    pub estimators: Vec<EstimatorArg>,
    /// Population R² of the common component, or `off`.
    #[arg(long, value_parser = parse_snr, default_value = "off")]
    pub snr: Snr,
    /// True (and estimated) number of factors.
    #[arg(long, default_value_t = 3)]
    pub factors: usize,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidates(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct Families(pub Vec<ErrorFamily>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub Option<f64>);

#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    Periods(Vec<usize>),
    Series(Vec<usize>),
}

/// `a..b` (inclusive, also `a..=b`) or a comma-separated list.
fn parse_range_or_list<T: Copy + Ord>(
    s: &str,
    item: impl Fn(&str) -> Result<T, String>,
    expand: impl Fn(T, T) -> Vec<T>,
) -> Result<Vec<T>, String> {
    let s = s.trim();
    let out = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (lo, hi) = (item(a)?, item(b)?);
        if lo > hi {
            return Err(format!("empty range `{s}`"));
        }
        expand(lo, hi)
    } else {
        s.split(',')
            .map(|p| item(p.trim()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if out.is_empty() {
        return Err("no values given".into());
    }
    Ok(out)
}

pub fn parse_candidates(s: &str) -> Result<Candidates, String> {
    let item = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}"));
    parse_range_or_list(s, item, |a, b| (a..=b).collect()).map(Candidates)
}

pub fn parse_families(s: &str) -> Result<Families, String> {
    let item = |p: &str| p.parse::<ErrorFamily>().map_err(|e| e.to_string());
    parse_range_or_list(s, item, |a, b| {
        ErrorFamily::ALL
            .into_iter()
            .filter(|f| *f >= a && *f <= b)
            .collect()
    })
    .map(Families)
}

pub fn parse_snr(s: &str) -> Result<Snr, String> {
    if s.trim().eq_ignore_ascii_case("off") {
        return Ok(Snr(None));
    }
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    Ok(Snr(Some(v)))
}

pub fn parse_grid_axis(s: &str) -> Result<GridAxis, String> {
    let (key, vals) = s
        .split_once('=')
        .ok_or_else(|| format!("expected `T=...` or `n=...`, got `{s}`"))?;
    let vals = vals
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match key.trim() {
        "T" => Ok(GridAxis::Periods(vals)),
        "n" | "N" => Ok(GridAxis::Series(vals)),
        other => Err(format!("unknown grid axis `{other}`; use T or n")),
    }
}
