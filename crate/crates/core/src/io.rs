//! CSV panels, numeric formatting and serialized run reports.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QfaError, Result};
use crate::panel::Panel;
use crate::select::SelectionReport;
use crate::sim::{CellSummary, ErrorFamily, Estimator, MonteCarloConfig, SimResult};

/// Version of the `report.json` layout.
pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";

/// Version of the Monte Carlo summary layout.
pub const SUMMARY_SCHEMA_VERSION: &str = "1.0.0";

/// Read a panel: header row (time label name, then series labels), one row
/// per period with the time label first. Every cell must be a number.
pub fn read_panel_csv(path: &Path) -> Result<Panel> {
    let file = std::fs::File::open(path)
        .map_err(|e| QfaError::Input(format!("cannot open `{}`: {e}", path.display())))?;
    read_panel(file)
}

/// [`read_panel_csv`] on any reader.
pub fn read_panel<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| QfaError::Input(format!("unreadable header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(QfaError::Input(
            "header needs a time column and at least one series".into(),
        ));
    }
    let series: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = series.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = k + 2;
        let rec = rec.map_err(|e| QfaError::Input(format!("row {row}: {e}")))?;
        if rec.len() != n + 1 {
            return Err(QfaError::Input(format!(
                "row {row}: expected {} cells, found {}",
                n + 1,
                rec.len()
            )));
        }
        times.push(rec[0].to_string());
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v = parse_number(cell).ok_or_else(|| {
                QfaError::Input(format!(
                    "row {row}, column {} (`{}`): `{cell}` is not a number; missing values are not supported",
                    j + 1,
                    series[j - 1]
                ))
            })?;
            values.push(v);
        }
    }
    if times.is_empty() {
        return Err(QfaError::Input("panel has no data rows".into()));
    }
    let t = times.len();
    let m = DMatrix::from_row_slice(t, n, &values);
    Panel::new(m, times, series)
}

fn parse_number(cell: &str) -> Option<f64> {
    let v: f64 = cell.parse().ok()?;
    v.is_finite().then_some(v)
}

/// C `printf("%.12g")` formatting.
pub fn format_g12(x: f64) -> String {
    format_g(x, 12)
}

fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Write a labelled matrix: header `corner, columns...`, then one row per
/// label. Numbers use [`format_g12`].
pub fn write_matrix<W: Write>(
    writer: W,
    corner: &str,
    columns: &[String],
    rows: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    if columns.len() != m.ncols() || rows.len() != m.nrows() {
        return Err(QfaError::Input(format!(
            "labels ({}x{}) do not match the matrix ({}x{})",
            rows.len(),
            columns.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec![corner.to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in rows.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|v| format_g12(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a panel in the layout [`read_panel_csv`] accepts.
pub fn write_panel<W: Write>(writer: W, panel: &Panel, time_name: &str) -> Result<()> {
    write_matrix(
        writer,
        time_name,
        panel.series_labels(),
        panel.time_labels(),
        panel.values(),
    )
}

/// Column names `f1..fr`.
pub fn factor_names(r: usize) -> Vec<String> {
    (1..=r).map(|k| format!("f{k}")).collect()
}

/// Per-fit entry of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Quantile level; `None` for principal components.
    pub tau: Option<f64>,
    pub estimator: String,
    pub n_factors: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Final evidence lower bound (variational fits only).
    pub elbo: Option<f64>,
    /// Bound after every sweep (variational fits only).
    pub elbo_trace: Vec<f64>,
    /// Final total check loss (check-loss fits only).
    pub check_loss: Option<f64>,
    pub factors_file: String,
    pub loadings_file: String,
    pub intercepts_file: Option<String>,
    pub selection: Option<SelectionReport>,
}

/// Settings that, with the input file, reproduce an extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: String,
    pub periods: usize,
    pub series: usize,
    pub estimator: String,
    pub quantiles: Vec<f64>,
    pub factors: Option<usize>,
    pub select_r: Option<Vec<usize>>,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub standardize: bool,
    pub intercept: bool,
    pub scheme: String,
    pub gibbs_draws: Option<usize>,
    pub gibbs_burn_in: Option<usize>,
    pub gibbs_thin: Option<usize>,
}

/// Wall-clock timings; only recorded on request since they break
/// byte-for-byte reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub fit_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub software: Software,
    pub seed: u64,
    pub config: RunConfig,
    pub fits: Vec<FitSummary>,
    pub warnings: Vec<String>,
    pub timings: Option<Timings>,
}

/// Write `value` as pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut writer: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// One row per replication: identifiers, then one trace R² column per
/// estimator and level (`r2_<estimator>` or `r2_<estimator>_tau<level>`),
/// left empty when the fit failed.
pub fn write_replications<W: Write>(writer: W, result: &SimResult) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<String> = ["family", "T", "n", "r", "snr", "rep", "seed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(first) = result.replications.first() {
        header.extend(
            first
                .scores
                .iter()
                .map(|s| score_column(s.estimator.name(), s.tau)),
        );
    }
    w.write_record(&header)?;
    for rep in &result.replications {
        let c = &rep.cell;
        let mut rec = vec![
            c.family.to_string(),
            c.periods.to_string(),
            c.series.to_string(),
            c.factors.to_string(),
            c.snr_target.map(format_g12).unwrap_or_default(),
            rep.rep.to_string(),
            rep.seed.to_string(),
        ];
        rec.extend(
            rep.scores
                .iter()
                .map(|s| s.trace_r2.map(format_g12).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn score_column(estimator: &str, tau: Option<f64>) -> String {
    match tau {
        Some(t) => format!("r2_{estimator}_tau{t}"),
        None => format!("r2_{estimator}"),
    }
}

/// Settings of a Monte Carlo study, echoed into its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub families: Vec<ErrorFamily>,
    pub periods: Vec<usize>,
    pub series: Vec<usize>,
    pub factors: usize,
    pub snr_target: Option<f64>,
    pub taus: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub standardize: bool,
    pub tol: f64,
    pub max_iters: usize,
    pub gibbs_draws: Option<usize>,
    pub gibbs_burn_in: Option<usize>,
    pub gibbs_thin: Option<usize>,
}

impl StudyConfig {
    pub fn from_config(cfg: &MonteCarloConfig) -> Self {
        let gibbs = cfg.estimators.contains(&Estimator::Gibbs);
        Self {
            families: cfg.families.clone(),
            periods: cfg.periods.clone(),
            series: cfg.series.clone(),
            factors: cfg.factors,
            snr_target: cfg.snr_target,
            taus: cfg.taus.clone(),
            estimators: cfg.estimators.clone(),
            reps: cfg.reps,
            standardize: cfg.standardize,
            tol: cfg.estimator.tolerance,
            max_iters: cfg.estimator.max_iters,
            gibbs_draws: gibbs.then_some(cfg.gibbs.n_draws),
            gibbs_burn_in: gibbs.then_some(cfg.gibbs.burn_in),
            gibbs_thin: gibbs.then_some(cfg.gibbs.thin),
        }
    }
}

/// Monte Carlo summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema_version: String,
    pub software: Software,
    pub seed: u64,
    pub config: StudyConfig,
    pub cells: Vec<CellSummary>,
    /// Distinct failure messages with their counts.
    pub failures: Vec<(String, usize)>,
}

impl SimSummary {
    pub fn new(result: &SimResult, cfg: &MonteCarloConfig, software: Software) -> Self {
        let mut failures: Vec<(String, usize)> = Vec::new();
        for e in result
            .replications
            .iter()
            .flat_map(|r| r.scores.iter().filter_map(|s| s.error.as_ref()))
        {
            match failures.iter_mut().find(|(m, _)| m == e) {
                Some((_, c)) => *c += 1,
                None => failures.push((e.clone(), 1)),
            }
        }
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION.into(),
            software,
            seed: cfg.seed,
            config: StudyConfig::from_config(cfg),
            cells: result.summary.clone(),
            failures,
        }
    }
}
