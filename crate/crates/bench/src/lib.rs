//! Shared inputs for the benchmarks.

use qfa_core::sim::{generate_panel, DgpConfig, ErrorFamily};
use qfa_core::{standardize, Panel};

/// Standardized M1 panel with three factors.
pub fn bench_panel(periods: usize, series: usize) -> Panel {
    let sim = generate_panel(&DgpConfig::new(periods, series, ErrorFamily::M1, 2024))
        .expect("valid design");
    standardize(&sim.panel).expect("no constant series").0
}
