//! Write the bundled sample panel: a three-factor design with Student-t
//! errors, 100 monthly periods and 50 series.
//!
//! `cargo run -p qfa-core --example make_sample_panel -- data/sample_panel.csv`

use qfa_core::io::write_panel;
use qfa_core::sim::{generate_panel, DgpConfig, ErrorFamily};
use qfa_core::Panel;

const SEED: u64 = 20240601;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "sample_panel.csv".into());
    let sim = generate_panel(&DgpConfig::new(100, 50, ErrorFamily::M1, SEED))?;
    let times = (0..100)
        .map(|t| format!("{}-{:02}", 2000 + t / 12, t % 12 + 1))
        .collect();
    let series = (1..=50).map(|i| format!("s{i:02}")).collect();
    let panel = Panel::new(sim.panel.values().clone(), times, series)?;
    write_panel(std::fs::File::create(&path)?, &panel, "date")?;
    println!("wrote {path}");
    Ok(())
}
