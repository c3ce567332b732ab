//! Closed-form bias along a parameter grid, as CSV on stdout.
//!
//! `cargo run --release --example bias_sweep -- fig1_sigma_b`

use visitbias::bias::{sweep, SweepSpec};
use visitbias::OptimizerSettings;

fn main() -> visitbias::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "fig1_alpha0".into());
    let mut spec = SweepSpec::named(&name, 1)?;
    spec.subjects = spec.subjects.min(20_000);
    let report = sweep(&spec, &OptimizerSettings::default())?;
    report.write_csv(std::io::stdout())
}
