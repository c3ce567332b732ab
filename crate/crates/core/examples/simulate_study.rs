//! Simulate the first clinic study and summarise its visit pattern.
//!
//! `cargo run --release --example simulate_study -- [n_subjects] [seed]`

use visitbias::diagnostics::visits_summary;
use visitbias::io::write_csv;
use visitbias::sim::{simulate_study, StudyScenario};

fn main() -> visitbias::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|v| v.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|v| v.parse().ok()).unwrap_or(1);

    for name in ["study1", "study2", "study3"] {
        let ds = simulate_study(&StudyScenario::preset(name)?, n, seed)?;
        let v = visits_summary(&ds)?;
        println!(
            "{name}: {} subjects, mean visits {:.2}, median {}, IQR {:.1}, range {}..{}",
            v.n_subjects, v.mean, v.median, v.iqr, v.min, v.max
        );
    }

    let ds = simulate_study(&StudyScenario::study1(), 3, seed)?;
    let mut out = Vec::new();
    write_csv(&ds, &mut out)?;
    println!("\nfirst rows of a three-subject dataset:");
    for line in String::from_utf8_lossy(&out).lines().take(8) {
        println!("{line}");
    }
    Ok(())
}
