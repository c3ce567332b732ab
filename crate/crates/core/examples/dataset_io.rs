//! Write a dataset as long-format CSV with its JSON header, then read it back.

use visitbias::data::validate_dataset;
use visitbias::io::{read_dataset, write_dataset};
use visitbias::sim::{simulate_study, StudyScenario};

fn main() -> visitbias::Result<()> {
    let dir = std::env::temp_dir().join("visitbias-example-io");
    std::fs::create_dir_all(&dir)?;
    let (csv, header) = (dir.join("study2.csv"), dir.join("study2.json"));
    let ds = simulate_study(&StudyScenario::study2(), 50, 8)?;
    write_dataset(&ds, &csv, &header)?;
    let back = read_dataset(&csv, &header)?;
    println!("wrote {} ({} visits); read back identical: {}", csv.display(), back.total_visits(), back == ds);
    println!("valid: {}", validate_dataset(&back).is_valid());
    Ok(())
}
