use visitbias::harness::{run_replications, summarize, Fitter, ReplicationPlan, RepRecord};
use visitbias::sim::{MemoryScenario, StudyScenario};

fn unlinked_plan(reps: usize) -> ReplicationPlan {
    let mut sc = MemoryScenario::binary_baseline(100.0 / 3.0);
    sc.intervals.gamma = vec![0.0];
    ReplicationPlan::new("unlinked", StudyScenario::BinaryBaseline(sc), 100, reps, 2024).with_fitters(&[Fitter::Univariate])
}

#[test]
fn ignorable_visits_give_unbiased_estimates_and_root_n_mc_se() {
    let table = run_replications(&unlinked_plan(500)).unwrap();
    let row = table.row("unlinked", Fitter::Univariate).unwrap();
    assert_eq!(row.converged, 500);
    assert!((row.mean_estimate - row.truth).abs() < 3.0 * row.mc_se, "{row:?}");

    let recs: Vec<&RepRecord> = table.records.iter().map(|(_, r)| r).collect();
    let est: Vec<f64> = recs.iter().map(|r| r.estimate.unwrap()).collect();
    let mean = est.iter().sum::<f64>() / 500.0;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 499.0).sqrt();
    assert!((row.ese - sd).abs() < 1e-12);
    assert!((row.mc_se - sd / 500f64.sqrt()).abs() < 1e-12);

    let head = summarize("unlinked", Fitter::Univariate, &row.estimand, row.truth, &recs[..125]);
    let ratio = head.mc_se / row.mc_se;
    assert!((1.6..2.5).contains(&ratio), "MC SE ratio {ratio} for a 4x increase in reps");
}

#[test]
fn identical_plans_give_identical_tables() {
    let a = run_replications(&unlinked_plan(12)).unwrap();
    let b = run_replications(&unlinked_plan(12)).unwrap();
    assert_eq!(a, b);
    let mut other = unlinked_plan(12);
    other.seed += 1;
    assert_ne!(a.rows, run_replications(&other).unwrap().rows);
}

#[test]
fn rep_prefixes_are_shared_across_run_lengths() {
    let short = run_replications(&unlinked_plan(10)).unwrap();
    let long = run_replications(&unlinked_plan(20)).unwrap();
    assert_eq!(short.records[..], long.records[..10]);
}
