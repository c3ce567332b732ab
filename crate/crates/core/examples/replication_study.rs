//! A small replication study of one table cell, both fitters.

use visitbias::harness::{compare_cells, run_replications, Fitter, ReplicationPlan};

fn main() -> visitbias::Result<()> {
    let reps = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(20);
    let mut plan = ReplicationPlan::named("table2_study2_high", reps, 42)?;
    plan.n_joint_reps = Some(reps.clamp(2, 10));
    let table = run_replications(&plan)?;
    print!("{}", table.to_text());
    let c = compare_cells(&table, (&plan.name, Fitter::Univariate), (&plan.name, Fitter::Joint))?;
    println!(
        "|bias| outcome-only minus joint: {:.3} points ({:.2} combined MC SEs)",
        c.abs_bias_diff_pct, c.z
    );
    Ok(())
}
