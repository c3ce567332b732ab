//! Pre-analysis diagnostics on strongly and weakly linked visit processes.

use visitbias::diagnostics::{diagnose, DiagnosticSpecs, Thresholds};
use visitbias::sim::{simulate_study, StudyScenario};
use visitbias::OptimizerSettings;

fn main() -> visitbias::Result<()> {
    for name in ["study1", "decoupled"] {
        let sc = StudyScenario::preset(name)?;
        let ds = simulate_study(&sc, 400, 9)?;
        let specs = DiagnosticSpecs::from_joint(&sc.joint_spec().expect("joint model"), ds.covariate_names());
        let report = diagnose(&ds, &specs, &Thresholds::default(), &OptimizerSettings::default())?;
        println!("== {name}");
        println!("mean visits {:.2}", report.visits.mean);
        if let Some(i) = &report.icc {
            println!("ICC {:.3}", i.icc);
        }
        if let Some(r) = &report.re_correlation {
            println!("BLUP correlation {:.3}", r.correlation);
        }
        for (factor, flag) in report.flags() {
            println!("  {factor:<16} {flag:?}");
        }
        println!("{}\n", report.recommendation);
    }
    Ok(())
}
