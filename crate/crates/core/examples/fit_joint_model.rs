//! Fit the joint model of the outcome and the recommended visit intervals
//! next to the outcome-only model on the same data.

use visitbias::sim::{simulate_study, StudyScenario};
use visitbias::{fit_joint, fit_lmm, OptimizerSettings};

fn main() -> visitbias::Result<()> {
    let sc = StudyScenario::study1();
    let ds = simulate_study(&sc, 400, 5)?;
    let settings = OptimizerSettings::default();
    let uni = fit_lmm(&ds, &sc.univariate_spec(), &settings)?;
    let joint = fit_joint(&ds, &sc.joint_spec().expect("study 1 has a joint model"), &settings)?;
    let est = sc.estimand();
    let u = uni.coef(&est.name).expect("estimand in outcome model");
    let j = joint.coef(&est.name).expect("estimand in joint model");
    println!("truth {:.3}", est.truth);
    println!("outcome-only  {:.4} (SE {:.4})", u.estimate, u.se);
    println!("joint         {:.4} (SE {:.4})", j.estimate, j.se);
    println!("\njoint covariance parameters:");
    for e in &joint.variance {
        println!("{:<32} {:>9.4}  SE {:.4}", e.name, e.estimate, e.se);
    }
    Ok(())
}
