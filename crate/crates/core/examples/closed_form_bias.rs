//! Closed-form bias of the outcome-only model when visit intervals share a
//! random intercept with the outcome.

use visitbias::bias::{bias_binary_covariate_mc, bias_intercept_only_mc, population_from_dataset};
use visitbias::sim::{simulate_study, MemoryScenario, StudyScenario};

fn main() -> visitbias::Result<()> {
    let m = 50_000;
    let base = MemoryScenario::intercept_only();
    let ds = simulate_study(&StudyScenario::InterceptOnly(base.clone()), m, 1)?;
    let iv = &base.intervals;
    let pop = population_from_dataset(&ds, &iv.h_terms, &base.y_fixed, &base.y_random)?;
    let b = bias_intercept_only_mc(&pop, iv.alpha[0], iv.gamma[0], iv.re_spec.sds[0], iv.sigma_eta, base.sigma_eps)?;
    println!("intercept bias: {:.4} (MC SE {:.4})", b.bias, b.mc_se);

    for alpha1 in [0.0, 20.0, 100.0 / 3.0, 150.0] {
        let sc = MemoryScenario::binary_baseline(alpha1);
        let ds = simulate_study(&StudyScenario::BinaryBaseline(sc.clone()), m, 1)?;
        let iv = &sc.intervals;
        let pop = population_from_dataset(&ds, &iv.h_terms, &sc.y_fixed, &sc.y_random)?;
        let b = bias_binary_covariate_mc(
            &pop,
            iv.alpha[0],
            iv.alpha[1],
            iv.gamma[0],
            iv.re_spec.sds[0],
            iv.sigma_eta,
            sc.sigma_eps,
        )?;
        println!("covariate bias at alpha1 = {alpha1:>7.2}: {:.4} (MC SE {:.4})", b.bias, b.mc_se);
    }
    Ok(())
}
