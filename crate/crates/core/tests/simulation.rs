mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use statrs::function::gamma::gamma;

use common::mean_sd;
use visitbias::data::{build_psi, validate_dataset};
use visitbias::sim::{
    gen_adherence, gen_intervals_memory, gen_random_effects, gen_visits_memoryless, simulate_study, ClinicScenario,
    MemoryScenario, StudyScenario,
};
use visitbias::{LongitudinalDataset, RandomEffectSpec};

fn mean_visits(ds: &LongitudinalDataset) -> f64 {
    ds.total_visits() as f64 / ds.n_subjects() as f64
}

#[test]
fn random_effect_sample_covariance_matches_psi() {
    let spec = ClinicScenario::study1().re_spec;
    let psi = build_psi(&spec).unwrap();
    let n = 100_000;
    let draws = gen_random_effects(&spec, n, 17).unwrap();
    let q = spec.dim();
    for i in 0..q {
        for j in 0..=i {
            let prods: Vec<f64> = (0..n).map(|k| draws[(k, i)] * draws[(k, j)]).collect();
            let (m, sd) = mean_sd(&prods);
            let se = sd / (n as f64).sqrt();
            assert!((m - psi[(i, j)]).abs() < 3.0 * se, "entry ({i},{j}): {m} vs {} (MC SE {se})", psi[(i, j)]);
        }
    }
    assert_eq!(draws, gen_random_effects(&spec, n, 17).unwrap());
}

#[test]
fn memory_intervals_give_about_tau_over_alpha_visits() {
    let p = MemoryScenario::intercept_only().intervals;
    let draws = gen_intervals_memory(&p, &vec![BTreeMap::new(); 20_000], 3).unwrap();
    let counts: Vec<f64> = draws.subjects.iter().map(|d| d.n_visits as f64).collect();
    let (m, _) = mean_sd(&counts);
    assert!((m - p.tau / p.alpha[0]).abs() < 0.5, "mean count {m}");
    assert!(draws.subjects.iter().all(|d| d.u_sum > p.tau && d.u_sum - d.s.last().unwrap() <= p.tau));
}

#[test]
fn memoryless_constant_probability_gives_binomial_mean() {
    let n = 10_000;
    let b = nalgebra::DMatrix::<f64>::zeros(n, 1);
    let v = gen_visits_memoryless(|_| 0.1f64.ln(), &[0.0], &b, 1.0, 100.0, 9).unwrap();
    let counts: Vec<f64> = v.times.iter().map(|t| t.len() as f64).collect();
    let (m, sd) = mean_sd(&counts);
    assert!((m - 10.0).abs() < 3.0 * sd / (n as f64).sqrt(), "mean count {m}");
    assert!(!v.clipped);
}

#[test]
fn adherence_has_weibull_mean() {
    let draws: Vec<f64> = (0..1_000_000u64).map(|k| gen_adherence(1.0, 10.0, k).unwrap()).collect();
    let (m, sd) = mean_sd(&draws);
    let truth = gamma(1.1);
    assert!((truth - 0.9514).abs() < 1e-4);
    assert!((m - truth).abs() < 3.0 * sd / 1000.0, "mean {m} vs {truth}");
    assert!(draws.iter().all(|&s| s > 0.0));
    let tight: Vec<f64> = (0..2000u64).map(|k| gen_adherence(0.5, 1e4, k).unwrap()).collect();
    let (m, sd) = mean_sd(&tight);
    assert!(sd < 1e-3 && (m - 0.5).abs() < 1e-3);
    assert_eq!(gen_adherence(0.7, 10.0, 5).unwrap(), gen_adherence(0.7, 10.0, 5).unwrap());
}

#[test]
fn clinic_studies_match_reported_visit_counts() {
    let m1 = mean_visits(&simulate_study(&StudyScenario::study1(), 2000, 21).unwrap());
    assert!((m1 - 5.2).abs() <= 0.3, "study 1: {m1}");
    let ds2 = simulate_study(&StudyScenario::study2(), 2000, 22).unwrap();
    let group = |treat: f64| {
        let v: Vec<f64> = ds2
            .subjects
            .iter()
            .filter(|s| s.covariate("treat") == Some(treat))
            .map(|s| s.n_visits() as f64)
            .collect();
        mean_sd(&v).0
    };
    assert!((group(1.0) - 18.7).abs() <= 0.5, "study 2 treated: {}", group(1.0));
    assert!((group(0.0) - 4.8).abs() <= 0.5, "study 2 control: {}", group(0.0));
    let m3 = mean_visits(&simulate_study(&StudyScenario::study3(), 2000, 23).unwrap());
    assert!((m3 - 3.7).abs() <= 0.3, "study 3: {m3}");
}

#[test]
fn exponential_residuals_have_the_stated_lag_correlation() {
    let mut c = ClinicScenario::study1();
    c.re_spec = RandomEffectSpec::independent(&["b0", "b1", "u0", "u1"], &[0.0; 4]);
    c.alpha0 = 0.25;
    c.alpha1 = 0.0;
    c.tau = 20.0;
    let (sigma, d, c0) = (c.residual.sigma_eps, c.residual.range_d, c.residual.nugget_c0);
    let ds = simulate_study(&StudyScenario::Study1(c.clone()), 1400, 31).unwrap();
    let mut bins: Vec<(Vec<f64>, Vec<f64>)> = vec![Default::default(); 6];
    for s in &ds.subjects {
        let e: Vec<f64> = s.y.iter().zip(&s.visit_times).map(|(y, t)| (y - c.beta0 - c.beta1 * t) / sigma).collect();
        for lag in 1..=2 {
            for i in lag..e.len() {
                let h = s.visit_times[i] - s.visit_times[i - lag];
                let k = ((h / 0.15) as usize).min(5);
                bins[k].0.push(e[i] * e[i - lag]);
                bins[k].1.push((1.0 - c0) * (-h / d).exp());
            }
        }
    }
    let total: usize = bins.iter().map(|b| b.0.len()).sum();
    assert!(total >= 100_000, "{total} pairs");
    for (k, (prod, expect)) in bins.iter().enumerate().filter(|(_, b)| b.0.len() > 500) {
        let (m, sd) = mean_sd(prod);
        let target = expect.iter().sum::<f64>() / expect.len() as f64;
        let se = sd / (prod.len() as f64).sqrt();
        assert!((m - target).abs() < 3.0 * se, "bin {k}: {m} vs {target} (MC SE {se})");
    }
}

#[test]
fn validation_is_idempotent() {
    let ds = simulate_study(&StudyScenario::study2(), 50, 4).unwrap();
    let a = validate_dataset(&ds);
    let b = validate_dataset(&ds);
    assert_eq!(a, b);
    assert!(a.is_valid());
    assert_eq!(ds, simulate_study(&StudyScenario::study2(), 50, 4).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn generated_datasets_are_valid_and_reproducible(
        preset in prop::sample::select(vec![
            "intercept_only", "binary_baseline", "random_slope", "unconnected_covariate",
            "study1", "study2", "study3", "joint_model", "decoupled",
        ]),
        n in 1usize..30,
        seed in any::<u64>(),
    ) {
        let sc = StudyScenario::preset(preset).unwrap();
        let ds = simulate_study(&sc, n, seed).unwrap();
        let report = validate_dataset(&ds);
        prop_assert!(report.is_valid(), "{:?}", report);
        prop_assert_eq!(ds.n_subjects(), n);
        prop_assert_eq!(ds, simulate_study(&sc, n, seed).unwrap());
    }
}
