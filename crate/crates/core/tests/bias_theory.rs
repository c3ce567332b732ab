mod common;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{intercept_bias_direct, intercept_population, mean_sd, quadrature_posterior};
use visitbias::bias::{
    bias_general, bias_intercept_only, conditional_re_moments, formula_bias, population_from_dataset, BiasFormula,
    SubjectVisitStats,
};
use visitbias::data::build_psi;
use visitbias::sim::{gen_intervals_memory, simulate_study, MemoryScenario, StudyScenario};
use visitbias::RandomEffectSpec;

#[test]
fn conditional_moments_match_quadrature_posterior() {
    let base = MemoryScenario::intercept_only().intervals;
    let sigma_b = base.re_spec.sds[0];
    for s in [[60.0, 80.0, 75.0], [66.0, 67.0, 68.0], [90.0, 88.0, 30.0], [50.0, 52.0, 99.5]] {
        let stats = SubjectVisitStats { n_visits: 3, u_sum: s.iter().sum(), h: vec![1.0], x: vec![1.0], z: vec![1.0] };
        let (mean, cov) = conditional_re_moments(&stats, &base).unwrap();
        let (qm, qv) = quadrature_posterior(&s, base.alpha[0], base.gamma[0], sigma_b, base.sigma_eta);
        assert!((mean[0] - qm).abs() < 1e-3, "{s:?}: mean {} vs {qm}", mean[0]);
        assert!((cov[(0, 0)] - qv).abs() < 1e-3, "{s:?}: variance {} vs {qv}", cov[(0, 0)]);
    }
}

#[test]
fn general_bias_specializes_to_intercept_only() {
    for (k, (sb, g)) in [(2f64.sqrt(), -1.0), (0.5, -2.0), (2.5, 0.25), (1.0, 1.5)].into_iter().enumerate() {
        let mut sc = MemoryScenario::intercept_only();
        sc.intervals.re_spec.sds[0] = sb;
        sc.intervals.gamma[0] = g;
        let iv = &sc.intervals;
        let pop = intercept_population(&sc, 5000, 40 + k as u64);
        let general = bias_general(&pop, iv, sc.sigma_eps, None).unwrap()[0];
        let closed = bias_intercept_only(&pop, iv.alpha[0], g, sb, iv.sigma_eta, sc.sigma_eps).unwrap();
        let direct = intercept_bias_direct(&pop, iv.alpha[0], g, sb, sc.sigma_eps, iv.sigma_eta);
        assert!((general - closed).abs() <= 1e-10 * closed.abs().max(1e-3), "{general} vs {closed}");
        assert!((direct - closed).abs() <= 1e-10 * closed.abs().max(1e-3), "{direct} vs {closed}");
    }
}

#[test]
fn unconnected_covariate_component_is_unbiased() {
    let sc = MemoryScenario::unconnected_covariate();
    let iv = &sc.intervals;
    let reps: Vec<f64> = (0..30u64)
        .map(|r| {
            let ds = simulate_study(&StudyScenario::UnconnectedCovariate(sc.clone()), 2000, 7000 + r).unwrap();
            let pop = population_from_dataset(&ds, &iv.h_terms, &sc.y_fixed, &sc.y_random).unwrap();
            let idx = sc.y_fixed.iter().position(|t| t.to_string() == "x1").unwrap();
            bias_general(&pop, iv, sc.sigma_eps, None).unwrap()[idx]
        })
        .collect();
    let (m, sd) = mean_sd(&reps);
    let se = sd / (reps.len() as f64).sqrt();
    assert!(m.abs() < 3.0 * se, "x1 bias {m} with MC SE {se}");
}

#[test]
fn unlinked_intervals_have_zero_mean_excess() {
    let mut p = MemoryScenario::intercept_only().intervals;
    p.gamma = vec![0.0];
    p.sigma_eta = 10.0;
    p.floor = 1e-9;
    let draws = gen_intervals_memory(&p, &vec![BTreeMap::new(); 20_000], 5).unwrap();
    assert!(draws.subjects.iter().flat_map(|d| &d.s).all(|&s| s > p.floor));
    let excess: Vec<f64> = draws.subjects.iter().map(|d| d.u_sum - d.n_visits as f64 * p.alpha[0]).collect();
    let (m, sd) = mean_sd(&excess);
    let se = sd / (excess.len() as f64).sqrt();
    assert!(m.abs() < 3.0 * se, "mean excess {m} with MC SE {se}");
}

#[test]
fn mc_se_shrinks_with_population_size() {
    let sc = MemoryScenario::intercept_only();
    let small = formula_bias(BiasFormula::InterceptOnly, &sc, 10_000, 3).unwrap().0;
    let large = formula_bias(BiasFormula::InterceptOnly, &sc, 40_000, 3).unwrap().0;
    let ratio = large.mc_se / small.mc_se;
    assert!((0.4..0.6).contains(&ratio), "MC SE ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intercept_bias_is_scale_equivariant(c in 0.1f64..10.0, seed in 0u64..1000) {
        let sc = MemoryScenario::intercept_only();
        let iv = &sc.intervals;
        let pop = intercept_population(&sc, 300, seed);
        let a0 = iv.alpha[0];
        let scaled: Vec<SubjectVisitStats> = pop
            .iter()
            .map(|s| SubjectVisitStats { u_sum: s.n_visits as f64 * a0 + c * (s.u_sum - s.n_visits as f64 * a0), ..s.clone() })
            .collect();
        let sb = iv.re_spec.sds[0];
        let a = bias_intercept_only(&pop, a0, iv.gamma[0], sb, iv.sigma_eta, sc.sigma_eps).unwrap();
        let b = bias_intercept_only(&scaled, a0, c * iv.gamma[0], sb, c * iv.sigma_eta, sc.sigma_eps).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
    }

    #[test]
    fn conditional_covariance_is_positive_definite(
        n in 1usize..40,
        u in 0.0f64..500.0,
        sds in proptest::collection::vec(0.01f64..3.0, 2),
        rho in -0.95f64..0.95,
        gamma in proptest::collection::vec(-5.0f64..5.0, 2),
        sigma_eta in 0.01f64..20.0,
    ) {
        let mut p = MemoryScenario::random_slope().intervals;
        p.re_spec = RandomEffectSpec::independent(&["b0", "b1"], &sds).with_corr(0, 1, rho);
        p.gamma = gamma;
        p.sigma_eta = sigma_eta;
        let stats = SubjectVisitStats { n_visits: n, u_sum: u, h: vec![1.0], x: vec![1.0, 0.0], z: vec![1.0, 0.0] };
        let (_, cov) = conditional_re_moments(&stats, &p).unwrap();
        prop_assert!(cov.clone().cholesky().is_some(), "{cov}");
        prop_assert!((cov.clone() - cov.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn psi_is_symmetric_and_factorizes(
        sds in proptest::collection::vec(0.01f64..5.0, 3),
        r in proptest::collection::vec(-0.6f64..0.6, 3),
    ) {
        let spec = RandomEffectSpec::independent(&["a", "b", "c"], &sds)
            .with_corr(0, 1, r[0])
            .with_corr(0, 2, r[1])
            .with_corr(1, 2, r[2]);
        let corr = DMatrix::from_fn(3, 3, |i, j| spec.corr[i][j]);
        prop_assume!(corr.clone().cholesky().is_some());
        let psi = build_psi(&spec).unwrap();
        prop_assert_eq!(psi.clone(), psi.transpose());
        prop_assert!(psi.cholesky().is_some());
    }
}
