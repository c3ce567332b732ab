mod common;

use proptest::prelude::*;
use rand::Rng;

use common::rng;
use visitbias::diagnostics::{
    covariate_association_diagnostic, diagnose, re_correlation_diagnostic, visits_summary, DiagnosticSpecs, Risk,
    Thresholds,
};
use visitbias::lmm::icc_from_sds;
use visitbias::sim::{simulate_study, StudyScenario};
use visitbias::{LongitudinalDataset, OptimizerSettings};

fn settings() -> OptimizerSettings {
    OptimizerSettings::default()
}

fn study1(n: usize, seed: u64) -> LongitudinalDataset {
    simulate_study(&StudyScenario::study1(), n, seed).unwrap()
}

fn specs(ds: &LongitudinalDataset) -> DiagnosticSpecs {
    DiagnosticSpecs::from_joint(&StudyScenario::study1().joint_spec().unwrap(), ds.covariate_names())
}

#[test]
fn study1_visit_summary_and_worked_icc() {
    let v = visits_summary(&study1(2000, 1)).unwrap();
    assert!((v.mean - 5.2).abs() <= 0.3, "mean visits {}", v.mean);
    let th = Thresholds::default();
    let icc = icc_from_sds(1.36, 1.69);
    assert!((icc - 0.39).abs() < 0.005);
    assert_eq!(th.above(icc, th.icc), Risk::High);
}

#[test]
fn linked_processes_give_strongly_negative_blup_correlation() {
    let ds = study1(2000, 2);
    let s = specs(&ds);
    let d = re_correlation_diagnostic(&ds, &s.y_spec, &s.r_spec, &Thresholds::default(), &settings()).unwrap();
    assert!(d.correlation < -0.3, "correlation {}", d.correlation);
    assert_eq!(d.flag, Risk::High);
    assert_eq!(d.pairs.len(), 2000);
}

#[test]
fn treatment_shifts_intervals() {
    let ds = simulate_study(&StudyScenario::study2(), 400, 3).unwrap();
    let a = covariate_association_diagnostic(&ds, "treat", &Thresholds::default(), &settings()).unwrap();
    assert!(a.estimate < 0.0 && a.estimate.abs() > 10.0 * a.se, "{a:?}");
    assert_eq!(a.flag, Risk::High);
}

#[test]
fn independent_covariate_is_rarely_flagged() {
    let th = Thresholds::default();
    let reps = 40;
    let low = (0..reps)
        .filter(|&r| {
            let mut ds = study1(200, 100 + r);
            let mut g = rng(900 + r);
            for s in &mut ds.subjects {
                s.baseline.insert("noise".into(), g.random_range(0..2) as f64);
            }
            covariate_association_diagnostic(&ds, "noise", &th, &settings()).unwrap().flag == Risk::Low
        })
        .count();
    assert!(low as f64 >= 0.9 * reps as f64, "{low} of {reps} low");
}

#[test]
fn study1_report_recommends_joint_model() {
    let ds = study1(2000, 4);
    let r = diagnose(&ds, &specs(&ds), &Thresholds::default(), &settings()).unwrap();
    assert_eq!(r.icc.as_ref().unwrap().flag, Risk::High);
    assert_eq!(r.re_correlation.as_ref().unwrap().flag, Risk::High);
    assert!(r.recommend_joint);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
}

#[test]
fn diagnostics_ignore_subject_order() {
    let ds = study1(300, 5);
    let mut perm = ds.clone();
    perm.subjects.reverse();
    perm.subjects.rotate_left(17);
    let th = Thresholds::default();
    let a = diagnose(&ds, &specs(&ds), &th, &settings()).unwrap();
    let b = diagnose(&perm, &specs(&perm), &th, &settings()).unwrap();
    assert_eq!(a.flags(), b.flags());
    assert_eq!(a.visits, b.visits);
    let (ia, ib) = (a.icc.unwrap(), b.icc.unwrap());
    assert!((ia.icc - ib.icc).abs() < 1e-6);
    let (ca, cb) = (a.re_correlation.unwrap(), b.re_correlation.unwrap());
    assert!((ca.correlation - cb.correlation).abs() < 1e-6);
}

#[test]
fn blup_correlation_follows_sign_of_outcome_rescaling() {
    let ds = study1(400, 6);
    let s = specs(&ds);
    let th = Thresholds::default();
    let base = re_correlation_diagnostic(&ds, &s.y_spec, &s.r_spec, &th, &settings()).unwrap().correlation;
    for (a, c) in [(2.5, -4.0), (-0.5, 10.0)] {
        let mut t = ds.clone();
        t.subjects.iter_mut().for_each(|s| s.y.iter_mut().for_each(|y| *y = a * *y + c));
        let r = re_correlation_diagnostic(&t, &s.y_spec, &s.r_spec, &th, &settings()).unwrap().correlation;
        assert!((r - f64::signum(a) * base).abs() < 1e-4, "scale {a}: {r} vs {base}");
    }
}

proptest! {
    #[test]
    fn raising_a_threshold_never_raises_risk(
        stat in 0.0f64..20.0,
        t1 in 0.0f64..20.0,
        dt in 0.0f64..10.0,
        frac in 0.05f64..1.0,
    ) {
        let th = Thresholds { moderate_fraction: frac, ..Thresholds::default() };
        prop_assert!(th.above(stat, t1 + dt) <= th.above(stat, t1));
        prop_assert!(th.below(stat, t1) <= th.below(stat, t1 + dt));
    }
}
