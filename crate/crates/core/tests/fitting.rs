mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use common::{dense_mvn_logpdf, kron, rng};
use visitbias::diagnostics::pearson;
use visitbias::joint::{assemble_sigma, omega_exponential};
use visitbias::lmm::{icc_from_sds, predict_blups};
use visitbias::{fit_lmm, LmmSpec, LongitudinalDataset, OptimizerSettings, SubjectRecord, Term, TimeUnit};

fn dataset(ys: &[Vec<f64>]) -> LongitudinalDataset {
    let subjects = ys
        .iter()
        .enumerate()
        .map(|(i, y)| SubjectRecord {
            id: i as u64 + 1,
            visit_times: (0..y.len()).map(|k| k as f64 * 0.3).collect(),
            y: y.clone(),
            r: None,
            s: None,
            baseline: Default::default(),
            u_sum: None,
        })
        .collect();
    LongitudinalDataset::new(subjects, 2.0, TimeUnit::Years)
}

/// Random-intercept log-likelihood with `β` at its GLS value, from dense
/// per-subject covariances.
fn profiled_dense(ds: &LongitudinalDataset, sb: f64, se: f64) -> f64 {
    let cov = |n: usize| DMatrix::from_element(n, n, sb * sb) + DMatrix::identity(n, n) * (se * se);
    let (mut num, mut den) = (0.0, 0.0);
    for s in &ds.subjects {
        let n = s.y.len();
        let vinv = cov(n).try_inverse().unwrap();
        let one = DVector::from_element(n, 1.0);
        num += (one.transpose() * &vinv * DVector::from_column_slice(&s.y))[0];
        den += (one.transpose() * &vinv * &one)[0];
    }
    let beta = num / den;
    ds.subjects
        .iter()
        .map(|s| {
            let n = s.y.len();
            dense_mvn_logpdf(&DVector::from_column_slice(&s.y), &DVector::from_element(n, beta), &cov(n))
        })
        .sum()
}

#[test]
fn ml_fit_matches_grid_search() {
    let ds = dataset(&[vec![1.0, 1.5, 0.8, 1.9], vec![5.0, 5.5, 4.2], vec![9.0, 8.7, 9.9, 10.4, 8.1]]);
    let fit = fit_lmm(&ds, &LmmSpec::random_intercept(vec![Term::Intercept]), &OptimizerSettings::default()).unwrap();
    assert!(fit.converged);
    let step = 0.01;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 1..=800 {
        for j in 1..=200 {
            let (sb, se) = (i as f64 * step, j as f64 * step);
            let ll = profiled_dense(&ds, sb, se);
            if ll > best.0 {
                best = (ll, sb, se);
            }
        }
    }
    assert!((fit.re_sds[0] - best.1).abs() <= step, "σ_b {} vs grid {}", fit.re_sds[0], best.1);
    assert!((fit.sigma_eps - best.2).abs() <= step, "σ_ε {} vs grid {}", fit.sigma_eps, best.2);
    assert!(fit.loglik >= best.0 - 1e-9);
}

#[test]
fn blups_are_shrunken_subject_means() {
    let ds = dataset(&[vec![1.0, 1.5, 0.8, 1.9], vec![5.0, 5.5, 4.2], vec![9.0, 8.7, 9.9, 10.4, 8.1], vec![3.0, 2.0]]);
    let fit = fit_lmm(&ds, &LmmSpec::random_intercept(vec![Term::Intercept]), &OptimizerSettings::default()).unwrap();
    let (sb2, se2, beta) = (fit.re_sds[0].powi(2), fit.sigma_eps.powi(2), fit.beta()[0]);
    for (s, b) in ds.subjects.iter().zip(predict_blups(&fit, &ds).unwrap()) {
        let n = s.y.len() as f64;
        let ybar = s.y.iter().sum::<f64>() / n;
        let expect = sb2 / (sb2 + se2 / n) * (ybar - beta);
        assert_eq!(b.id, s.id);
        assert!((b.values[0] - expect).abs() < 1e-8, "{} vs {expect}", b.values[0]);
    }
}

#[test]
fn blups_track_true_effects() {
    let mut g = rng(77);
    let n_visits = 6;
    let truth: Vec<f64> = (0..300).map(|_| 1.5 * g.sample::<f64, _>(StandardNormal)).collect();
    let ys: Vec<Vec<f64>> = truth
        .iter()
        .map(|b| (0..n_visits).map(|k| 2.0 - 0.5 * k as f64 * 0.3 + b + g.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let ds = dataset(&ys);
    let fit = fit_lmm(&ds, &LmmSpec::random_intercept(vec![Term::Intercept, Term::Time]), &OptimizerSettings::default())
        .unwrap();
    let blups: Vec<f64> = predict_blups(&fit, &ds).unwrap().iter().map(|b| b.values[0]).collect();
    let r = pearson(&blups, &truth);
    assert!(r > 0.5, "correlation {r}");
}

#[test]
fn icc_of_the_worked_example() {
    assert_eq!(format!("{:.3}", icc_from_sds(1.36, 1.69)), "0.393");
}

#[test]
fn separable_covariance_matches_entrywise_product() {
    let lambda = DMatrix::from_row_slice(2, 2, &[2.25, -0.3, -0.3, 0.16]);
    let omega = omega_exponential(&[0.0, 0.4, 1.1], 0.5, 0.3).unwrap();
    let sigma = assemble_sigma(&lambda, &omega).unwrap();
    let n = 3;
    for a in 0..2 {
        for b in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(sigma[(a * n + i, b * n + j)], lambda[(a, b)] * omega.entries[(i, j)]);
                }
            }
        }
    }
    assert_eq!(sigma, kron(&lambda, &omega.entries));
}

#[test]
fn separable_determinant_identity() {
    let lambda = DMatrix::from_row_slice(2, 2, &[1.7, 0.4, 0.4, 0.9]);
    let omega = omega_exponential(&[0.0, 0.3, 0.45, 1.2], 0.7, 0.2).unwrap();
    let sigma = assemble_sigma(&lambda, &omega).unwrap();
    let lhs = sigma.determinant();
    let rhs = lambda.determinant().powi(4) * omega.entries.determinant().powi(2);
    assert!(((lhs - rhs) / rhs).abs() < 1e-8, "{lhs} vs {rhs}");
}
