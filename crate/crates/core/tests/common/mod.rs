#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visitbias::bias::{population_from_dataset, SubjectVisitStats};
use visitbias::joint::JointParams;
use visitbias::sim::{simulate_study, MemoryScenario, StudyScenario};
use visitbias::{CorrFamily, LongitudinalDataset, RandomEffectSpec, SubjectRecord, TimeUnit};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Irregular visit times in [0, 2] with arbitrary `Y`, `R` and `S`.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_subjects: usize, max_visits: usize) -> LongitudinalDataset {
    let subjects = (0..n_subjects)
        .map(|i| {
            let n = rng.random_range(1..=max_visits);
            let mut t: f64 = 0.0;
            let mut times = Vec::with_capacity(n);
            let mut s = Vec::with_capacity(n);
            for _ in 0..n {
                times.push(t);
                let gap = rng.random_range(0.05..0.6);
                s.push(gap);
                t += gap;
            }
            SubjectRecord {
                id: i as u64 + 1,
                y: (0..n).map(|_| rng.random_range(4.0..10.0)).collect(),
                r: Some((0..n).map(|_| rng.random_range(0.2..1.2)).collect()),
                u_sum: Some(t.max(2.0 + 1e-9)),
                s: Some(s),
                visit_times: times,
                baseline: [("x".to_string(), rng.random_range(0.0..1.0_f64).round())].into(),
            }
        })
        .collect();
    LongitudinalDataset::new(subjects, 2.0, TimeUnit::Years)
}

/// Random PD correlation matrix scaled to random standard deviations.
pub fn random_re_spec(rng: &mut ChaCha8Rng, names: &[&str]) -> RandomEffectSpec {
    let q = names.len();
    let a = DMatrix::<f64>::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
    let m: DMatrix<f64> = &a * a.transpose() + DMatrix::identity(q, q) * 0.3;
    let d: Vec<f64> = (0..q).map(|i| m[(i, i)].sqrt()).collect();
    let mut spec = RandomEffectSpec::independent(names, &vec![1.0; q]);
    for i in 0..q {
        spec.sds[i] = rng.random_range(0.05..1.5);
        for j in 0..q {
            spec.corr[i][j] = if i == j { 1.0 } else { m[(i, j)] / (d[i] * d[j]) };
        }
    }
    spec
}

/// Dense multivariate normal log density by explicit Cholesky.
pub fn dense_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        assert!(d > 0.0, "covariance is not positive definite");
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    let r = x - mean;
    let mut z = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    let logdet: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.dot(&z))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

/// Fourth-order central differences.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let at = |d: f64| {
                let mut y = x.to_vec();
                y[i] += d;
                f(&y)
            };
            (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
        })
        .collect()
}

pub fn rel_inf_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn psi_of(re: &RandomEffectSpec) -> DMatrix<f64> {
    let q = re.sds.len();
    DMatrix::from_fn(q, q, |i, j| re.corr[i][j] * re.sds[i] * re.sds[j])
}

/// Joint log-likelihood built from the full `2n × 2n` covariance of each
/// subject, for linear fixed effects, `(b0, b1)` on `Y` and `u0` on `R`.
pub fn dense_joint_loglik(ds: &LongitudinalDataset, p: &JointParams) -> f64 {
    let psi = psi_of(&p.re);
    let r = &p.residual;
    let lambda = DMatrix::from_row_slice(
        2,
        2,
        &[
            r.sigma_eps * r.sigma_eps,
            r.rho_eps * r.sigma_eps * r.sigma_zeta,
            r.rho_eps * r.sigma_eps * r.sigma_zeta,
            r.sigma_zeta * r.sigma_zeta,
        ],
    );
    ds.subjects
        .iter()
        .map(|s| {
            let t = &s.visit_times;
            let n = t.len();
            let omega = DMatrix::from_fn(n, n, |i, j| match r.corr_family {
                _ if i == j => 1.0,
                CorrFamily::Iid => 0.0,
                CorrFamily::Exponential => (1.0 - r.nugget_c0) * (-(t[i] - t[j]).abs() / r.range_d).exp(),
            });
            let mut w = DMatrix::<f64>::zeros(2 * n, 3);
            let mut mean = DVector::<f64>::zeros(2 * n);
            for i in 0..n {
                w[(i, 0)] = 1.0;
                w[(i, 1)] = t[i];
                w[(n + i, 2)] = 1.0;
                mean[i] = p.beta[0] + p.beta[1] * t[i];
                mean[n + i] = p.alpha[0] + p.alpha[1] * t[i];
            }
            let cov = &w * &psi * w.transpose() + kron(&lambda, &omega);
            let x = DVector::from_iterator(2 * n, s.y.iter().chain(s.r.as_ref().unwrap()).copied());
            dense_mvn_logpdf(&x, &mean, &cov)
        })
        .sum()
}

/// Posterior mean and variance of a scalar random intercept given interval
/// draws, by Simpson quadrature of prior times Gaussian likelihood.
pub fn quadrature_posterior(s: &[f64], alpha0: f64, gamma0: f64, sigma_b: f64, sigma_eta: f64) -> (f64, f64) {
    let n = 200_000;
    let (lo, hi) = (-12.0 * sigma_b, 12.0 * sigma_b);
    let h = (hi - lo) / n as f64;
    let logpost = |b: f64| {
        -0.5 * (b / sigma_b).powi(2)
            - s.iter().map(|&x| 0.5 * ((x - alpha0 - gamma0 * b) / sigma_eta).powi(2)).sum::<f64>()
    };
    let peak = (0..=n).map(|i| logpost(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let b = lo + i as f64 * h;
        let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let d = c * (logpost(b) - peak).exp();
        m0 += d;
        m1 += d * b;
        m2 += d * b * b;
    }
    let mean = m1 / m0;
    (mean, m2 / m0 - mean * mean)
}

/// Weighted-mean form of the intercept bias, written out directly.
pub fn intercept_bias_direct(pop: &[SubjectVisitStats], alpha0: f64, gamma0: f64, sb: f64, se: f64, sn: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for s in pop {
        let n = s.n_visits as f64;
        let w = 1.0 / (sb * sb + se * se / n);
        let eb = gamma0 * sb * sb * (s.u_sum - n * alpha0) / (n * gamma0 * gamma0 * sb * sb + sn * sn);
        num += w * eb;
        den += w;
    }
    num / den
}

pub fn intercept_population(sc: &MemoryScenario, n: usize, seed: u64) -> Vec<SubjectVisitStats> {
    let ds = simulate_study(&StudyScenario::InterceptOnly(sc.clone()), n, seed).unwrap();
    population_from_dataset(&ds, &sc.intervals.h_terms, &sc.y_fixed, &sc.y_random).unwrap()
}
