//! Closed-form conditional bias of the outcome-only mixed model under the
//! interval process with memory, and parameter sweeps of it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_psi, LongitudinalDataset};
use crate::design::Term;
use crate::error::{invalid, Error, Result};
use crate::linalg::condition_number;
use crate::lmm::fit_lmm;
use crate::optim::OptimizerSettings;
use crate::sim::{simulate_study, MemoryIntervalParams, MemoryScenario, StudyScenario};

/// Per-subject summary of the interval process and the baseline designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectVisitStats {
    pub n_visits: usize,
    pub u_sum: f64,
    /// Values of the interval-model terms `H`.
    pub h: Vec<f64>,
    /// Outcome fixed-effect design `X`.
    pub x: Vec<f64>,
    /// Outcome random-effect design `Z`.
    pub z: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Observed minus expected interval sum, `U - N·Hᵀα`.
fn excess(s: &SubjectVisitStats, alpha: &[f64]) -> f64 {
    s.u_sum - s.n_visits as f64 * dot(&s.h, alpha)
}

/// Summaries for every subject, with `X` and `Z` evaluated at baseline.
pub fn population_from_dataset(
    ds: &LongitudinalDataset,
    h_terms: &[Term],
    x_terms: &[Term],
    z_terms: &[Term],
) -> Result<Vec<SubjectVisitStats>> {
    ds.subjects
        .iter()
        .map(|s| {
            let u_sum = s
                .u_sum
                .or_else(|| s.s.as_ref().map(|v| v.iter().sum()))
                .ok_or_else(|| Error::Missing(format!("interval sum for subject {}", s.id)))?;
            let ev = |terms: &[Term]| terms.iter().map(|t| t.eval(0.0, s)).collect::<Result<Vec<f64>>>();
            Ok(SubjectVisitStats { n_visits: s.n_visits(), u_sum, h: ev(h_terms)?, x: ev(x_terms)?, z: ev(z_terms)? })
        })
        .collect()
}

/// Posterior of the random effects given the subject's intervals:
/// `Σ* = (N γγᵀ/σ_η² + Σ_b⁻¹)⁻¹`, mean `Σ* γ (U - N·Hᵀα) / σ_η²`.
pub fn conditional_re_moments(
    stats: &SubjectVisitStats,
    params: &MemoryIntervalParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sigma_b = build_psi(&params.re_spec)?;
    conditional_moments_with(stats, &sigma_b, &params.gamma, &params.alpha, params.sigma_eta)
}

fn conditional_moments_with(
    stats: &SubjectVisitStats,
    sigma_b: &DMatrix<f64>,
    gamma: &[f64],
    alpha: &[f64],
    sigma_eta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(sigma_eta > 0.0) {
        return invalid("sigma_eta must be positive");
    }
    if gamma.len() != sigma_b.nrows() || stats.h.len() != alpha.len() {
        return Err(Error::Dimension("gamma, H or alpha do not match".into()));
    }
    let g = DVector::from_column_slice(gamma);
    let n = stats.n_visits as f64;
    let sg = sigma_b * &g;
    let gsg = g.dot(&sg);
    let s2 = sigma_eta * sigma_eta;
    // Woodbury form of (N γγᵀ/σ_η² + Σ_b⁻¹)⁻¹.
    let cov = sigma_b - &sg * sg.transpose() * (n / (n * gsg + s2));
    let mean = &sg * (excess(stats, alpha) / (n * gsg + s2));
    Ok((mean, cov))
}

/// `w = (Zᵀ Σ_b Z + σ_ε²/N)⁻¹`.
pub fn gls_weight(stats: &SubjectVisitStats, sigma_b: &DMatrix<f64>, sigma_eps: f64) -> Result<f64> {
    if stats.n_visits == 0 {
        return invalid("subject has no visits");
    }
    if stats.z.len() != sigma_b.nrows() {
        return Err(Error::Dimension("Z does not match Σ_b".into()));
    }
    let z = DVector::from_column_slice(&stats.z);
    let v = z.dot(&(sigma_b * &z)) + sigma_eps * sigma_eps / stats.n_visits as f64;
    if !(v > 0.0) {
        return invalid("weight denominator is not positive");
    }
    Ok(1.0 / v)
}

/// Bias vector for the fixed effects:
/// `(Σ X w Xᵀ)⁻¹ Σ X w Zᵀ E[b | intervals]`. `gammas`, when given, sets a
/// per-subject loading vector.
pub fn bias_general(
    population: &[SubjectVisitStats],
    params: &MemoryIntervalParams,
    sigma_eps: f64,
    gammas: Option<&[Vec<f64>]>,
) -> Result<DVector<f64>> {
    if population.is_empty() {
        return invalid("empty population");
    }
    if let Some(g) = gammas {
        if g.len() != population.len() {
            return Err(Error::Dimension("one gamma per subject is required".into()));
        }
    }
    let sigma_b = build_psi(&params.re_spec)?;
    let p = population[0].x.len();
    let mut xwx = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (i, s) in population.iter().enumerate() {
        if s.x.len() != p {
            return Err(Error::Dimension(format!("subject {i} has {} covariates, expected {p}", s.x.len())));
        }
        let gamma = gammas.map(|g| g[i].as_slice()).unwrap_or(&params.gamma);
        let w = gls_weight(s, &sigma_b, sigma_eps)?;
        let (mean, _) = conditional_moments_with(s, &sigma_b, gamma, &params.alpha, params.sigma_eta)?;
        let x = DVector::from_column_slice(&s.x);
        xwx += &x * x.transpose() * w;
        rhs += &x * (w * dot(&s.z, mean.as_slice()));
    }
    let cond = condition_number(&xwx);
    if !(cond < 1e12) {
        return Err(Error::SingularDesign(format!("Σ X w Xᵀ is singular (condition number {cond:.3e})")));
    }
    let chol = xwx.cholesky().ok_or_else(|| Error::SingularDesign("Σ X w Xᵀ not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// A bias value and its Monte Carlo standard error from subject-level variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasValue {
    pub bias: f64,
    pub mc_se: f64,
}

/// Normalised weighted mean of `k` and the delta-method SE of that ratio.
fn weighted_mean(w: &[f64], k: &[f64]) -> BiasValue {
    let sw: f64 = w.iter().sum();
    let m = dot(w, k) / sw;
    let v: f64 = w.iter().zip(k).map(|(wi, ki)| (wi * (ki - m)).powi(2)).sum();
    BiasValue { bias: m, mc_se: v.sqrt() / sw }
}

fn intercept_kernel(s: &SubjectVisitStats, mean_interval: f64, gamma0: f64, r: f64) -> f64 {
    let n = s.n_visits as f64;
    (s.u_sum - n * mean_interval) / gamma0 / (n + r)
}

fn intercept_weight(s: &SubjectVisitStats, sigma_b: f64, sigma_eps: f64) -> f64 {
    1.0 / (sigma_b * sigma_b + sigma_eps * sigma_eps / s.n_visits as f64)
}

/// Bias in the intercept of the random-intercept model, with its MC SE.
pub fn bias_intercept_only_mc(
    population: &[SubjectVisitStats],
    alpha0: f64,
    gamma0: f64,
    sigma_b: f64,
    sigma_eta: f64,
    sigma_eps: f64,
) -> Result<BiasValue> {
    if population.is_empty() {
        return invalid("empty population");
    }
    if population.iter().any(|s| s.n_visits == 0) {
        return invalid("subject with no visits");
    }
    if gamma0 == 0.0 || sigma_b == 0.0 {
        return Ok(BiasValue { bias: 0.0, mc_se: 0.0 });
    }
    let r = sigma_eta * sigma_eta / (sigma_b * sigma_b * gamma0 * gamma0);
    let w: Vec<f64> = population.iter().map(|s| intercept_weight(s, sigma_b, sigma_eps)).collect();
    let k: Vec<f64> = population.iter().map(|s| intercept_kernel(s, alpha0, gamma0, r)).collect();
    Ok(weighted_mean(&w, &k))
}

pub fn bias_intercept_only(
    population: &[SubjectVisitStats],
    alpha0: f64,
    gamma0: f64,
    sigma_b: f64,
    sigma_eta: f64,
    sigma_eps: f64,
) -> Result<f64> {
    bias_intercept_only_mc(population, alpha0, gamma0, sigma_b, sigma_eta, sigma_eps).map(|b| b.bias)
}

/// Bias in the effect of a binary covariate shared by the outcome and the
/// interval model. The covariate is the last entry of each subject's `x`.
pub fn bias_binary_covariate_mc(
    population: &[SubjectVisitStats],
    alpha0: f64,
    alpha1: f64,
    gamma0: f64,
    sigma_b: f64,
    sigma_eta: f64,
    sigma_eps: f64,
) -> Result<BiasValue> {
    let mut groups: [(Vec<f64>, Vec<f64>); 2] = Default::default();
    let r = if gamma0 == 0.0 || sigma_b == 0.0 {
        f64::INFINITY
    } else {
        sigma_eta * sigma_eta / (sigma_b * sigma_b * gamma0 * gamma0)
    };
    for s in population {
        let x = *s.x.last().ok_or_else(|| Error::Dimension("subject has no covariate".into()))?;
        let g = if x == 1.0 {
            1
        } else if x == 0.0 {
            0
        } else {
            return invalid(format!("covariate value {x} is not binary"));
        };
        if s.n_visits == 0 {
            return invalid("subject with no visits");
        }
        groups[g].0.push(intercept_weight(s, sigma_b, sigma_eps));
        let k = if r.is_infinite() { 0.0 } else { intercept_kernel(s, alpha0 + alpha1 * x, gamma0, r) };
        groups[g].1.push(k);
    }
    if groups.iter().any(|(w, _)| w.is_empty()) {
        return invalid("both covariate groups must be non-empty");
    }
    let b1 = weighted_mean(&groups[1].0, &groups[1].1);
    let b0 = weighted_mean(&groups[0].0, &groups[0].1);
    Ok(BiasValue { bias: b1.bias - b0.bias, mc_se: b1.mc_se.hypot(b0.mc_se) })
}

pub fn bias_binary_covariate(
    population: &[SubjectVisitStats],
    alpha0: f64,
    alpha1: f64,
    gamma0: f64,
    sigma_b: f64,
    sigma_eta: f64,
    sigma_eps: f64,
) -> Result<f64> {
    bias_binary_covariate_mc(population, alpha0, alpha1, gamma0, sigma_b, sigma_eta, sigma_eps).map(|b| b.bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasFormula {
    /// Random-intercept model, bias in the intercept.
    InterceptOnly,
    /// Shared binary covariate, bias in its effect.
    BinaryCovariate,
    /// Refit the outcome model to simulated data and measure the estimand.
    Refit,
}

/// Parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// SD of the random intercept.
    SigmaB,
    /// Magnitude of every non-zero loading, signs kept.
    GammaMagnitude,
    /// Mean interval intercept.
    Alpha0,
    /// Covariate shift of the mean interval.
    Alpha1,
    SigmaEta,
    Tau,
    /// Multiplier on every random-effect SD.
    ReFactor,
}

impl SweepParam {
    pub fn apply(self, base: &MemoryScenario, value: f64) -> Result<MemoryScenario> {
        let mut s = base.clone();
        let iv = &mut s.intervals;
        match self {
            SweepParam::SigmaB => iv.re_spec.sds[0] = value,
            SweepParam::GammaMagnitude => {
                for g in iv.gamma.iter_mut().chain(iv.gamma_time.iter_mut()) {
                    if *g != 0.0 {
                        *g = g.signum() * value;
                    }
                }
            }
            SweepParam::Alpha0 => iv.alpha[0] = value,
            SweepParam::Alpha1 => {
                if iv.alpha.len() < 2 {
                    return invalid("scenario has no covariate effect on the intervals");
                }
                iv.alpha[1] = value;
            }
            SweepParam::SigmaEta => iv.sigma_eta = value,
            SweepParam::Tau => iv.tau = value,
            SweepParam::ReFactor => iv.re_spec = iv.re_spec.scaled(value),
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub value: f64,
    pub bias: f64,
    pub mc_se: f64,
    /// `bias / truth × 100`, absent when the truth is zero.
    pub rel_bias_pct: Option<f64>,
    pub mean_visits: f64,
    /// Refits that failed to converge.
    #[serde(default)]
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub estimand: String,
    pub truth: f64,
    pub formula: BiasFormula,
    pub param: SweepParam,
    pub rows: Vec<BiasRow>,
    pub base: MemoryScenario,
    pub subjects: usize,
    pub reps: usize,
    pub seed: u64,
}

impl BiasReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param", "value", "bias", "mc_se", "rel_bias_pct", "mean_visits", "nonconverged"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:?}", self.param).to_lowercase(),
                r.value.to_string(),
                r.bias.to_string(),
                r.mc_se.to_string(),
                r.rel_bias_pct.map(|v| v.to_string()).unwrap_or_default(),
                r.mean_visits.to_string(),
                r.nonconverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A sweep: one parameter over a grid, other settings at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub formula: BiasFormula,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub base: MemoryScenario,
    /// Subjects per simulated population.
    pub subjects: usize,
    /// Populations per grid point; only refit sweeps use more than one.
    #[serde(default = "one")]
    pub reps: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    /// Preset sweeps: `fig1_sigma_b`, `fig1_gamma`, `fig1_alpha0`,
    /// `fig2_alpha1`, `fig3_re`, `fig3_gamma`, `fig3_alpha0`.
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        let alpha0_grid: Vec<f64> = [8.0, 6.0, 5.0, 4.0, 3.0].iter().map(|k| 200.0 / k).collect();
        let closed = |param, grid: Vec<f64>, base| SweepSpec {
            formula: BiasFormula::InterceptOnly,
            param,
            grid,
            base,
            subjects: 100_000,
            reps: 1,
            seed,
        };
        let refit = |param, grid: Vec<f64>| SweepSpec {
            formula: BiasFormula::Refit,
            param,
            grid,
            base: MemoryScenario::random_slope(),
            subjects: 10_000,
            reps: 4,
            seed,
        };
        let g = 10.0 / 3f64.sqrt();
        Ok(match name {
            "fig1_sigma_b" => closed(SweepParam::SigmaB, vec![0.5, 1.0, 1.5, 2.0, 2.5], MemoryScenario::intercept_only()),
            "fig1_gamma" => closed(SweepParam::GammaMagnitude, vec![0.25, 0.5, 1.0, 1.5, 2.0], MemoryScenario::intercept_only()),
            "fig1_alpha0" => closed(SweepParam::Alpha0, alpha0_grid, MemoryScenario::intercept_only()),
            "fig2_alpha1" => SweepSpec {
                formula: BiasFormula::BinaryCovariate,
                ..closed(
                    SweepParam::Alpha1,
                    vec![0.0, 10.0, 20.0, 40.0, 70.0, 100.0, 150.0, 250.0, 400.0],
                    MemoryScenario::binary_baseline(0.0),
                )
            },
            "fig3_re" => refit(SweepParam::ReFactor, vec![0.5, 1.0, 1.5, 2.0, 2.5]),
            "fig3_gamma" => refit(SweepParam::GammaMagnitude, vec![0.25 * g, 0.5 * g, g, 1.5 * g, 2.0 * g]),
            "fig3_alpha0" => refit(SweepParam::Alpha0, alpha0_grid),
            _ => return Err(Error::Config(format!("unknown sweep '{name}'; known: {}", Self::NAMES.join(", ")))),
        })
    }

    pub const NAMES: [&'static str; 7] =
        ["fig1_sigma_b", "fig1_gamma", "fig1_alpha0", "fig2_alpha1", "fig3_re", "fig3_gamma", "fig3_alpha0"];
}

fn wrap(formula: BiasFormula, s: MemoryScenario) -> StudyScenario {
    match formula {
        BiasFormula::BinaryCovariate => StudyScenario::BinaryBaseline(s),
        _ if s.y_random.len() > 1 => StudyScenario::RandomSlope(s),
        _ => StudyScenario::InterceptOnly(s),
    }
}

/// Closed-form bias for one simulated population.
pub fn formula_bias(formula: BiasFormula, scenario: &MemoryScenario, subjects: usize, seed: u64) -> Result<(BiasValue, f64)> {
    let ds = simulate_study(&wrap(formula, scenario.clone()), subjects, seed)?;
    let mean_visits = ds.total_visits() as f64 / subjects as f64;
    let iv = &scenario.intervals;
    let pop = population_from_dataset(&ds, &iv.h_terms, &scenario.y_fixed, &scenario.y_random)?;
    let sigma_b = iv.re_spec.sds[0];
    let v = match formula {
        BiasFormula::InterceptOnly => {
            bias_intercept_only_mc(&pop, iv.alpha[0], iv.gamma[0], sigma_b, iv.sigma_eta, scenario.sigma_eps)?
        }
        BiasFormula::BinaryCovariate => bias_binary_covariate_mc(
            &pop,
            iv.alpha[0],
            iv.alpha.get(1).copied().unwrap_or(0.0),
            iv.gamma[0],
            sigma_b,
            iv.sigma_eta,
            scenario.sigma_eps,
        )?,
        BiasFormula::Refit => return invalid("refit sweeps have no closed form"),
    };
    Ok((v, mean_visits))
}

/// Mean estimation error of the outcome-only model over `reps` simulated
/// datasets, with MC SE from the spread across datasets.
pub fn refit_bias(
    scenario: &StudyScenario,
    subjects: usize,
    reps: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> Result<(BiasValue, f64, usize)> {
    let est = scenario.estimand();
    let spec = scenario.univariate_spec();
    let mut errs = Vec::with_capacity(reps);
    let mut visits = 0.0;
    let mut nonconv = 0;
    for r in 0..reps {
        let ds = simulate_study(scenario, subjects, seed.wrapping_add(r as u64))?;
        visits += ds.total_visits() as f64 / subjects as f64;
        let fit = fit_lmm(&ds, &spec, settings)?;
        if !fit.converged {
            nonconv += 1;
            continue;
        }
        let e = fit.coef(&est.name).ok_or_else(|| Error::Missing(format!("coefficient {}", est.name)))?;
        errs.push((e.estimate - est.truth, e.se));
    }
    if errs.is_empty() {
        return invalid("no refit converged");
    }
    let n = errs.len() as f64;
    let m = errs.iter().map(|e| e.0).sum::<f64>() / n;
    let mc_se = if errs.len() > 1 {
        (errs.iter().map(|e| (e.0 - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        errs[0].1
    };
    Ok((BiasValue { bias: m, mc_se }, visits / reps as f64, nonconv))
}

/// Evaluates the bias at every grid point. Each grid point reuses the same
/// seed, so differences along the grid are not masked by sampling noise.
pub fn sweep(spec: &SweepSpec, settings: &OptimizerSettings) -> Result<BiasReport> {
    if spec.grid.is_empty() {
        return invalid("sweep grid is empty");
    }
    if spec.subjects == 0 || spec.reps == 0 {
        return invalid("subjects and reps must be positive");
    }
    let estimand = wrap(spec.formula, spec.base.clone()).estimand();
    let rows = spec
        .grid
        .par_iter()
        .map(|&value| {
            let sc = spec.param.apply(&spec.base, value)?;
            let (v, mean_visits, nonconverged) = match spec.formula {
                BiasFormula::Refit => refit_bias(&wrap(spec.formula, sc), spec.subjects, spec.reps, spec.seed, settings)?,
                f => {
                    let (v, mv) = formula_bias(f, &sc, spec.subjects, spec.seed)?;
                    (v, mv, 0)
                }
            };
            Ok(BiasRow {
                value,
                bias: v.bias,
                mc_se: v.mc_se,
                rel_bias_pct: (estimand.truth != 0.0).then(|| v.bias / estimand.truth * 100.0),
                mean_visits,
                nonconverged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        estimand: estimand.name,
        truth: estimand.truth,
        formula: spec.formula,
        param: spec.param,
        rows,
        base: spec.base.clone(),
        subjects: spec.subjects,
        reps: spec.reps,
        seed: spec.seed,
    })
}

/// Closed-form bias next to the empirical bias of an outcome-only fit on the
/// same simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitComparison {
    pub estimand: String,
    pub formula: BiasValue,
    pub empirical: BiasValue,
    pub converged: bool,
}

impl RefitComparison {
    pub fn z_score(&self) -> f64 {
        (self.formula.bias - self.empirical.bias) / self.formula.mc_se.hypot(self.empirical.mc_se)
    }
}

/// For baseline-covariate scenarios: the general closed form against the ML
/// fit. The empirical MC SE is the fitted standard error.
pub fn compare_formula_refit(
    scenario: &MemoryScenario,
    subjects: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> Result<RefitComparison> {
    if scenario.y_fixed.iter().chain(&scenario.y_random).any(|t| !matches!(t, Term::Intercept | Term::Covariate { .. })) {
        return invalid("the closed form needs baseline-only designs");
    }
    let sc = wrap(BiasFormula::InterceptOnly, scenario.clone());
    let ds = simulate_study(&sc, subjects, seed)?;
    let iv = &scenario.intervals;
    let pop = population_from_dataset(&ds, &iv.h_terms, &scenario.y_fixed, &scenario.y_random)?;
    let est = sc.estimand();
    let idx = scenario.y_fixed.iter().position(|t| t.to_string() == est.name).unwrap_or(0);
    let general = bias_general(&pop, iv, scenario.sigma_eps, None)?;
    let formula_se = if scenario.y_fixed.len() == 1 && scenario.y_random.len() == 1 {
        bias_intercept_only_mc(&pop, iv.alpha[0], iv.gamma[0], iv.re_spec.sds[0], iv.sigma_eta, scenario.sigma_eps)?.mc_se
    } else {
        0.0
    };
    let fit = fit_lmm(&ds, &sc.univariate_spec(), settings)?;
    let e = fit.coef(&est.name).ok_or_else(|| Error::Missing(format!("coefficient {}", est.name)))?;
    Ok(RefitComparison {
        estimand: est.name.clone(),
        formula: BiasValue { bias: general[idx], mc_se: formula_se },
        empirical: BiasValue { bias: e.estimate - est.truth, mc_se: e.se },
        converged: fit.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RandomEffectSpec;

    fn stats(n: usize, u: f64) -> SubjectVisitStats {
        SubjectVisitStats { n_visits: n, u_sum: u, h: vec![1.0], x: vec![1.0], z: vec![1.0] }
    }

    fn params(sigma_b: f64, gamma0: f64, sigma_eta: f64) -> MemoryIntervalParams {
        MemoryIntervalParams {
            h_terms: vec![Term::Intercept],
            alpha: vec![200.0 / 3.0],
            gamma: vec![gamma0],
            gamma_time: Vec::new(),
            sigma_eta,
            re_spec: RandomEffectSpec::independent(&["b0"], &[sigma_b]),
            tau: 200.0,
            floor: 7.0,
        }
    }

    #[test]
    fn weight_examples() {
        let s = stats(10, 0.0);
        let w = gls_weight(&s, &DMatrix::from_element(1, 1, 2.0), 5.0).unwrap();
        assert!((w - 1.0 / 4.5).abs() < 1e-15);
        let w = gls_weight(&stats(4, 0.0), &DMatrix::zeros(1, 1), 1.0).unwrap();
        assert!((w - 4.0).abs() < 1e-15);
        assert!(gls_weight(&stats(0, 0.0), &DMatrix::zeros(1, 1), 1.0).is_err());
    }

    #[test]
    fn unlinked_process_leaves_prior() {
        let (m, c) = conditional_re_moments(&stats(3, 250.0), &params(2f64.sqrt(), 0.0, 1.0)).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((c[(0, 0)] - 2.0).abs() < 1e-14);
        let (m, c) = conditional_re_moments(&stats(3, 250.0), &params(2f64.sqrt(), -1.0, 1e8)).unwrap();
        assert!(m[0].abs() < 1e-6 && (c[(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_excess_gives_zero_bias() {
        let a = 200.0 / 3.0;
        let pop = vec![stats(3, 3.0 * a), stats(4, 4.0 * a)];
        assert_eq!(bias_intercept_only(&pop, a, -1.0, 1.0, 1.0, 5.0).unwrap(), 0.0);
        assert!(bias_general(&pop, &params(1.0, -1.0, 1.0), 5.0, None).unwrap()[0].abs() < 1e-15);
        assert!(bias_intercept_only(&[], a, -1.0, 1.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn binary_requires_both_groups() {
        let mut s = stats(3, 200.0);
        s.x = vec![1.0, 1.0];
        assert!(bias_binary_covariate(&[s], 60.0, 0.0, -1.0, 1.0, 1.0, 5.0).is_err());
    }
}
