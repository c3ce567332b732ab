//! Univariate linear mixed models fitted by maximum likelihood.
//!
//! The per-subject covariance is `Z Ψ Zᵀ + σ_ε² I`; fixed effects are profiled
//! out by GLS and the variance parameters (log-SDs and atanh partial
//! correlations, see [`crate::covparam`]) are found with BFGS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covparam::{PsiParam, ResidualParam, ResidualValues};
use crate::data::{CorrFamily, LongitudinalDataset};
use crate::design::{Response, Term};
use crate::error::{invalid, Error, Result};
use crate::fit::{corr_rows, Estimate, FitResult, FittedSpec};
use crate::mixed::{build_blocks, check_design, delta_se, fit_core, ols_start, random_sd_start, MixedModel, Part};
use crate::optim::OptimizerSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmSpec {
    #[serde(default)]
    pub response: Response,
    pub fixed: Vec<Term>,
    #[serde(default)]
    pub random: Vec<Term>,
}

impl LmmSpec {
    pub fn new(fixed: Vec<Term>, random: Vec<Term>) -> Self {
        Self { response: Response::Y, fixed, random }
    }

    pub fn with_response(mut self, response: Response) -> Self {
        self.response = response;
        self
    }

    pub fn random_intercept(fixed: Vec<Term>) -> Self {
        Self::new(fixed, vec![Term::Intercept])
    }

    /// `~ 1 + t` with correlated random intercept and slope.
    pub fn linear_time() -> Self {
        Self::new(vec![Term::Intercept, Term::Time], vec![Term::Intercept, Term::Time])
    }

    pub fn fixed_names(&self) -> Vec<String> {
        self.fixed.iter().map(|t| t.to_string()).collect()
    }

    pub fn random_names(&self) -> Vec<String> {
        self.random.iter().map(|t| format!("b:{t}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.fixed.is_empty() {
            return invalid("at least one fixed term is required");
        }
        Ok(())
    }
}

/// Explicit parameter values for [`lmm_loglik`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmParams {
    pub beta: Vec<f64>,
    pub re_sds: Vec<f64>,
    pub re_corr: Vec<Vec<f64>>,
    pub sigma_eps: f64,
}

impl LmmParams {
    pub fn psi(&self) -> DMatrix<f64> {
        let q = self.re_sds.len();
        DMatrix::from_fn(q, q, |i, j| self.re_corr[i][j] * (self.re_sds[i] * self.re_sds[j]))
    }
}

pub(crate) fn build_model(ds: &LongitudinalDataset, spec: &LmmSpec) -> Result<MixedModel> {
    spec.validate()?;
    let blocks = build_blocks(
        ds,
        &[Part { response: spec.response, fixed: &spec.fixed, random: &spec.random }],
    )?;
    Ok(MixedModel {
        blocks,
        k: 1,
        p: spec.fixed.len(),
        psi: PsiParam::unstructured(spec.random.len()),
        resid: ResidualParam { k: 1, family: CorrFamily::Iid },
    })
}

fn iid_residual(sigma_eps: f64) -> ResidualValues {
    ResidualValues { lambda: DMatrix::from_element(1, 1, sigma_eps * sigma_eps), d: 1.0, c0: 0.0 }
}

/// Exact marginal Gaussian log-likelihood, summed over subjects. Returns
/// `-inf` when a per-subject covariance is not positive definite.
pub fn lmm_loglik(params: &LmmParams, ds: &LongitudinalDataset, spec: &LmmSpec) -> Result<f64> {
    let model = build_model(ds, spec)?;
    if params.beta.len() != model.p {
        return Err(Error::Dimension(format!("{} coefficients for {} fixed terms", params.beta.len(), model.p)));
    }
    if params.re_sds.len() != spec.random.len() || params.re_corr.len() != spec.random.len() {
        return Err(Error::Dimension("random-effect parameters do not match the random terms".into()));
    }
    let beta = DVector::from_column_slice(&params.beta);
    Ok(model.loglik_with(&beta, &params.psi(), &iid_residual(params.sigma_eps)))
}

fn natural_params(psi: &PsiParam, theta: &[f64]) -> Vec<f64> {
    let q = psi.q;
    let tp = &theta[..psi.n_params()];
    let mut out = psi.sds(tp);
    let c = psi.corr(tp);
    for i in 1..q {
        for j in 0..i {
            out.push(c[(i, j)]);
        }
    }
    out.extend(theta[psi.n_params()..].iter().map(|v| v.exp()));
    out
}

pub(crate) fn corr_names(names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for i in 1..names.len() {
        for j in 0..i {
            out.push(format!("corr({},{})", names[j], names[i]));
        }
    }
    out
}

/// Fits the model by ML. Rank-deficient designs are rejected; failure to
/// converge is reported through `converged = false`.
pub fn fit_lmm(ds: &LongitudinalDataset, spec: &LmmSpec, settings: &OptimizerSettings) -> Result<FitResult> {
    if ds.n_subjects() < 2 {
        return invalid("at least two subjects are required");
    }
    let model = build_model(ds, spec)?;
    check_design(&model.blocks, model.p)?;
    let rows = |b: &crate::mixed::Block| 0..b.n;
    let (_, s2) = ols_start(&model.blocks, rows, 0..model.p);
    let sds0 = random_sd_start(&model.blocks, rows, 0..spec.random.len(), s2);
    let q = spec.random.len();
    let mut theta0 = model.psi.to_theta(&sds0, &DMatrix::identity(q, q))?;
    theta0.push(if q > 0 { (0.5 * s2).sqrt().ln() } else { s2.sqrt().ln() });
    let core = fit_core(&model, &theta0, settings);
    Ok(assemble(&model, spec, core))
}

fn assemble(model: &MixedModel, spec: &LmmSpec, core: crate::mixed::CoreFit) -> FitResult {
    let p = model.p;
    let q = model.psi.q;
    let ntp = model.psi.n_params();
    let tp = &core.theta[..ntp];
    let sds = model.psi.sds(tp);
    let corr = model.psi.corr(tp);
    let sigma_eps = core.theta[ntp].exp();
    let (beta_se, var_se) = match &core.cov {
        Some(cov) => {
            let bse = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
            let ct = cov.view((p, p), (core.theta.len(), core.theta.len())).into_owned();
            (bse, delta_se(&core.theta, &ct, |t| natural_params(&model.psi, t)))
        }
        None => (vec![f64::NAN; p], vec![f64::NAN; natural_params(&model.psi, &core.theta).len()]),
    };
    let re_names = spec.random_names();
    let mut var_names: Vec<String> = re_names.iter().map(|n| format!("sd({n})")).collect();
    var_names.extend(corr_names(&re_names));
    var_names.push("sigma_eps".into());
    let var_vals = natural_params(&model.psi, &core.theta);
    FitResult {
        spec: FittedSpec::Univariate(spec.clone()),
        fixed: spec
            .fixed_names()
            .into_iter()
            .zip(core.beta.iter().zip(&beta_se))
            .map(|(name, (&estimate, &se))| Estimate { name, estimate, se })
            .collect(),
        re_names,
        re_sds: sds,
        re_corr: if q > 0 { corr_rows(&corr) } else { Vec::new() },
        sigma_eps,
        sigma_zeta: None,
        rho_eps: None,
        range_d: None,
        nugget_c0: None,
        variance: var_names
            .into_iter()
            .zip(var_vals.iter().zip(&var_se))
            .map(|(name, (&estimate, &se))| Estimate { name, estimate, se })
            .collect(),
        loglik: core.loglik,
        converged: core.converged,
        iterations: core.iterations,
        grad_inf_norm: core.grad_inf_norm,
        message: core.message,
        n_subjects: model.blocks.len(),
        n_obs: model.n_obs(),
        theta: core.theta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBlup {
    pub id: u64,
    pub values: Vec<f64>,
}

/// Conditional means `E[b_i | y_i]` at the fitted parameters, in the order
/// of the fit's random-effect names.
pub fn predict_blups(fit: &FitResult, ds: &LongitudinalDataset) -> Result<Vec<SubjectBlup>> {
    let (model, rv) = match &fit.spec {
        FittedSpec::Univariate(spec) => (build_model(ds, spec)?, iid_residual(fit.sigma_eps)),
        FittedSpec::Joint(spec) => crate::joint::model_and_residual(ds, spec, fit)?,
    };
    let beta = DVector::from_vec(fit.beta());
    let blups = model.blups_with(&beta, &fit.psi(), &rv);
    Ok(model
        .blocks
        .iter()
        .zip(blups)
        .map(|(b, v)| SubjectBlup { id: b.id, values: v.iter().copied().collect() })
        .collect())
}

pub fn icc_from_sds(sigma_b: f64, sigma_eps: f64) -> f64 {
    let vb = sigma_b * sigma_b;
    let total = vb + sigma_eps * sigma_eps;
    if total > 0.0 {
        vb / total
    } else {
        0.0
    }
}

/// Intraclass correlation `σ_b² / (σ_b² + σ_ε²)` of a random-intercept model.
pub fn icc(fit: &FitResult) -> Result<f64> {
    let FittedSpec::Univariate(spec) = &fit.spec else {
        return invalid("ICC is defined for univariate fits");
    };
    let idx = spec
        .random
        .iter()
        .position(|t| *t == Term::Intercept)
        .ok_or_else(|| Error::Invalid("model has no random intercept".into()))?;
    Ok(icc_from_sds(fit.re_sds[idx], fit.sigma_eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SubjectRecord, TimeUnit};
    use std::collections::BTreeMap;

    fn subj(id: u64, t: &[f64], y: &[f64]) -> SubjectRecord {
        SubjectRecord {
            id,
            visit_times: t.to_vec(),
            y: y.to_vec(),
            r: None,
            s: None,
            baseline: BTreeMap::new(),
            u_sum: None,
        }
    }

    #[test]
    fn single_observation_standard_normal() {
        let ds = LongitudinalDataset::new(vec![subj(1, &[0.0], &[0.0])], 1.0, TimeUnit::Years);
        let spec = LmmSpec::new(vec![Term::Intercept], vec![]);
        let p = LmmParams { beta: vec![0.0], re_sds: vec![], re_corr: vec![], sigma_eps: 1.0 };
        let ll = lmm_loglik(&p, &ds, &spec).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn icc_values() {
        assert!((icc_from_sds(1.36, 1.69) - 0.393).abs() < 5e-4);
        assert_eq!(icc_from_sds(0.0, 1.0), 0.0);
        assert!((icc_from_sds(2.0, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_subject_and_rank_deficiency() {
        let ds1 = LongitudinalDataset::new(vec![subj(1, &[0.0, 1.0], &[1.0, 2.0])], 2.0, TimeUnit::Years);
        assert!(fit_lmm(&ds1, &LmmSpec::linear_time(), &OptimizerSettings::default()).is_err());
        let ds = LongitudinalDataset::new(
            vec![subj(1, &[0.0, 1.0], &[1.0, 2.0]), subj(2, &[0.0, 1.0], &[0.5, 1.0])],
            2.0,
            TimeUnit::Years,
        );
        let spec = LmmSpec::new(vec![Term::Intercept, Term::OneMinusExpDecay { rate: 0.0 }], vec![]);
        assert!(matches!(fit_lmm(&ds, &spec, &OptimizerSettings::default()), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn random_term_must_be_in_fixed_span() {
        let ds = LongitudinalDataset::new(
            vec![subj(1, &[0.0, 1.0], &[1.0, 2.0]), subj(2, &[0.0, 1.0, 2.0], &[0.5, 1.0, 0.2])],
            2.0,
            TimeUnit::Years,
        );
        let spec = LmmSpec::new(vec![Term::Intercept], vec![Term::Intercept, Term::Time]);
        assert!(fit_lmm(&ds, &spec, &OptimizerSettings::default()).is_err());
    }
}
