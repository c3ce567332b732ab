//! Bivariate mixed model for the outcome `Y` and the recommended interval `R`.
//!
//! Both responses share correlated random effects and a separable residual
//! covariance `Λ ⊗ Ω_i`, where `Λ` is the 2x2 cross-response covariance and
//! `Ω_i` a correlation matrix over the subject's visit times. Stacking is
//! response-major: `(y_1..y_n, r_1..r_n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covparam::{PsiParam, ResidualParam, ResidualValues};
use crate::data::{build_psi, CorrFamily, LongitudinalDataset, RandomEffectSpec, ResidualSpec};
use crate::design::{Response, Term};
use crate::error::{invalid, Error, Result};
use crate::fit::{corr_rows, Estimate, FitResult, FittedSpec};
use crate::linalg::{cholesky_lower, kron};
use crate::lmm::{corr_names, fit_lmm, LmmSpec};
use crate::mixed::{build_blocks, check_design, delta_se, fit_core, omega_exponential_matrix, MixedModel, Part};
use crate::optim::OptimizerSettings;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub y_fixed: Vec<Term>,
    pub r_fixed: Vec<Term>,
    pub y_random: Vec<Term>,
    pub r_random: Vec<Term>,
    /// Free correlations between the `Y` and `R` random effects. When false
    /// Ψ is block diagonal.
    #[serde(default = "default_true")]
    pub cross_correlated: bool,
    #[serde(default)]
    pub residual: CorrFamily,
}

impl JointSpec {
    pub fn new(y_fixed: Vec<Term>, r_fixed: Vec<Term>, y_random: Vec<Term>, r_random: Vec<Term>) -> Self {
        Self { y_fixed, r_fixed, y_random, r_random, cross_correlated: true, residual: CorrFamily::Iid }
    }

    pub fn with_residual(mut self, family: CorrFamily) -> Self {
        self.residual = family;
        self
    }

    pub fn decoupled(mut self) -> Self {
        self.cross_correlated = false;
        self
    }

    pub fn q(&self) -> usize {
        self.y_random.len() + self.r_random.len()
    }

    pub fn y_spec(&self) -> LmmSpec {
        LmmSpec::new(self.y_fixed.clone(), self.y_random.clone())
    }

    pub fn r_spec(&self) -> LmmSpec {
        LmmSpec::new(self.r_fixed.clone(), self.r_random.clone()).with_response(Response::R)
    }

    pub fn fixed_names(&self) -> Vec<String> {
        self.y_fixed
            .iter()
            .map(|t| t.to_string())
            .chain(self.r_fixed.iter().map(|t| format!("r:{t}")))
            .collect()
    }

    pub fn random_names(&self) -> Vec<String> {
        self.y_random
            .iter()
            .map(|t| format!("b:{t}"))
            .chain(self.r_random.iter().map(|t| format!("u:{t}")))
            .collect()
    }

    fn psi_param(&self) -> PsiParam {
        if self.cross_correlated {
            PsiParam::unstructured(self.q())
        } else {
            PsiParam::block_diagonal(self.y_random.len(), self.r_random.len())
        }
    }

    fn validate(&self) -> Result<()> {
        if self.y_fixed.is_empty() || self.r_fixed.is_empty() {
            return invalid("both submodels need at least one fixed term");
        }
        Ok(())
    }
}

/// Exponential correlation matrix over one subject's visit times.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    pub times: Vec<f64>,
    pub range_d: f64,
    pub nugget_c0: f64,
    pub entries: DMatrix<f64>,
}

pub fn omega_exponential(times: &[f64], d: f64, c0: f64) -> Result<OmegaMatrix> {
    if !(d > 0.0) {
        return invalid(format!("range d = {d} must be positive"));
    }
    if !(0.0..1.0).contains(&c0) {
        return invalid(format!("nugget c0 = {c0} must lie in [0, 1)"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return invalid("visit times must be finite");
    }
    if c0 == 0.0 {
        for i in 0..times.len() {
            for j in i + 1..times.len() {
                if times[i] == times[j] {
                    return Err(Error::DuplicateTimes(i, j));
                }
            }
        }
    }
    let entries = omega_exponential_matrix(times, d, c0);
    cholesky_lower(&entries)?;
    Ok(OmegaMatrix { times: times.to_vec(), range_d: d, nugget_c0: c0, entries })
}

/// `Λ ⊗ Ω`: block `(a, b)` of size `n x n` is `Λ[a, b] · Ω`.
pub fn assemble_sigma(lambda: &DMatrix<f64>, omega: &OmegaMatrix) -> Result<DMatrix<f64>> {
    if lambda.nrows() != 2 || lambda.ncols() != 2 {
        return Err(Error::Dimension(format!("Λ must be 2x2, got {}x{}", lambda.nrows(), lambda.ncols())));
    }
    let n = omega.times.len();
    if omega.entries.nrows() != n || omega.entries.ncols() != n {
        return Err(Error::Dimension("Ω does not match its visit times".into()));
    }
    cholesky_lower(lambda)?;
    Ok(kron(lambda, &omega.entries))
}

/// Explicit parameter values for [`joint_loglik`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Stacked `(b, u)` random effects.
    pub re: RandomEffectSpec,
    pub residual: ResidualSpec,
}

pub(crate) fn build_model(ds: &LongitudinalDataset, spec: &JointSpec) -> Result<MixedModel> {
    spec.validate()?;
    if !ds.has_r() {
        return Err(Error::Missing(
            "recommended intervals R are required for the joint model; fit Y alone with the univariate model".into(),
        ));
    }
    let blocks = build_blocks(
        ds,
        &[
            Part { response: Response::Y, fixed: &spec.y_fixed, random: &spec.y_random },
            Part { response: Response::R, fixed: &spec.r_fixed, random: &spec.r_random },
        ],
    )?;
    Ok(MixedModel {
        blocks,
        k: 2,
        p: spec.y_fixed.len() + spec.r_fixed.len(),
        psi: spec.psi_param(),
        resid: ResidualParam { k: 2, family: spec.residual },
    })
}

fn residual_values(r: &ResidualSpec) -> ResidualValues {
    match r.corr_family {
        CorrFamily::Iid => ResidualValues { lambda: r.lambda(), d: 1.0, c0: 0.0 },
        CorrFamily::Exponential => ResidualValues { lambda: r.lambda(), d: r.range_d, c0: r.nugget_c0 },
    }
}

/// Exact Gaussian log-likelihood of the stacked `(Y, R)` data; `-inf` when a
/// per-subject covariance is not positive definite.
pub fn joint_loglik(params: &JointParams, ds: &LongitudinalDataset, spec: &JointSpec) -> Result<f64> {
    let mut spec = spec.clone();
    spec.residual = params.residual.corr_family;
    let model = build_model(ds, &spec)?;
    if params.beta.len() != spec.y_fixed.len() || params.alpha.len() != spec.r_fixed.len() {
        return Err(Error::Dimension("fixed-effect vectors do not match the fixed terms".into()));
    }
    if params.re.dim() != spec.q() {
        return Err(Error::Dimension(format!("{} random effects for {} random terms", params.re.dim(), spec.q())));
    }
    params.residual.validate()?;
    let psi = DMatrix::from_fn(spec.q(), spec.q(), |i, j| {
        params.re.corr[i][j] * (params.re.sds[i] * params.re.sds[j])
    });
    let coef = DVector::from_iterator(model.p, params.beta.iter().chain(&params.alpha).copied());
    Ok(model.loglik_with(&coef, &psi, &residual_values(&params.residual)))
}

pub(crate) fn model_and_residual(
    ds: &LongitudinalDataset,
    spec: &JointSpec,
    fit: &FitResult,
) -> Result<(MixedModel, ResidualValues)> {
    let model = build_model(ds, spec)?;
    let r = ResidualSpec {
        sigma_eps: fit.sigma_eps,
        sigma_zeta: fit.sigma_zeta.unwrap_or(f64::NAN),
        rho_eps: fit.rho_eps.unwrap_or(0.0),
        corr_family: spec.residual,
        range_d: fit.range_d.unwrap_or(1.0),
        nugget_c0: fit.nugget_c0.unwrap_or(0.0),
    };
    Ok((model, residual_values(&r)))
}

fn natural_params(model: &MixedModel, theta: &[f64]) -> Vec<f64> {
    let ntp = model.psi.n_params();
    let (tp, tr) = theta.split_at(ntp);
    let mut out = model.psi.sds(tp);
    let c = model.psi.corr(tp);
    for i in 1..model.psi.q {
        for j in 0..i {
            out.push(c[(i, j)]);
        }
    }
    let rv = model.resid.values(tr);
    let se = rv.lambda[(0, 0)].sqrt();
    let sz = rv.lambda[(1, 1)].sqrt();
    out.extend([se, sz, rv.lambda[(0, 1)] / (se * sz)]);
    if model.resid.family == CorrFamily::Exponential {
        out.extend([rv.d, rv.c0]);
    }
    out
}

/// ML fit of the joint model. Starting values come from separate univariate
/// fits of `Y` and `R` with zero cross-correlation.
pub fn fit_joint(ds: &LongitudinalDataset, spec: &JointSpec, settings: &OptimizerSettings) -> Result<FitResult> {
    if ds.n_subjects() < 2 {
        return invalid("at least two subjects are required");
    }
    let model = build_model(ds, spec)?;
    check_design(&model.blocks, model.p)?;
    let quick = OptimizerSettings { starts: 1, ..*settings };
    let fy = fit_lmm(ds, &spec.y_spec(), &quick)?;
    let fr = fit_lmm(ds, &spec.r_spec(), &quick)?;
    let sane = |v: f64, fallback: f64| if v.is_finite() && v > 1e-6 { v } else { fallback };
    let mut sds: Vec<f64> = fy.re_sds.iter().chain(&fr.re_sds).map(|&s| sane(s, 1e-2)).collect();
    let q = spec.q();
    sds.truncate(q);
    let mut corr = DMatrix::<f64>::identity(q, q);
    let qy = spec.y_random.len();
    for i in 0..qy {
        for j in 0..qy {
            if i != j {
                corr[(i, j)] = fy.re_corr[i][j].clamp(-0.9, 0.9);
            }
        }
    }
    for i in 0..spec.r_random.len() {
        for j in 0..spec.r_random.len() {
            if i != j {
                corr[(qy + i, qy + j)] = fr.re_corr[i][j].clamp(-0.9, 0.9);
            }
        }
    }
    if cholesky_lower(&corr).is_err() {
        corr = DMatrix::identity(q, q);
    }
    let mut theta0 = model.psi.to_theta(&sds, &corr)?;
    let (d0, c00) = (0.25 * ds.tau.max(1e-2), 0.3);
    theta0.extend(model.resid.to_theta(&[sane(fy.sigma_eps, 1.0), sane(fr.sigma_eps, 1.0)], 0.0, d0, c00));
    let core = fit_core(&model, &theta0, settings);
    Ok(assemble(&model, spec, core))
}

fn assemble(model: &MixedModel, spec: &JointSpec, core: crate::mixed::CoreFit) -> FitResult {
    let p = model.p;
    let ntp = model.psi.n_params();
    let tp = &core.theta[..ntp];
    let rv = model.resid.values(&core.theta[ntp..]);
    let natural = natural_params(model, &core.theta);
    let (beta_se, var_se) = match &core.cov {
        Some(cov) => {
            let bse = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
            let n = core.theta.len();
            let ct = cov.view((p, p), (n, n)).into_owned();
            (bse, delta_se(&core.theta, &ct, |t| natural_params(model, t)))
        }
        None => (vec![f64::NAN; p], vec![f64::NAN; natural.len()]),
    };
    let re_names = spec.random_names();
    let mut var_names: Vec<String> = re_names.iter().map(|n| format!("sd({n})")).collect();
    var_names.extend(corr_names(&re_names));
    var_names.extend(["sigma_eps".to_string(), "sigma_zeta".into(), "rho_eps".into()]);
    let exponential = spec.residual == CorrFamily::Exponential;
    if exponential {
        var_names.extend(["range_d".to_string(), "nugget_c0".into()]);
    }
    let se = rv.lambda[(0, 0)].sqrt();
    let sz = rv.lambda[(1, 1)].sqrt();
    FitResult {
        spec: FittedSpec::Joint(spec.clone()),
        fixed: spec
            .fixed_names()
            .into_iter()
            .zip(core.beta.iter().zip(&beta_se))
            .map(|(name, (&estimate, &se))| Estimate { name, estimate, se })
            .collect(),
        re_names,
        re_sds: model.psi.sds(tp),
        re_corr: corr_rows(&model.psi.corr(tp)),
        sigma_eps: se,
        sigma_zeta: Some(sz),
        rho_eps: Some(rv.lambda[(0, 1)] / (se * sz)),
        range_d: exponential.then_some(rv.d),
        nugget_c0: exponential.then_some(rv.c0),
        variance: var_names
            .into_iter()
            .zip(natural.iter().zip(&var_se))
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

/// Ψ for explicit stacked random-effect parameters, validated.
pub fn stacked_psi(re: &RandomEffectSpec) -> Result<DMatrix<f64>> {
    build_psi(re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_examples() {
        let o = omega_exponential(&[0.3], 0.5, 0.0).unwrap();
        assert_eq!(o.entries, DMatrix::from_element(1, 1, 1.0));
        let o = omega_exponential(&[0.0, 0.5], 0.5, 0.0).unwrap();
        assert!((o.entries[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        let o = omega_exponential(&[0.0, 0.1, 0.4], 1e-8, 0.0).unwrap();
        assert!((o.entries.clone() - DMatrix::identity(3, 3)).abs().max() < 1e-6);
        assert!(matches!(omega_exponential(&[0.0, 0.2, 0.2], 0.5, 0.0), Err(Error::DuplicateTimes(1, 2))));
        assert!(omega_exponential(&[0.0, 0.2, 0.2], 0.5, 0.4).is_ok());
        assert!(omega_exponential(&[0.0], 0.0, 0.0).is_err());
        assert!(omega_exponential(&[0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_identity_and_dimension_check() {
        let o = omega_exponential(&[0.0, 1.0, 2.0], 1e-9, 0.0).unwrap();
        let s = assemble_sigma(&DMatrix::identity(2, 2), &o).unwrap();
        assert!((s - DMatrix::identity(6, 6)).abs().max() < 1e-12);
        assert!(assemble_sigma(&DMatrix::identity(3, 3), &o).is_err());
    }
}
