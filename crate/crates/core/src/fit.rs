use serde::{Deserialize, Serialize};

use crate::joint::JointSpec;
use crate::lmm::LmmSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedSpec {
    Univariate(LmmSpec),
    Joint(JointSpec),
}

/// Maximum-likelihood fit of a univariate or joint mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: FittedSpec,
    pub fixed: Vec<Estimate>,
    pub re_names: Vec<String>,
    pub re_sds: Vec<f64>,
    pub re_corr: Vec<Vec<f64>>,
    pub sigma_eps: f64,
    #[serde(default)]
    pub sigma_zeta: Option<f64>,
    #[serde(default)]
    pub rho_eps: Option<f64>,
    #[serde(default)]
    pub range_d: Option<f64>,
    #[serde(default)]
    pub nugget_c0: Option<f64>,
    /// Variance parameters on their natural scale with delta-method SEs.
    pub variance: Vec<Estimate>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_inf_norm: f64,
    pub message: String,
    pub n_subjects: usize,
    pub n_obs: usize,
    /// Optimum on the unconstrained scale.
    pub theta: Vec<f64>,
}

impl FitResult {
    pub fn coef(&self, name: &str) -> Option<&Estimate> {
        self.fixed.iter().find(|e| e.name == name)
    }

    pub fn variance_param(&self, name: &str) -> Option<&Estimate> {
        self.variance.iter().find(|e| e.name == name)
    }

    pub fn beta(&self) -> Vec<f64> {
        self.fixed.iter().map(|e| e.estimate).collect()
    }

    pub fn psi(&self) -> nalgebra::DMatrix<f64> {
        let q = self.re_sds.len();
        nalgebra::DMatrix::from_fn(q, q, |i, j| self.re_corr[i][j] * (self.re_sds[i] * self.re_sds[j]))
    }
}

pub(crate) fn corr_rows(c: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..c.nrows()).map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect()).collect()
}
