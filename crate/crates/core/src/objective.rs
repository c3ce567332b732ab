//! The ML objective behind `fit_lmm` and `fit_joint`, on the unconstrained
//! scale the optimizer works in (`FitResult::theta`).

use nalgebra::DVector;

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::joint::{self, JointSpec};
use crate::lmm::{self, LmmSpec};
use crate::mixed::MixedModel;

#[derive(Debug, Clone)]
pub struct Objective {
    model: MixedModel,
}

impl Objective {
    pub fn univariate(ds: &LongitudinalDataset, spec: &LmmSpec) -> Result<Self> {
        Ok(Self { model: lmm::build_model(ds, spec)? })
    }

    pub fn joint(ds: &LongitudinalDataset, spec: &JointSpec) -> Result<Self> {
        Ok(Self { model: joint::build_model(ds, spec)? })
    }

    /// Fixed effects, `Y` then `R` for joint models.
    pub fn n_fixed(&self) -> usize {
        self.model.p
    }

    pub fn n_theta(&self) -> usize {
        self.model.psi.n_params() + self.model.resid.n_params()
    }

    fn check(&self, beta: Option<&[f64]>, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_theta() {
            return Err(Error::Dimension(format!("{} values for {} covariance parameters", theta.len(), self.n_theta())));
        }
        match beta {
            Some(b) if b.len() != self.model.p => {
                Err(Error::Dimension(format!("{} coefficients for {} fixed effects", b.len(), self.model.p)))
            }
            _ => Ok(()),
        }
    }

    /// Log-likelihood and its gradient in `(β, θ)` order.
    pub fn loglik_grad(&self, beta: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(Some(beta), theta)?;
        Ok(self.model.full(&DVector::from_column_slice(beta), theta, true))
    }

    pub fn loglik(&self, beta: &[f64], theta: &[f64]) -> Result<f64> {
        self.check(Some(beta), theta)?;
        Ok(self.model.full(&DVector::from_column_slice(beta), theta, false).0)
    }

    /// Profile log-likelihood with `β` at its GLS value; returns the value,
    /// the gradient in `θ` and the GLS `β`.
    pub fn profiled(&self, theta: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(None, theta)?;
        let e = self.model.profiled(theta, true);
        Ok((e.loglik, e.grad, e.beta.iter().copied().collect()))
    }
}
