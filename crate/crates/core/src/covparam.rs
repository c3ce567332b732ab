//! Unconstrained parameterisations of the variance components.
//!
//! Random-effect covariance: log standard deviations plus the canonical
//! partial correlations of the correlation matrix, each on the atanh scale.
//! The onion construction of the correlation Cholesky factor keeps every
//! parameter vector inside the positive-definite cone; with two components
//! the single partial correlation is the ordinary correlation.
//!
//! Residual covariance: log standard deviations and atanh cross-correlation
//! for `Λ`, and bounded logistic transforms for the range `d` and nugget `c0`.

use nalgebra::DMatrix;

use crate::data::CorrFamily;
use crate::error::{invalid, Result};
use crate::linalg::cholesky_lower;

const Z_CLAMP: f64 = 15.0;

pub const RANGE_MIN: f64 = 1e-3;
pub const RANGE_MAX: f64 = 1e2;
pub const NUGGET_MAX: f64 = 0.95;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Parameterisation of a `q x q` random-effect covariance.
#[derive(Debug, Clone)]
pub struct PsiParam {
    pub q: usize,
    /// One flag per (row, col) pair below the diagonal, row-major. Fixed
    /// partial correlations are held at zero.
    pub free: Vec<bool>,
}

impl PsiParam {
    pub fn unstructured(q: usize) -> Self {
        Self { q, free: vec![true; q * q.saturating_sub(1) / 2] }
    }

    /// Two uncorrelated blocks: the first `q1` components and the rest.
    pub fn block_diagonal(q1: usize, q2: usize) -> Self {
        let q = q1 + q2;
        let mut free = Vec::new();
        for i in 1..q {
            for j in 0..i {
                free.push((i < q1) || (j >= q1));
            }
        }
        Self { q, free }
    }

    pub fn n_params(&self) -> usize {
        self.q + self.free.iter().filter(|f| **f).count()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.q).flat_map(|i| (0..i).map(move |j| (i, j)))
    }

    fn partials(&self, theta: &[f64]) -> Vec<f64> {
        let mut k = self.q;
        self.free
            .iter()
            .map(|&f| {
                if f {
                    let z = theta[k].clamp(-Z_CLAMP, Z_CLAMP).tanh();
                    k += 1;
                    z
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn corr_factor(&self, z: &[f64]) -> DMatrix<f64> {
        let q = self.q;
        let mut l = DMatrix::zeros(q, q);
        if q == 0 {
            return l;
        }
        l[(0, 0)] = 1.0;
        let mut k = 0;
        for i in 1..q {
            let mut acc: f64 = 0.0;
            for j in 0..i {
                let v = z[k] * (1.0 - acc).max(0.0).sqrt();
                l[(i, j)] = v;
                acc += v * v;
                k += 1;
            }
            l[(i, i)] = (1.0 - acc).max(0.0).sqrt();
        }
        l
    }

    pub fn sds(&self, theta: &[f64]) -> Vec<f64> {
        theta[..self.q].iter().map(|v| v.exp()).collect()
    }

    pub fn corr(&self, theta: &[f64]) -> DMatrix<f64> {
        let l = self.corr_factor(&self.partials(theta));
        &l * l.transpose()
    }

    pub fn psi(&self, theta: &[f64]) -> DMatrix<f64> {
        let sd = self.sds(theta);
        let c = self.corr(theta);
        DMatrix::from_fn(self.q, self.q, |i, j| c[(i, j)] * (sd[i] * sd[j]))
    }

    /// Ψ and its derivative with respect to every parameter.
    pub fn psi_with_grad(&self, theta: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let q = self.q;
        let sd = self.sds(theta);
        let z = self.partials(theta);
        let l = self.corr_factor(&z);
        let c = &l * l.transpose();
        let psi = DMatrix::from_fn(q, q, |i, j| c[(i, j)] * (sd[i] * sd[j]));
        let mut grads = Vec::with_capacity(self.n_params());
        for k in 0..q {
            grads.push(DMatrix::from_fn(q, q, |i, j| {
                let w = (i == k) as u8 as f64 + (j == k) as u8 as f64;
                w * psi[(i, j)]
            }));
        }
        for (idx, (i, m)) in self.pairs().enumerate() {
            if !self.free[idx] {
                continue;
            }
            // Only row i of L depends on z_{i,m}.
            let mut dl = DMatrix::<f64>::zeros(q, q);
            let row_start = i * (i - 1) / 2;
            let mut acc: f64 = 0.0;
            let mut dacc = 0.0;
            for j in 0..i {
                let zij = z[row_start + j];
                let s = (1.0 - acc).max(0.0).sqrt();
                let d = if j < m {
                    0.0
                } else if j == m {
                    s
                } else if s > 0.0 {
                    -zij * dacc / (2.0 * s)
                } else {
                    0.0
                };
                dl[(i, j)] = d;
                acc += l[(i, j)] * l[(i, j)];
                dacc += 2.0 * l[(i, j)] * d;
            }
            dl[(i, i)] = if l[(i, i)] > 0.0 { -dacc / (2.0 * l[(i, i)]) } else { 0.0 };
            let dz = 1.0 - z[idx] * z[idx];
            let dc = &dl * l.transpose() + &l * dl.transpose();
            grads.push(DMatrix::from_fn(q, q, |a, b| sd[a] * dc[(a, b)] * sd[b] * dz));
        }
        (psi, grads)
    }

    /// Inverse map from standard deviations and a correlation matrix.
    pub fn to_theta(&self, sds: &[f64], corr: &DMatrix<f64>) -> Result<Vec<f64>> {
        if sds.len() != self.q || sds.iter().any(|s| !(*s > 0.0)) {
            return invalid("starting standard deviations must be positive");
        }
        let l = cholesky_lower(corr)?;
        let mut theta: Vec<f64> = sds.iter().map(|s| s.ln()).collect();
        for (idx, (i, j)) in self.pairs().enumerate() {
            if !self.free[idx] {
                continue;
            }
            let acc: f64 = (0..j).map(|k| l[(i, k)] * l[(i, k)]).sum();
            let z = (l[(i, j)] / (1.0 - acc).max(1e-300).sqrt()).clamp(-0.999999, 0.999999);
            theta.push(z.atanh());
        }
        Ok(theta)
    }
}

/// Parameterisation of `Λ ⊗ Ω` for one or two responses.
#[derive(Debug, Clone)]
pub struct ResidualParam {
    pub k: usize,
    pub family: CorrFamily,
}

#[derive(Debug, Clone)]
pub struct ResidualValues {
    pub lambda: DMatrix<f64>,
    pub d: f64,
    pub c0: f64,
}

impl ResidualParam {
    pub fn n_params(&self) -> usize {
        self.k + self.k * (self.k - 1) / 2 + self.omega_params()
    }

    pub fn omega_params(&self) -> usize {
        match self.family {
            CorrFamily::Iid => 0,
            CorrFamily::Exponential => 2,
        }
    }

    fn rho(&self, theta: &[f64]) -> f64 {
        if self.k == 2 {
            theta[2].clamp(-Z_CLAMP, Z_CLAMP).tanh()
        } else {
            0.0
        }
    }

    pub fn values(&self, theta: &[f64]) -> ResidualValues {
        let sd: Vec<f64> = theta[..self.k].iter().map(|v| v.exp()).collect();
        let rho = self.rho(theta);
        let lambda = DMatrix::from_fn(self.k, self.k, |i, j| {
            if i == j {
                sd[i] * sd[i]
            } else {
                rho * sd[0] * sd[1]
            }
        });
        let (d, c0) = match self.family {
            CorrFamily::Iid => (1.0, 0.0),
            CorrFamily::Exponential => {
                let o = self.k + self.k * (self.k - 1) / 2;
                (range_from_raw(theta[o]), NUGGET_MAX * logistic(theta[o + 1]))
            }
        };
        ResidualValues { lambda, d, c0 }
    }

    /// Derivatives of Λ for the Λ parameters, and of (d, c0) w.r.t. their raw parameters.
    pub fn lambda_grads(&self, theta: &[f64]) -> Vec<DMatrix<f64>> {
        let vals = self.values(theta);
        let lam = &vals.lambda;
        let mut out = Vec::new();
        for k in 0..self.k {
            out.push(DMatrix::from_fn(self.k, self.k, |i, j| {
                let w = (i == k) as u8 as f64 + (j == k) as u8 as f64;
                w * lam[(i, j)]
            }));
        }
        if self.k == 2 {
            let rho = self.rho(theta);
            let off = (1.0 - rho * rho) * (lam[(0, 0)] * lam[(1, 1)]).sqrt();
            out.push(DMatrix::from_row_slice(2, 2, &[0.0, off, off, 0.0]));
        }
        out
    }

    pub fn omega_raw_derivs(&self, theta: &[f64]) -> (f64, f64) {
        let o = self.k + self.k * (self.k - 1) / 2;
        let s = logistic(theta[o]);
        let d = range_from_raw(theta[o]);
        let dd = d * (RANGE_MAX.ln() - RANGE_MIN.ln()) * s * (1.0 - s);
        let t = logistic(theta[o + 1]);
        (dd, NUGGET_MAX * t * (1.0 - t))
    }

    pub fn to_theta(&self, sds: &[f64], rho: f64, d: f64, c0: f64) -> Vec<f64> {
        let mut t: Vec<f64> = sds.iter().take(self.k).map(|s| s.ln()).collect();
        if self.k == 2 {
            t.push(rho.clamp(-0.99, 0.99).atanh());
        }
        if self.family == CorrFamily::Exponential {
            let dd = d.clamp(RANGE_MIN * 1.01, RANGE_MAX * 0.99);
            let frac = (dd.ln() - RANGE_MIN.ln()) / (RANGE_MAX.ln() - RANGE_MIN.ln());
            t.push(logit(frac));
            t.push(logit((c0 / NUGGET_MAX).clamp(0.01, 0.99)));
        }
        t
    }
}

fn range_from_raw(x: f64) -> f64 {
    (RANGE_MIN.ln() + (RANGE_MAX.ln() - RANGE_MIN.ln()) * logistic(x)).exp()
}
