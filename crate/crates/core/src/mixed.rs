//! Marginal Gaussian likelihood for one or two stacked responses with random
//! effects and `Λ ⊗ Ω` residual covariance, plus the generic ML driver.
//!
//! Per subject the response vector is stacked response-major:
//! `(y_1..y_n, r_1..r_n)`. Its covariance is `W Ψ Wᵀ + Λ ⊗ Ω`, where block
//! `(a, b)` of `Λ ⊗ Ω` is `Λ[a, b] · Ω`. Fixed effects are profiled out by GLS.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covparam::{PsiParam, ResidualParam, ResidualValues};
use crate::data::CorrFamily;
use crate::optim::{bfgs, OptimizerSettings};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub id: u64,
    pub n: usize,
    pub times: Vec<f64>,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct MixedModel {
    pub blocks: Vec<Block>,
    pub k: usize,
    pub p: usize,
    pub psi: PsiParam,
    pub resid: ResidualParam,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub grad: Vec<f64>,
}

/// Exponential correlation with multiplicative nugget: unit diagonal,
/// `(1 - c0) exp(-|t_i - t_j| / d)` off the diagonal.
pub(crate) fn omega_exponential_matrix(times: &[f64], d: f64, c0: f64) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (1.0 - c0) * (-(times[i] - times[j]).abs() / d).exp()
        }
    })
}

struct Grads {
    g_psi: DMatrix<f64>,
    g_lam: DMatrix<f64>,
    g_d: f64,
    g_c0: f64,
    g_beta: DVector<f64>,
}

impl MixedModel {
    pub fn n_obs(&self) -> usize {
        self.blocks.iter().map(|b| b.y.len()).sum()
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.psi.n_params())
    }

    fn omega(&self, b: &Block, rv: &ResidualValues) -> Option<DMatrix<f64>> {
        match self.resid.family {
            CorrFamily::Iid => None,
            CorrFamily::Exponential => Some(omega_exponential_matrix(&b.times, rv.d, rv.c0)),
        }
    }

    pub fn subject_cov(&self, b: &Block, psi: &DMatrix<f64>, rv: &ResidualValues) -> DMatrix<f64> {
        let mut v = &b.w * psi * b.w.transpose();
        let n = b.n;
        let om = self.omega(b, rv);
        for a in 0..self.k {
            for c in 0..self.k {
                let lam = rv.lambda[(a, c)];
                if lam == 0.0 {
                    continue;
                }
                match &om {
                    None => {
                        for j in 0..n {
                            v[(a * n + j, c * n + j)] += lam;
                        }
                    }
                    Some(o) => {
                        for j in 0..n {
                            for l in 0..n {
                                v[(a * n + j, c * n + l)] += lam * o[(j, l)];
                            }
                        }
                    }
                }
            }
        }
        v
    }

    fn accumulate(&self, b: &Block, vinv: &DMatrix<f64>, a: &DVector<f64>, rv: &ResidualValues, g: &mut Grads) {
        let n = b.n;
        let mut m = a * a.transpose();
        m -= vinv;
        g.g_psi += b.w.transpose() * &m * &b.w;
        g.g_beta += b.x.transpose() * a;
        let om = self.omega(b, rv);
        let mut mt = DMatrix::<f64>::zeros(n, n);
        for r in 0..self.k {
            for c in 0..self.k {
                let mut s = 0.0;
                for j in 0..n {
                    match &om {
                        None => s += m[(r * n + j, c * n + j)],
                        Some(o) => {
                            for l in 0..n {
                                s += m[(r * n + j, c * n + l)] * o[(j, l)];
                            }
                        }
                    }
                }
                g.g_lam[(r, c)] += s;
                if om.is_some() {
                    let lam = rv.lambda[(r, c)];
                    for j in 0..n {
                        for l in 0..n {
                            mt[(j, l)] += lam * m[(r * n + j, c * n + l)];
                        }
                    }
                }
            }
        }
        if om.is_some() {
            for j in 0..n {
                for l in 0..n {
                    if j == l {
                        continue;
                    }
                    let h = (b.times[j] - b.times[l]).abs();
                    let e = (-h / rv.d).exp();
                    g.g_d += mt[(j, l)] * (1.0 - rv.c0) * e * h / (rv.d * rv.d);
                    g.g_c0 -= mt[(j, l)] * e;
                }
            }
        }
    }

    fn finish_grad(&self, theta: &[f64], g: &Grads) -> Vec<f64> {
        let (tp, tr) = self.split(theta);
        let (_, dpsi) = self.psi.psi_with_grad(tp);
        let mut out: Vec<f64> = dpsi.iter().map(|d| 0.5 * g.g_psi.component_mul(d).sum()).collect();
        for d in self.resid.lambda_grads(tr) {
            out.push(0.5 * g.g_lam.component_mul(&d).sum());
        }
        if self.resid.family == CorrFamily::Exponential {
            let (dd, dc) = self.resid.omega_raw_derivs(tr);
            out.push(0.5 * g.g_d * dd);
            out.push(0.5 * g.g_c0 * dc);
        }
        out
    }

    fn new_grads(&self) -> Grads {
        Grads {
            g_psi: DMatrix::zeros(self.psi.q, self.psi.q),
            g_lam: DMatrix::zeros(self.k, self.k),
            g_d: 0.0,
            g_c0: 0.0,
            g_beta: DVector::zeros(self.p),
        }
    }

    /// Log-likelihood at explicit `(β, Ψ, Λ, Ω)`; `-inf` if any covariance is not PD.
    pub fn loglik_with(&self, beta: &DVector<f64>, psi: &DMatrix<f64>, rv: &ResidualValues) -> f64 {
        let mut ll = 0.0;
        for b in &self.blocks {
            let v = self.subject_cov(b, psi, rv);
            let Some(chol) = v.cholesky() else {
                return f64::NEG_INFINITY;
            };
            let r = &b.y - &b.x * beta;
            let a = chol.solve(&r);
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            ll -= 0.5 * (b.y.len() as f64 * LN_2PI + logdet + r.dot(&a));
        }
        ll
    }

    /// BLUPs at explicit parameter values.
    pub fn blups_with(&self, beta: &DVector<f64>, psi: &DMatrix<f64>, rv: &ResidualValues) -> Vec<DVector<f64>> {
        self.blocks
            .iter()
            .map(|b| {
                let v = self.subject_cov(b, psi, rv);
                let r = &b.y - &b.x * beta;
                match v.cholesky() {
                    Some(chol) => psi * b.w.transpose() * chol.solve(&r),
                    None => DVector::from_element(self.psi.q, f64::NAN),
                }
            })
            .collect()
    }

    /// Log-likelihood at explicit `(β, θ)`, with the gradient in `(β, θ)` order.
    pub fn full(&self, beta: &DVector<f64>, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (tp, tr) = self.split(theta);
        let psi = self.psi.psi(tp);
        let rv = self.resid.values(tr);
        let mut ll = 0.0;
        let mut g = self.new_grads();
        for b in &self.blocks {
            let v = self.subject_cov(b, &psi, &rv);
            let Some(chol) = v.cholesky() else {
                return (f64::NEG_INFINITY, vec![f64::NAN; self.p + theta.len()]);
            };
            let r = &b.y - &b.x * beta;
            let a = chol.solve(&r);
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            ll -= 0.5 * (b.y.len() as f64 * LN_2PI + logdet + r.dot(&a));
            if want_grad {
                let vinv = chol.inverse();
                self.accumulate(b, &vinv, &a, &rv, &mut g);
            }
        }
        if !want_grad {
            return (ll, Vec::new());
        }
        let mut grad: Vec<f64> = g.g_beta.iter().copied().collect();
        grad.extend(self.finish_grad(theta, &g));
        (ll, grad)
    }

    /// Profile log-likelihood over θ with β at its GLS value.
    pub fn profiled(&self, theta: &[f64], want_grad: bool) -> Evaluation {
        let bad = || Evaluation {
            loglik: f64::NEG_INFINITY,
            beta: DVector::zeros(self.p),
            grad: vec![f64::NAN; theta.len()],
        };
        let (tp, tr) = self.split(theta);
        let psi = self.psi.psi(tp);
        let rv = self.resid.values(tr);
        let mut xtvx = DMatrix::<f64>::zeros(self.p, self.p);
        let mut xtvy = DVector::<f64>::zeros(self.p);
        let mut logdet = 0.0;
        let mut chols = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let v = self.subject_cov(b, &psi, &rv);
            let Some(chol) = v.cholesky() else {
                return bad();
            };
            let vx = chol.solve(&b.x);
            xtvx += b.x.transpose() * &vx;
            xtvy += vx.transpose() * &b.y;
            logdet += chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
            chols.push(chol);
        }
        let Some(xchol) = xtvx.cholesky() else {
            return bad();
        };
        let beta = xchol.solve(&xtvy);
        let mut quad = 0.0;
        let mut g = self.new_grads();
        let mut n_obs = 0usize;
        for (b, chol) in self.blocks.iter().zip(&chols) {
            let r = &b.y - &b.x * &beta;
            let a = chol.solve(&r);
            quad += r.dot(&a);
            n_obs += b.y.len();
            if want_grad {
                let vinv = chol.clone().inverse();
                self.accumulate(b, &vinv, &a, &rv, &mut g);
            }
        }
        let loglik = -0.5 * (n_obs as f64 * LN_2PI + logdet + quad);
        let grad = if want_grad { self.finish_grad(theta, &g) } else { Vec::new() };
        if !loglik.is_finite() {
            return bad();
        }
        Evaluation { loglik, beta, grad }
    }

    /// Observed information in `(β, θ)` by central differences of the analytic gradient.
    pub fn observed_information(&self, beta: &DVector<f64>, theta: &[f64]) -> DMatrix<f64> {
        let p = self.p;
        let dim = p + theta.len();
        let base: Vec<f64> = beta.iter().copied().chain(theta.iter().copied()).collect();
        let grad_at = |x: &[f64]| {
            let b = DVector::from_column_slice(&x[..p]);
            self.full(&b, &x[p..], true).1
        };
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let step = 1e-5 * base[j].abs().max(1.0);
            let mut up = base.clone();
            let mut dn = base.clone();
            up[j] += step;
            dn[j] -= step;
            let gu = grad_at(&up);
            let gd = grad_at(&dn);
            for i in 0..dim {
                h[(i, j)] = -(gu[i] - gd[i]) / (2.0 * step);
            }
        }
        crate::linalg::symmetrize(&mut h);
        h
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CoreFit {
    pub theta: Vec<f64>,
    pub beta: DVector<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_inf_norm: f64,
    pub message: String,
    /// Covariance of `(β, θ)` from the observed information, if invertible.
    pub cov: Option<DMatrix<f64>>,
}

/// Maximises the profile likelihood from `theta0` plus `settings.starts - 1`
/// deterministic perturbations of it, keeping the best converged optimum.
pub(crate) fn fit_core(model: &MixedModel, theta0: &[f64], settings: &OptimizerSettings) -> CoreFit {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e_ed0f_57a7);
    let mut best: Option<(crate::optim::Minimum, usize)> = None;
    let mut total_iter = 0;
    for s in 0..settings.starts.max(1) {
        let start: Vec<f64> = if s == 0 {
            theta0.to_vec()
        } else {
            theta0.iter().map(|v| v + rng.random_range(-0.75..0.75)).collect()
        };
        let m = bfgs(
            |t| {
                let e = model.profiled(t, true);
                (-e.loglik, e.grad.iter().map(|g| -g).collect())
            },
            &start,
            settings,
        );
        total_iter += m.iterations;
        let better = match &best {
            None => true,
            Some((b, _)) => {
                (m.converged && !b.converged)
                    || (m.converged == b.converged && m.f.is_finite() && (m.f < b.f || !b.f.is_finite()))
            }
        };
        if better {
            best = Some((m, s));
        }
    }
    let (m, _) = best.expect("at least one start");
    let e = model.profiled(&m.x, false);
    let info = model.observed_information(&e.beta, &m.x);
    let cov = info.clone().cholesky().map(|c| c.inverse());
    CoreFit {
        loglik: e.loglik,
        beta: e.beta,
        converged: m.converged,
        iterations: total_iter,
        grad_inf_norm: m.grad_inf_norm(),
        message: m.message.clone(),
        theta: m.x,
        cov,
    }
}

/// Delta-method standard errors for a smooth map of θ.
pub(crate) fn delta_se<F>(theta: &[f64], cov_theta: &DMatrix<f64>, map: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let base = map(theta);
    let m = base.len();
    let k = theta.len();
    let mut jac = DMatrix::<f64>::zeros(m, k);
    for j in 0..k {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let fu = map(&up);
        let fd = map(&dn);
        for i in 0..m {
            jac[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
        }
    }
    let c = &jac * cov_theta * jac.transpose();
    (0..m).map(|i| c[(i, i)].max(0.0).sqrt()).collect()
}

/// One response's contribution to a stacked model.
pub(crate) struct Part<'a> {
    pub response: crate::design::Response,
    pub fixed: &'a [crate::design::Term],
    pub random: &'a [crate::design::Term],
}

/// Builds per-subject blocks with block-diagonal fixed and random designs.
pub(crate) fn build_blocks(
    ds: &crate::data::LongitudinalDataset,
    parts: &[Part<'_>],
) -> crate::error::Result<Vec<Block>> {
    use crate::design::design_matrix;
    let p: usize = parts.iter().map(|pt| pt.fixed.len()).sum();
    let q: usize = parts.iter().map(|pt| pt.random.len()).sum();
    let k = parts.len();
    let mut blocks = Vec::with_capacity(ds.subjects.len());
    for subj in &ds.subjects {
        let n = subj.n_visits();
        let mut y = DVector::zeros(k * n);
        let mut x = DMatrix::zeros(k * n, p);
        let mut w = DMatrix::zeros(k * n, q);
        let (mut pc, mut qc) = (0, 0);
        for (a, part) in parts.iter().enumerate() {
            let vals = part.response.values(subj)?;
            if vals.len() != n {
                return Err(crate::error::Error::Dimension(format!(
                    "subject {}: {} values for {} visits",
                    subj.id,
                    vals.len(),
                    n
                )));
            }
            let xf = design_matrix(part.fixed, subj)?;
            let zr = design_matrix(part.random, subj)?;
            for j in 0..n {
                y[a * n + j] = vals[j];
                for c in 0..part.fixed.len() {
                    x[(a * n + j, pc + c)] = xf[(j, c)];
                }
                for c in 0..part.random.len() {
                    w[(a * n + j, qc + c)] = zr[(j, c)];
                }
            }
            pc += part.fixed.len();
            qc += part.random.len();
        }
        blocks.push(Block { id: subj.id, n, times: subj.visit_times.clone(), y, x, w });
    }
    Ok(blocks)
}

/// Rejects rank-deficient fixed designs and random columns outside the fixed span.
pub(crate) fn check_design(blocks: &[Block], p: usize) -> crate::error::Result<()> {
    use crate::error::Error;
    let q = blocks.first().map(|b| b.w.ncols()).unwrap_or(0);
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xtz = DMatrix::<f64>::zeros(p, q);
    let mut ztz = DVector::<f64>::zeros(q);
    for b in blocks {
        xtx += b.x.transpose() * &b.x;
        xtz += b.x.transpose() * &b.w;
        for c in 0..q {
            ztz[c] += b.w.column(c).norm_squared();
        }
    }
    let cond = crate::linalg::condition_number(&xtx);
    if !(cond < 1e14) {
        return Err(Error::SingularDesign(format!("fixed-effect design is rank deficient (condition number {cond:.3e})")));
    }
    let chol = xtx.clone().cholesky().ok_or_else(|| Error::SingularDesign("X'X not positive definite".into()))?;
    for c in 0..q {
        let coef = chol.solve(&xtz.column(c).into_owned());
        // ||z - X coef||^2 = z'z - coef' X'z
        let resid = ztz[c] - coef.dot(&xtz.column(c));
        if resid > 1e-8 * ztz[c].max(1e-300) {
            return Err(Error::Invalid(format!(
                "random-effect column {c} is not representable from the fixed-effect design"
            )));
        }
    }
    Ok(())
}

/// OLS coefficients and residual variance over all stacked rows of one response.
pub(crate) fn ols_start(blocks: &[Block], rows: impl Fn(&Block) -> std::ops::Range<usize>, cols: std::ops::Range<usize>) -> (DVector<f64>, f64) {
    let p = cols.len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut n = 0usize;
    for b in blocks {
        let r = rows(b);
        let x = b.x.view((r.start, cols.start), (r.len(), p));
        let y = b.y.rows(r.start, r.len());
        xtx += x.transpose() * x;
        xty += x.transpose() * y;
        n += r.len();
    }
    let beta = xtx.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(p));
    let mut rss = 0.0;
    for b in blocks {
        let r = rows(b);
        let x = b.x.view((r.start, cols.start), (r.len(), p));
        let y = b.y.rows(r.start, r.len());
        rss += (y - x * &beta).norm_squared();
    }
    let s2 = rss / (n.saturating_sub(p).max(1)) as f64;
    (beta, s2.max(1e-12))
}

/// Starting SDs for random terms: half the residual variance, scaled by each column's RMS.
pub(crate) fn random_sd_start(blocks: &[Block], rows: impl Fn(&Block) -> std::ops::Range<usize>, cols: std::ops::Range<usize>, s2: f64) -> Vec<f64> {
    cols.map(|c| {
        let mut ss = 0.0;
        let mut n = 0usize;
        for b in blocks {
            for j in rows(b) {
                ss += b.w[(j, c)].powi(2);
                n += 1;
            }
        }
        let rms = (ss / n.max(1) as f64).sqrt().max(1e-8);
        (0.5 * s2).sqrt() / rms
    })
    .collect()
}
