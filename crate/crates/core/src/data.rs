//! Shared data model: longitudinal datasets and covariance specifications.
//!
//! Visit times are measured from enrolment, so the first visit may sit at
//! `t = 0`. Each subject carries the outcome `y`, the recommended interval
//! `r` assigned at each visit, and the observed interval `s` that followed
//! it. `u_sum` is the sum of all observed intervals including the one that
//! crosses the end of follow-up, so `u_sum > tau` for generated data.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::cholesky_lower;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Days,
    #[default]
    Years,
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeUnit::Days => write!(f, "days"),
            TimeUnit::Years => write!(f, "years"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u64,
    pub visit_times: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub r: Option<Vec<f64>>,
    #[serde(default)]
    pub s: Option<Vec<f64>>,
    #[serde(default)]
    pub baseline: BTreeMap<String, f64>,
    #[serde(default)]
    pub u_sum: Option<f64>,
}

impl SubjectRecord {
    pub fn n_visits(&self) -> usize {
        self.visit_times.len()
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        self.baseline.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    pub subjects: Vec<SubjectRecord>,
    pub tau: f64,
    #[serde(default)]
    pub time_unit: TimeUnit,
}

impl LongitudinalDataset {
    pub fn new(subjects: Vec<SubjectRecord>, tau: f64, time_unit: TimeUnit) -> Self {
        Self { subjects, tau, time_unit }
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn total_visits(&self) -> usize {
        self.subjects.iter().map(|s| s.n_visits()).sum()
    }

    pub fn has_r(&self) -> bool {
        !self.subjects.is_empty() && self.subjects.iter().all(|s| s.r.is_some())
    }

    pub fn has_s(&self) -> bool {
        !self.subjects.is_empty() && self.subjects.iter().all(|s| s.s.is_some())
    }

    /// Names of baseline covariates present on every subject.
    pub fn covariate_names(&self) -> Vec<String> {
        let Some(first) = self.subjects.first() else {
            return Vec::new();
        };
        first
            .baseline
            .keys()
            .filter(|k| self.subjects.iter().all(|s| s.baseline.contains_key(*k)))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub subject_id: Option<u64>,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal observations, e.g. an absent `r` or `s` column.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, id: Option<u64>, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            subject_id: id,
            field: field.to_string(),
            message: message.into(),
        });
    }
}

const U_SUM_TOL: f64 = 1e-10;

/// Checks every dataset invariant and returns all violations found.
pub fn validate_dataset(ds: &LongitudinalDataset) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !(ds.tau > 0.0) || !ds.tau.is_finite() {
        rep.push(None, "tau", format!("tau must be positive and finite, got {}", ds.tau));
    }
    let mut seen = std::collections::BTreeSet::new();
    for subj in &ds.subjects {
        let id = Some(subj.id);
        if !seen.insert(subj.id) {
            rep.push(id, "id", "duplicate subject id");
        }
        let n = subj.visit_times.len();
        if n == 0 {
            rep.push(id, "visit_times", "no visits");
            continue;
        }
        if subj.visit_times.iter().any(|t| !t.is_finite()) {
            rep.push(id, "visit_times", "non-finite time");
        }
        if subj.visit_times.windows(2).any(|w| !(w[1] > w[0])) {
            rep.push(id, "visit_times", "non-increasing times");
        }
        if subj.visit_times.iter().any(|&t| t < 0.0 || t > ds.tau) {
            rep.push(id, "visit_times", "visit time outside [0, tau]");
        }
        if subj.y.len() != n {
            rep.push(id, "y", format!("expected {} outcomes, found {}", n, subj.y.len()));
        } else if subj.y.iter().any(|v| !v.is_finite()) {
            rep.push(id, "y", "non-finite outcome");
        }
        if let Some(r) = &subj.r {
            if r.len() != n {
                rep.push(id, "r", format!("expected {} intervals, found {}", n, r.len()));
            }
            if r.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                rep.push(id, "r", "non-positive interval");
            }
        }
        if let Some(s) = &subj.s {
            if s.len() != n {
                rep.push(id, "s", format!("expected {} intervals, found {}", n, s.len()));
            }
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                rep.push(id, "s", "non-positive interval");
            }
            if let Some(u) = subj.u_sum {
                let total: f64 = s.iter().sum();
                if (u - total).abs() > U_SUM_TOL * total.abs().max(1.0) {
                    rep.push(id, "u_sum", format!("u_sum {u} differs from sum of s {total}"));
                }
                if s.len() == n && u <= ds.tau {
                    rep.push(id, "u_sum", "u_sum must exceed tau when s covers the final interval");
                }
            }
        }
        if let Some(u) = subj.u_sum {
            if !(u > 0.0) {
                rep.push(id, "u_sum", "u_sum must be positive");
            }
        }
        if subj.baseline.values().any(|v| !v.is_finite()) {
            rep.push(id, "baseline", "non-finite covariate");
        }
    }
    if !ds.subjects.is_empty() {
        if !ds.has_r() {
            rep.notes.push("recommended intervals (r) missing for some or all subjects".into());
        }
        if !ds.has_s() {
            rep.notes.push("observed intervals (s) missing for some or all subjects".into());
        }
    }
    rep
}

/// Joint random-effect specification: names, standard deviations and a
/// correlation matrix over the stacked outcome/visit random effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectSpec {
    pub names: Vec<String>,
    pub sds: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
}

impl RandomEffectSpec {
    /// Independent components with the given standard deviations.
    pub fn independent(names: &[&str], sds: &[f64]) -> Self {
        let q = sds.len();
        let corr = (0..q)
            .map(|i| (0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            sds: sds.to_vec(),
            corr,
        }
    }

    /// Sets the symmetric correlation between components `i` and `j`.
    pub fn with_corr(mut self, i: usize, j: usize, rho: f64) -> Self {
        self.corr[i][j] = rho;
        self.corr[j][i] = rho;
        self
    }

    pub fn dim(&self) -> usize {
        self.sds.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn corr_matrix(&self) -> DMatrix<f64> {
        let q = self.dim();
        DMatrix::from_fn(q, q, |i, j| self.corr[i][j])
    }

    /// Multiplies every standard deviation by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.sds.iter_mut().for_each(|s| *s *= factor);
        out
    }

    fn check_shape(&self) -> Result<()> {
        let q = self.sds.len();
        if self.names.len() != q {
            return Err(Error::Dimension(format!("{} names for {} sds", self.names.len(), q)));
        }
        if self.corr.len() != q || self.corr.iter().any(|row| row.len() != q) {
            return Err(Error::Dimension(format!("correlation matrix must be {q}x{q}")));
        }
        for i in 0..q {
            if (self.corr[i][i] - 1.0).abs() > 1e-12 {
                return invalid(format!("correlation diagonal entry {i} is not 1"));
            }
            for j in 0..q {
                let c = self.corr[i][j];
                if !c.is_finite() || c.abs() > 1.0 {
                    return invalid(format!("correlation ({i},{j}) = {c} outside [-1, 1]"));
                }
                if (c - self.corr[j][i]).abs() > 1e-12 {
                    return invalid(format!("correlation not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(())
    }

    /// Cholesky factor of the correlation matrix. Standard deviations may be zero.
    pub fn corr_cholesky(&self) -> Result<DMatrix<f64>> {
        self.check_shape()?;
        if self.sds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return invalid("standard deviations must be finite and non-negative");
        }
        cholesky_lower(&self.corr_matrix())
    }
}

/// Builds `Ψ = D·corr·D` and verifies it is symmetric positive definite.
pub fn build_psi(spec: &RandomEffectSpec) -> Result<DMatrix<f64>> {
    spec.corr_cholesky()?;
    if spec.sds.iter().any(|s| !(*s > 0.0)) {
        return invalid("standard deviations must be strictly positive");
    }
    let q = spec.dim();
    let psi = DMatrix::from_fn(q, q, |i, j| spec.corr[i][j] * (spec.sds[i] * spec.sds[j]));
    cholesky_lower(&psi)?;
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorrFamily {
    #[default]
    Iid,
    Exponential,
}

/// Residual structure of the bivariate model: `Λ ⊗ Ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub sigma_eps: f64,
    pub sigma_zeta: f64,
    pub rho_eps: f64,
    pub corr_family: CorrFamily,
    pub range_d: f64,
    pub nugget_c0: f64,
}

impl ResidualSpec {
    pub fn iid(sigma_eps: f64, sigma_zeta: f64, rho_eps: f64) -> Self {
        Self {
            sigma_eps,
            sigma_zeta,
            rho_eps,
            corr_family: CorrFamily::Iid,
            range_d: 1.0,
            nugget_c0: 0.0,
        }
    }

    pub fn exponential(sigma_eps: f64, sigma_zeta: f64, rho_eps: f64, d: f64, c0: f64) -> Self {
        Self {
            sigma_eps,
            sigma_zeta,
            rho_eps,
            corr_family: CorrFamily::Exponential,
            range_d: d,
            nugget_c0: c0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eps > 0.0) || !(self.sigma_zeta > 0.0) {
            return invalid("residual standard deviations must be positive");
        }
        if !(self.rho_eps.abs() < 1.0) {
            return invalid(format!("rho_eps = {} must lie in (-1, 1)", self.rho_eps));
        }
        if self.corr_family == CorrFamily::Exponential {
            if !(self.range_d > 0.0) {
                return invalid("range d must be positive");
            }
            if !(0.0..1.0).contains(&self.nugget_c0) {
                return invalid("nugget c0 must lie in [0, 1)");
            }
        }
        Ok(())
    }

    /// The 2x2 cross-response covariance `Λ`.
    pub fn lambda(&self) -> DMatrix<f64> {
        let c = self.rho_eps * self.sigma_eps * self.sigma_zeta;
        DMatrix::from_row_slice(2, 2, &[self.sigma_eps.powi(2), c, c, self.sigma_zeta.powi(2)])
    }
}
