//! Model terms and per-subject design matrices.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SubjectRecord;
use crate::error::{Error, Result};

/// A single column of a fixed- or random-effect design, evaluated per visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Time,
    /// Baseline covariate, constant within subject.
    Covariate { name: String },
    /// Baseline covariate multiplied by time.
    CovariateTime { name: String },
    /// Fractional polynomial basis `1 / (1 + t)^2`.
    FpInvSquare,
    /// Fractional polynomial basis `log(1 + t) / (1 + t)^2`.
    FpLogInvSquare,
    /// `exp(-rate * t)`.
    ExpDecay { rate: f64 },
    /// `t * exp(-rate * t)`.
    TimeExpDecay { rate: f64 },
    /// `1 - exp(-rate * t)`.
    OneMinusExpDecay { rate: f64 },
}

impl Term {
    pub fn covariate(name: &str) -> Self {
        Term::Covariate { name: name.to_string() }
    }

    pub fn eval(&self, t: f64, subject: &SubjectRecord) -> Result<f64> {
        let cov = |name: &str| {
            subject
                .covariate(name)
                .ok_or_else(|| Error::Missing(format!("covariate {name} on subject {}", subject.id)))
        };
        Ok(match self {
            Term::Intercept => 1.0,
            Term::Time => t,
            Term::Covariate { name } => cov(name)?,
            Term::CovariateTime { name } => cov(name)? * t,
            Term::FpInvSquare => 1.0 / (1.0 + t).powi(2),
            Term::FpLogInvSquare => (1.0 + t).ln() / (1.0 + t).powi(2),
            Term::ExpDecay { rate } => (-rate * t).exp(),
            Term::TimeExpDecay { rate } => t * (-rate * t).exp(),
            Term::OneMinusExpDecay { rate } => 1.0 - (-rate * t).exp(),
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "(Intercept)"),
            Term::Time => write!(f, "time"),
            Term::Covariate { name } => write!(f, "{name}"),
            Term::CovariateTime { name } => write!(f, "{name}:time"),
            Term::FpInvSquare => write!(f, "1/(1+t)^2"),
            Term::FpLogInvSquare => write!(f, "log(1+t)/(1+t)^2"),
            Term::ExpDecay { rate } => write!(f, "exp(-{rate}t)"),
            Term::TimeExpDecay { rate } => write!(f, "t*exp(-{rate}t)"),
            Term::OneMinusExpDecay { rate } => write!(f, "1-exp(-{rate}t)"),
        }
    }
}

/// Which per-visit series is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    #[default]
    Y,
    R,
    S,
}

impl Response {
    pub fn values<'a>(&self, subject: &'a SubjectRecord) -> Result<&'a [f64]> {
        match self {
            Response::Y => Ok(&subject.y),
            Response::R => subject
                .r
                .as_deref()
                .ok_or_else(|| Error::Missing(format!("recommended intervals on subject {}", subject.id))),
            Response::S => subject
                .s
                .as_deref()
                .ok_or_else(|| Error::Missing(format!("observed intervals on subject {}", subject.id))),
        }
    }
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Response::Y => write!(f, "y"),
            Response::R => write!(f, "r"),
            Response::S => write!(f, "s"),
        }
    }
}

/// `n_visits x terms.len()` design for one subject.
pub fn design_matrix(terms: &[Term], subject: &SubjectRecord) -> Result<DMatrix<f64>> {
    let n = subject.n_visits();
    let mut m = DMatrix::zeros(n, terms.len());
    for (j, &t) in subject.visit_times.iter().enumerate() {
        for (c, term) in terms.iter().enumerate() {
            m[(j, c)] = term.eval(t, subject)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn terms_evaluate() {
        let mut base = BTreeMap::new();
        base.insert("x".to_string(), 2.0);
        let s = SubjectRecord {
            id: 0,
            visit_times: vec![0.0, 1.0],
            y: vec![0.0, 0.0],
            r: None,
            s: None,
            baseline: base,
            u_sum: None,
        };
        let terms = vec![
            Term::Intercept,
            Term::Time,
            Term::covariate("x"),
            Term::CovariateTime { name: "x".into() },
            Term::FpInvSquare,
            Term::FpLogInvSquare,
            Term::ExpDecay { rate: 4.0 },
            Term::TimeExpDecay { rate: 4.0 },
            Term::OneMinusExpDecay { rate: 4.0 },
        ];
        let m = design_matrix(&terms, &s).unwrap();
        let row1 = [1.0, 1.0, 2.0, 2.0, 0.25, 2f64.ln() / 4.0, (-4f64).exp(), (-4f64).exp(), 1.0 - (-4f64).exp()];
        for (c, v) in row1.iter().enumerate() {
            assert!((m[(1, c)] - v).abs() < 1e-15);
        }
        assert_eq!(m[(0, 4)], 1.0);
        assert!(Term::covariate("missing").eval(0.0, &s).is_err());
    }

    #[test]
    fn terms_parse_from_toml() {
        #[derive(Deserialize)]
        struct W {
            terms: Vec<Term>,
        }
        let w: W = toml::from_str(
            r#"terms = [{ kind = "intercept" }, { kind = "time" }, { kind = "covariate", name = "treat" }, { kind = "exp_decay", rate = 4.0 }]"#,
        )
        .unwrap();
        assert_eq!(w.terms[2], Term::covariate("treat"));
        assert_eq!(w.terms[3], Term::ExpDecay { rate: 4.0 });
    }
}
