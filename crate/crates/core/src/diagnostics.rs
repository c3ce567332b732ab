//! Pre-analysis checks for whether an outcome-only mixed model is at risk of
//! bias from the visit process.

use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::design::{Response, Term};
use crate::error::{invalid, Error, Result};
use crate::joint::JointSpec;
use crate::lmm::{fit_lmm, icc, predict_blups, LmmSpec};
use crate::optim::OptimizerSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Risk {
    Low,
    Moderate,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Mean visits per subject below this is high risk.
    pub mean_visits: f64,
    /// ICC at or above this is high risk.
    pub icc: f64,
    /// Absolute BLUP correlation at or above this is high risk.
    pub re_corr: f64,
    /// `|estimate| / SE` above this is high risk.
    pub assoc_z: f64,
    /// Statistics within this fraction of a threshold are moderate risk.
    pub moderate_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { mean_visits: 6.0, icc: 0.3, re_corr: 0.4, assoc_z: 3.0, moderate_fraction: 0.75 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mean_visits, self.icc, self.re_corr, self.assoc_z];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("thresholds must be finite and non-negative");
        }
        if !(self.moderate_fraction > 0.0 && self.moderate_fraction <= 1.0) {
            return invalid("moderate_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Risk for a statistic where large values are worse.
    pub fn above(&self, stat: f64, threshold: f64) -> Risk {
        if stat >= threshold {
            Risk::High
        } else if stat >= self.moderate_fraction * threshold {
            Risk::Moderate
        } else {
            Risk::Low
        }
    }

    /// Risk for a statistic where small values are worse.
    pub fn below(&self, stat: f64, threshold: f64) -> Risk {
        if stat < threshold {
            Risk::High
        } else if stat * self.moderate_fraction < threshold {
            Risk::Moderate
        } else {
            Risk::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitsSummary {
    pub n_subjects: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: usize,
    pub max: usize,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution of visit counts per subject.
pub fn visits_summary(ds: &LongitudinalDataset) -> Result<VisitsSummary> {
    if ds.subjects.is_empty() {
        return invalid("dataset has no subjects");
    }
    let mut n: Vec<f64> = ds.subjects.iter().map(|s| s.n_visits() as f64).collect();
    n.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&n, 0.25), quantile(&n, 0.75));
    Ok(VisitsSummary {
        n_subjects: n.len(),
        mean: n.iter().sum::<f64>() / n.len() as f64,
        median: quantile(&n, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        min: n[0] as usize,
        max: n[n.len() - 1] as usize,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccDiagnostic {
    pub icc: f64,
    pub sigma_b: f64,
    pub sigma_eps: f64,
    pub converged: bool,
    pub flag: Risk,
}

pub fn icc_diagnostic(
    ds: &LongitudinalDataset,
    y_spec: &LmmSpec,
    thresholds: &Thresholds,
    settings: &OptimizerSettings,
) -> Result<IccDiagnostic> {
    let fit = fit_lmm(ds, y_spec, settings)?;
    let v = icc(&fit)?;
    let idx = y_spec.random.iter().position(|t| *t == Term::Intercept).unwrap_or(0);
    Ok(IccDiagnostic {
        icc: v,
        sigma_b: fit.re_sds[idx],
        sigma_eps: fit.sigma_eps,
        converged: fit.converged,
        flag: thresholds.above(v, thresholds.icc),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupPair {
    pub id: u64,
    pub y_effect: f64,
    pub r_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReCorrelationDiagnostic {
    pub y_effect: String,
    pub r_effect: String,
    pub correlation: f64,
    pub pairs: Vec<BlupPair>,
    pub converged: bool,
    pub flag: Risk,
}

impl ReCorrelationDiagnostic {
    pub fn write_scatter_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", &self.y_effect, &self.r_effect])?;
        for p in &self.pairs {
            w.write_record([p.id.to_string(), p.y_effect.to_string(), p.r_effect.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn intercept_index(spec: &LmmSpec) -> usize {
    spec.random.iter().position(|t| *t == Term::Intercept).unwrap_or(0)
}

/// Separate fits of the outcome and the recommended intervals, then the
/// Pearson correlation of the subjects' predicted random intercepts.
pub fn re_correlation_diagnostic(
    ds: &LongitudinalDataset,
    y_spec: &LmmSpec,
    r_spec: &LmmSpec,
    thresholds: &Thresholds,
    settings: &OptimizerSettings,
) -> Result<ReCorrelationDiagnostic> {
    if !ds.has_r() {
        return Err(Error::Missing(
            "recommended intervals; a frailty model of the observed intervals would be needed instead and is not provided"
                .into(),
        ));
    }
    if y_spec.random.is_empty() || r_spec.random.is_empty() {
        return invalid("both models need random effects");
    }
    let r_spec = r_spec.clone().with_response(Response::R);
    let fy = fit_lmm(ds, y_spec, settings)?;
    let fr = fit_lmm(ds, &r_spec, settings)?;
    let (iy, ir) = (intercept_index(y_spec), intercept_index(&r_spec));
    let by = predict_blups(&fy, ds)?;
    let br = predict_blups(&fr, ds)?;
    let pairs: Vec<BlupPair> = by
        .iter()
        .zip(&br)
        .map(|(a, b)| BlupPair { id: a.id, y_effect: a.values[iy], r_effect: b.values[ir] })
        .collect();
    let x: Vec<f64> = pairs.iter().map(|p| p.y_effect).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.r_effect).collect();
    let c = pearson(&x, &y);
    Ok(ReCorrelationDiagnostic {
        y_effect: format!("y:{}", y_spec.random[iy]),
        r_effect: format!("r:{}", r_spec.random[ir]),
        correlation: c,
        pairs,
        converged: fy.converged && fr.converged,
        flag: if c.is_finite() { thresholds.above(c.abs(), thresholds.re_corr) } else { Risk::Low },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateAssociation {
    pub covariate: String,
    pub response: Response,
    pub estimate: f64,
    pub se: f64,
    pub converged: bool,
    pub flag: Risk,
}

/// Effect of a baseline covariate on the recommended intervals (or the
/// observed ones when R is absent), from a random-intercept model.
pub fn covariate_association_diagnostic(
    ds: &LongitudinalDataset,
    covariate: &str,
    thresholds: &Thresholds,
    settings: &OptimizerSettings,
) -> Result<CovariateAssociation> {
    let values = ds
        .subjects
        .iter()
        .map(|s| s.covariate(covariate).ok_or_else(|| Error::Missing(format!("covariate {covariate} on subject {}", s.id))))
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().all(|v| *v == values[0]) {
        return invalid(format!("covariate {covariate} is constant"));
    }
    let response = if ds.has_r() {
        Response::R
    } else if ds.has_s() {
        Response::S
    } else {
        return Err(Error::Missing("visit intervals (R or S)".into()));
    };
    let spec = LmmSpec::random_intercept(vec![Term::Intercept, Term::covariate(covariate)]).with_response(response);
    let fit = fit_lmm(ds, &spec, settings)?;
    let e = fit.coef(covariate).ok_or_else(|| Error::Missing(format!("coefficient {covariate}")))?;
    let z = if e.se > 0.0 { e.estimate.abs() / e.se } else { f64::INFINITY };
    Ok(CovariateAssociation {
        covariate: covariate.to_string(),
        response,
        estimate: e.estimate,
        se: e.se,
        converged: fit.converged,
        flag: thresholds.above(z, thresholds.assoc_z),
    })
}

/// Models used by the diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSpecs {
    pub y_spec: LmmSpec,
    pub r_spec: LmmSpec,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl DiagnosticSpecs {
    /// Outcome and interval models with a linear time trend and correlated
    /// random intercepts and slopes; every baseline covariate is checked.
    pub fn linear(ds: &LongitudinalDataset) -> Self {
        Self {
            y_spec: LmmSpec::linear_time(),
            r_spec: LmmSpec::linear_time().with_response(Response::R),
            covariates: ds.covariate_names(),
        }
    }

    /// The two margins of a joint model.
    pub fn from_joint(spec: &JointSpec, covariates: Vec<String>) -> Self {
        Self { y_spec: spec.y_spec(), r_spec: spec.r_spec(), covariates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub thresholds: Thresholds,
    pub visits: VisitsSummary,
    pub visits_flag: Risk,
    pub icc: Option<IccDiagnostic>,
    pub re_correlation: Option<ReCorrelationDiagnostic>,
    pub associations: Vec<CovariateAssociation>,
    /// Sub-diagnostics that could not be computed, with the reason.
    pub failures: Vec<String>,
    pub recommend_joint: bool,
    pub recommendation: String,
}

impl DiagnosticReport {
    pub fn flags(&self) -> Vec<(String, Risk)> {
        let mut out = vec![("visits".to_string(), self.visits_flag)];
        if let Some(i) = &self.icc {
            out.push(("icc".into(), i.flag));
        }
        if let Some(r) = &self.re_correlation {
            out.push(("re_correlation".into(), r.flag));
        }
        out.extend(self.associations.iter().map(|a| (format!("covariate:{}", a.covariate), a.flag)));
        out
    }
}

/// Runs all four checks. Failures of individual checks are recorded in the
/// report instead of aborting it.
pub fn diagnose(
    ds: &LongitudinalDataset,
    specs: &DiagnosticSpecs,
    thresholds: &Thresholds,
    settings: &OptimizerSettings,
) -> Result<DiagnosticReport> {
    thresholds.validate()?;
    let visits = visits_summary(ds)?;
    let mut failures = Vec::new();
    let icc = icc_diagnostic(ds, &specs.y_spec, thresholds, settings)
        .map_err(|e| failures.push(format!("icc: {e}")))
        .ok();
    let re_correlation = re_correlation_diagnostic(ds, &specs.y_spec, &specs.r_spec, thresholds, settings)
        .map_err(|e| failures.push(format!("re_correlation: {e}")))
        .ok();
    let associations = specs
        .covariates
        .iter()
        .filter_map(|c| {
            covariate_association_diagnostic(ds, c, thresholds, settings)
                .map_err(|e| failures.push(format!("covariate {c}: {e}")))
                .ok()
        })
        .collect();
    let mut report = DiagnosticReport {
        thresholds: *thresholds,
        visits_flag: thresholds.below(visits.mean, thresholds.mean_visits),
        visits,
        icc,
        re_correlation,
        associations,
        failures,
        recommend_joint: false,
        recommendation: String::new(),
    };
    let high: Vec<String> = report.flags().into_iter().filter(|f| f.1 == Risk::High).map(|f| f.0).collect();
    report.recommend_joint = !high.is_empty();
    report.recommendation = if high.is_empty() {
        "no high-risk factor found; an outcome-only mixed model is reasonable".into()
    } else {
        format!("consider a joint model of the outcome and visit process (high risk: {})", high.join(", "))
    };
    Ok(report)
}
