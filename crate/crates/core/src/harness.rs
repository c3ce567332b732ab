//! Replication engine: simulate, fit, record the estimand, aggregate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::joint::fit_joint;
use crate::lmm::fit_lmm;
use crate::optim::OptimizerSettings;
use crate::sim::{simulate_study, ClinicScenario, StudyScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitter {
    Univariate,
    Joint,
}

impl std::fmt::Display for Fitter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fitter::Univariate => "univariate",
            Fitter::Joint => "joint",
        })
    }
}

/// Departures from a clinic scenario's high-bias configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    #[serde(default)]
    pub tau: Option<f64>,
    /// Correlation between the two random slopes.
    #[serde(default)]
    pub slope_corr: Option<f64>,
    /// Divides every random-effect variance.
    #[serde(default)]
    pub re_divisor: Option<f64>,
    #[serde(default)]
    pub homogenized: bool,
    #[serde(default)]
    pub decay: Option<f64>,
}

impl Knobs {
    pub fn is_default(&self) -> bool {
        *self == Knobs::default()
    }

    pub fn apply(&self, scenario: &StudyScenario) -> Result<StudyScenario> {
        let mut sc = scenario.clone();
        if self.is_default() {
            return Ok(sc);
        }
        let Some(c) = sc.clinic_mut() else {
            return invalid("variation knobs apply only to the clinic studies");
        };
        let mut next: ClinicScenario = c.clone();
        if let Some(t) = self.tau {
            next = next.with_tau(t);
        }
        if let Some(r) = self.slope_corr {
            next = next.with_slope_corr(r)?;
        }
        if let Some(k) = self.re_divisor {
            if !(k > 0.0) {
                return invalid("re_divisor must be positive");
            }
            next = next.with_re_divisor(k);
        }
        if self.homogenized {
            next = next.homogenized();
        }
        if let Some(k) = self.decay {
            next = next.with_decay(k);
        }
        *c = next;
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    /// Cell label used in tables.
    pub name: String,
    pub scenario: StudyScenario,
    #[serde(default)]
    pub knobs: Knobs,
    pub n_subjects: usize,
    pub n_reps: usize,
    /// The joint model is fitted on the first `n_joint_reps` reps only.
    #[serde(default)]
    pub n_joint_reps: Option<usize>,
    pub fitters: Vec<Fitter>,
    pub seed: u64,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

impl ReplicationPlan {
    pub fn new(name: &str, scenario: StudyScenario, n_subjects: usize, n_reps: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            scenario,
            knobs: Knobs::default(),
            n_subjects,
            n_reps,
            n_joint_reps: None,
            fitters: vec![Fitter::Univariate, Fitter::Joint],
            seed,
            settings: OptimizerSettings::default(),
        }
    }

    pub fn with_fitters(mut self, fitters: &[Fitter]) -> Self {
        self.fitters = fitters.to_vec();
        self
    }

    pub fn with_knobs(mut self, knobs: Knobs) -> Self {
        self.knobs = knobs;
        self
    }

    /// Cells of the two replication tables by name, e.g. `table1_high`,
    /// `table1_tau_low`, `table2_study3_low`.
    pub fn named(name: &str, n_reps: usize, seed: u64) -> Result<Self> {
        let k = |f: fn(&mut Knobs)| {
            let mut kn = Knobs::default();
            f(&mut kn);
            kn
        };
        let (scenario, knobs) = match name {
            "table1_high" => (StudyScenario::study1(), Knobs::default()),
            "table1_tau_medium" => (StudyScenario::study1(), k(|k| k.tau = Some(3.0))),
            "table1_tau_low" => (StudyScenario::study1(), k(|k| k.tau = Some(4.0))),
            "table1_corr_medium" => (StudyScenario::study1(), k(|k| k.slope_corr = Some(-0.3))),
            "table1_corr_low" => (StudyScenario::study1(), k(|k| k.slope_corr = Some(0.0))),
            "table1_re_medium" => (StudyScenario::study1(), k(|k| k.re_divisor = Some(4.0))),
            "table1_re_low" => (StudyScenario::study1(), k(|k| k.re_divisor = Some(10.0))),
            "table2_study2_high" => (StudyScenario::study2(), Knobs::default()),
            "table2_study2_homogenized" => (StudyScenario::study2(), k(|k| k.homogenized = true)),
            "table2_study3_high" => (StudyScenario::study3(), Knobs::default()),
            "table2_study3_low" => (StudyScenario::study3(), k(|k| k.decay = Some(2.0))),
            _ => return Err(Error::Config(format!("unknown plan '{name}'; known: {}", Self::NAMES.join(", ")))),
        };
        Ok(Self::new(name, scenario, 200, n_reps, seed).with_knobs(knobs))
    }

    pub const NAMES: [&'static str; 11] = [
        "table1_high",
        "table1_tau_medium",
        "table1_tau_low",
        "table1_corr_medium",
        "table1_corr_low",
        "table1_re_medium",
        "table1_re_low",
        "table2_study2_high",
        "table2_study2_homogenized",
        "table2_study3_high",
        "table2_study3_low",
    ];

    pub fn validate(&self) -> Result<StudyScenario> {
        if self.n_reps < 2 {
            return invalid("n_reps must be at least 2");
        }
        if self.n_subjects < 2 {
            return invalid("n_subjects must be at least 2");
        }
        if self.n_joint_reps.is_some_and(|k| k < 2 || k > self.n_reps) {
            return invalid("n_joint_reps must lie in [2, n_reps]");
        }
        if self.fitters.is_empty() {
            return invalid("no fitters requested");
        }
        let sc = self.knobs.apply(&self.scenario)?;
        let est = sc.estimand();
        if !sc.univariate_spec().fixed_names().contains(&est.name) {
            return invalid(format!("estimand {} missing from the outcome model", est.name));
        }
        if self.fitters.contains(&Fitter::Joint) {
            let js = sc.joint_spec().ok_or_else(|| Error::Invalid("scenario has no joint model".into()))?;
            if !js.fixed_names().contains(&est.name) {
                return invalid(format!("estimand {} missing from the joint model", est.name));
            }
        }
        Ok(sc)
    }
}

/// One fit in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub fitter: Fitter,
    pub converged: bool,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub cell: String,
    pub fitter: Fitter,
    pub estimand: String,
    pub truth: f64,
    pub reps: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub mean_estimate: f64,
    pub rel_bias_pct: f64,
    /// SD of the estimates across converged reps.
    pub ese: f64,
    pub ese_pct: f64,
    /// `ESE/√converged`, raw and as a percentage of the truth.
    pub mc_se: f64,
    pub mc_se_pct: f64,
    #[serde(default)]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
    pub records: Vec<(String, RepRecord)>,
}

/// Seed of replication `rep`.
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add((rep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn fit_one(sc: &StudyScenario, plan: &ReplicationPlan, rep: usize, name: &str) -> Vec<RepRecord> {
    let data = simulate_study(sc, plan.n_subjects, rep_seed(plan.seed, rep));
    plan.fitters
        .iter()
        .filter(|&&f| f != Fitter::Joint || plan.n_joint_reps.is_none_or(|k| rep < k))
        .map(|&fitter| {
            let fit = data.as_ref().map_err(|e| e.to_string()).and_then(|ds| {
                match fitter {
                    Fitter::Univariate => fit_lmm(ds, &sc.univariate_spec(), &plan.settings),
                    Fitter::Joint => match sc.joint_spec() {
                        Some(js) => fit_joint(ds, &js, &plan.settings),
                        None => Err(Error::Invalid("scenario has no joint model".into())),
                    },
                }
                .map_err(|e| e.to_string())
            });
            match fit {
                Ok(f) => {
                    let e = f.coef(name);
                    RepRecord {
                        rep,
                        fitter,
                        converged: f.converged && e.is_some(),
                        estimate: e.map(|e| e.estimate),
                        se: e.map(|e| e.se),
                        error: None,
                    }
                }
                Err(msg) => RepRecord { rep, fitter, converged: false, estimate: None, se: None, error: Some(msg) },
            }
        })
        .collect()
}

/// Summary of a set of estimates of an estimand with the given truth.
pub fn summarize(cell: &str, fitter: Fitter, estimand: &str, truth: f64, records: &[&RepRecord]) -> ReplicationRow {
    let est: Vec<f64> = records.iter().filter(|r| r.converged).filter_map(|r| r.estimate).collect();
    let reps = records.len();
    let n = est.len();
    let rate = if reps == 0 { 0.0 } else { n as f64 / reps as f64 };
    let mean = if n == 0 { f64::NAN } else { est.iter().sum::<f64>() / n as f64 };
    let ese = if n < 2 { f64::NAN } else { (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    let mc_se = ese / (n as f64).sqrt();
    let pct = |v: f64| v / truth.abs() * 100.0;
    let warning = (rate < 0.8).then(|| format!("WARNING: only {n} of {reps} replications converged ({:.0}%)", rate * 100.0));
    ReplicationRow {
        cell: cell.to_string(),
        fitter,
        estimand: estimand.to_string(),
        truth,
        reps,
        converged: n,
        convergence_rate: rate,
        mean_estimate: mean,
        rel_bias_pct: (mean - truth) / truth * 100.0,
        ese,
        ese_pct: pct(ese),
        mc_se,
        mc_se_pct: pct(mc_se),
        warning,
    }
}

/// Runs every replication of `plan`. Reps run in parallel, each on its own
/// seed, and are aggregated in rep order, so the table depends only on the plan.
pub fn run_replications(plan: &ReplicationPlan) -> Result<ReplicationTable> {
    let sc = plan.validate()?;
    let est = sc.estimand();
    let per_rep: Vec<Vec<RepRecord>> =
        (0..plan.n_reps).into_par_iter().map(|rep| fit_one(&sc, plan, rep, &est.name)).collect();
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    for r in records.iter().filter(|r| r.error.is_some()) {
        log::warn!("{} rep {} {}: {}", plan.name, r.rep, r.fitter, r.error.as_deref().unwrap_or(""));
    }
    let rows = plan
        .fitters
        .iter()
        .map(|&f| {
            let recs: Vec<&RepRecord> = records.iter().filter(|r| r.fitter == f).collect();
            summarize(&plan.name, f, &est.name, est.truth, &recs)
        })
        .collect();
    Ok(ReplicationTable { rows, records: records.into_iter().map(|r| (plan.name.clone(), r)).collect() })
}

impl ReplicationTable {
    pub fn merge(mut self, other: ReplicationTable) -> Self {
        self.rows.extend(other.rows);
        self.records.extend(other.records);
        self
    }

    pub fn row(&self, cell: &str, fitter: Fitter) -> Option<&ReplicationRow> {
        self.rows.iter().find(|r| r.cell == cell && r.fitter == fitter)
    }

    pub fn has_warnings(&self) -> bool {
        self.rows.iter().any(|r| r.warning.is_some())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cell",
            "fitter",
            "estimand",
            "truth",
            "reps",
            "converged",
            "convergence_rate",
            "mean_estimate",
            "rel_bias_pct",
            "ese",
            "ese_pct",
            "mc_se",
            "mc_se_pct",
            "warning",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.cell.clone(),
                r.fitter.to_string(),
                r.estimand.clone(),
                r.truth.to_string(),
                r.reps.to_string(),
                r.converged.to_string(),
                r.convergence_rate.to_string(),
                r.mean_estimate.to_string(),
                r.rel_bias_pct.to_string(),
                r.ese.to_string(),
                r.ese_pct.to_string(),
                r.mc_se.to_string(),
                r.mc_se_pct.to_string(),
                r.warning.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width text layout with one line per cell and fitter.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in self.rows.iter().filter_map(|r| r.warning.as_ref()) {
            let _ = writeln!(s, "{r}");
        }
        let _ = writeln!(
            s,
            "{:<28} {:<10} {:>12} {:>16} {:>10} {:>9}",
            "cell", "fitter", "estimand", "%bias (ESE%)", "MC SE %", "conv"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:<10} {:>12} {:>16} {:>10.3} {:>8.1}%",
                r.cell,
                r.fitter.to_string(),
                r.estimand,
                format!("{:.3} ({:.2})", r.rel_bias_pct, r.ese_pct),
                r.mc_se_pct,
                r.convergence_rate * 100.0
            );
        }
        s
    }
}

/// Ordering of two cells by absolute bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellContrast {
    pub a: String,
    pub b: String,
    /// `|bias(A)| - |bias(B)|` in percent.
    pub abs_bias_diff_pct: f64,
    pub combined_mc_se_pct: f64,
    /// Difference in units of the combined MC SE.
    pub z: f64,
    pub a_exceeds_b: bool,
}

pub fn compare_cells(
    table: &ReplicationTable,
    a: (&str, Fitter),
    b: (&str, Fitter),
) -> Result<CellContrast> {
    let ra = table.row(a.0, a.1).ok_or_else(|| Error::Missing(format!("cell {} / {}", a.0, a.1)))?;
    let rb = table.row(b.0, b.1).ok_or_else(|| Error::Missing(format!("cell {} / {}", b.0, b.1)))?;
    let diff = ra.rel_bias_pct.abs() - rb.rel_bias_pct.abs();
    let se = if a == b { 0.0 } else { ra.mc_se_pct.hypot(rb.mc_se_pct) };
    Ok(CellContrast {
        a: format!("{}/{}", a.0, a.1),
        b: format!("{}/{}", b.0, b.1),
        abs_bias_diff_pct: diff,
        combined_mc_se_pct: se,
        z: if se > 0.0 { diff / se } else { 0.0 },
        a_exceeds_b: diff > 0.0,
    })
}
