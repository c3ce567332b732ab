//! Command configurations, execution into in-memory artifacts, and the
//! run directory layout with its manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bias::{compare_formula_refit, formula_bias, sweep, BiasFormula, BiasValue, RefitComparison, SweepSpec};
use crate::diagnostics::{diagnose, DiagnosticSpecs, Thresholds};
use crate::error::{Error, Result};
use crate::harness::{run_replications, ReplicationPlan, ReplicationTable};
use crate::io::{read_dataset, write_csv, DatasetHeader};
use crate::joint::{fit_joint, JointSpec};
use crate::lmm::{fit_lmm, predict_blups, LmmSpec};
use crate::optim::OptimizerSettings;
use crate::sim::{simulate_study_with_warnings, MemoryScenario, StudyScenario};
use crate::fit::FitResult;
use crate::data::LongitudinalDataset;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VISITBIAS_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: StudyScenario,
    pub n_subjects: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Long-format CSV; its header sidecar has the same stem and a `.json` extension.
    pub data: PathBuf,
    pub model: LmmSpec,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJointConfig {
    pub data: PathBuf,
    pub model: JointSpec,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub scenario: MemoryScenario,
    pub formula: BiasFormula,
    pub n_subjects: usize,
    pub seed: u64,
    /// Also fit the outcome model to the same population.
    #[serde(default)]
    pub refit: bool,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sweep: SweepSpec,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateConfig {
    pub plans: Vec<ReplicationPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub data: PathBuf,
    pub specs: DiagnosticSpecs,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub settings: OptimizerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    FitJoint(FitJointConfig),
    Bias(BiasConfig),
    Sweep(SweepConfig),
    Replicate(ReplicateConfig),
    Diagnose(DiagnoseConfig),
}

impl RunConfig {
    pub fn command(&self) -> &'static str {
        match self {
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Fit(_) => "fit",
            RunConfig::FitJoint(_) => "fit-joint",
            RunConfig::Bias(_) => "bias",
            RunConfig::Sweep(_) => "sweep",
            RunConfig::Replicate(_) => "replicate",
            RunConfig::Diagnose(_) => "diagnose",
        }
    }

    /// The seed driving any randomness in the run.
    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Simulate(c) => Some(c.seed),
            RunConfig::Bias(c) => Some(c.seed),
            RunConfig::Sweep(c) => Some(c.sweep.seed),
            RunConfig::Replicate(c) => c.plans.first().map(|p| p.seed),
            _ => None,
        }
    }
}

/// Reads a TOML or JSON file into `T`. A run manifest is accepted too, in
/// which case its `config` entry is used.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let value: serde_json::Value = if is_toml {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    let value = match value {
        serde_json::Value::Object(mut m) if m.contains_key("manifest_version") => {
            let mut cfg = m.remove("config").ok_or_else(|| Error::Config("manifest has no config".into()))?;
            if let serde_json::Value::Object(c) = &mut cfg {
                c.remove("command");
            }
            cfg
        }
        v => v,
    };
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Artifacts of a run, held in memory until the run has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub artifacts: Vec<(String, Vec<u8>)>,
    /// Human-readable summary, also written as `summary.txt`.
    pub summary: String,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_vec_pretty(value)?;
        v.push(b'\n');
        self.add(name, v);
        Ok(())
    }
}

fn header_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load_data(path: &Path) -> Result<LongitudinalDataset> {
    read_dataset(path, &header_path(path))
}

fn fit_summary(fit: &FitResult) -> String {
    let mut s = format!(
        "loglik {:.4}  converged {}  iterations {}  subjects {}  observations {}\n",
        fit.loglik, fit.converged, fit.iterations, fit.n_subjects, fit.n_obs
    );
    for e in fit.fixed.iter().chain(&fit.variance) {
        s.push_str(&format!("{:<28} {:>12.6} {:>12.6}\n", e.name, e.estimate, e.se));
    }
    s
}

fn blups_csv(fit: &FitResult, ds: &LongitudinalDataset) -> Result<Vec<u8>> {
    let blups = predict_blups(fit, ds)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["subject_id".to_string()];
    head.extend(fit.re_names.iter().cloned());
    w.write_record(&head)?;
    for b in blups {
        let mut rec = vec![b.id.to_string()];
        rec.extend(b.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs one command and returns its artifacts.
pub fn execute(config: &RunConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    match config {
        RunConfig::Simulate(c) => {
            let (ds, warnings) = simulate_study_with_warnings(&c.scenario, c.n_subjects, c.seed)?;
            let mut csv = Vec::new();
            write_csv(&ds, &mut csv)?;
            out.add("dataset.csv", csv);
            out.json("dataset.json", &DatasetHeader::from_dataset(&ds))?;
            out.summary = format!(
                "{} subjects, {} visits ({:.3} per subject)\n",
                ds.n_subjects(),
                ds.total_visits(),
                ds.total_visits() as f64 / ds.n_subjects().max(1) as f64
            );
            for w in warnings {
                out.summary.push_str(&format!("warning: {w}\n"));
            }
        }
        RunConfig::Fit(c) => {
            let ds = load_data(&c.data)?;
            let fit = fit_lmm(&ds, &c.model, &c.settings)?;
            out.json("fit.json", &fit)?;
            out.add("blups.csv", blups_csv(&fit, &ds)?);
            out.summary = fit_summary(&fit);
        }
        RunConfig::FitJoint(c) => {
            let ds = load_data(&c.data)?;
            let fit = fit_joint(&ds, &c.model, &c.settings)?;
            out.json("fit.json", &fit)?;
            out.add("blups.csv", blups_csv(&fit, &ds)?);
            out.summary = fit_summary(&fit);
        }
        RunConfig::Bias(c) => {
            #[derive(Serialize)]
            struct BiasOut {
                estimand: String,
                formula: BiasFormula,
                closed_form: BiasValue,
                mean_visits: f64,
                refit: Option<RefitComparison>,
            }
            let (v, mean_visits) = formula_bias(c.formula, &c.scenario, c.n_subjects, c.seed)?;
            let refit = if c.refit {
                if c.formula != BiasFormula::InterceptOnly {
                    return Err(Error::Config("refit comparison supports the intercept_only formula".into()));
                }
                Some(compare_formula_refit(&c.scenario, c.n_subjects, c.seed, &c.settings)?)
            } else {
                None
            };
            let estimand = if c.formula == BiasFormula::BinaryCovariate { "x" } else { "(Intercept)" };
            out.summary = format!(
                "closed-form bias in {estimand}: {:.6} (MC SE {:.6}), mean visits {:.3}\n",
                v.bias, v.mc_se, mean_visits
            );
            if let Some(r) = &refit {
                out.summary.push_str(&format!(
                    "fitted bias: {:.6} (SE {:.6}), difference {:.2} combined SEs\n",
                    r.empirical.bias,
                    r.empirical.mc_se,
                    r.z_score()
                ));
            }
            out.json(
                "bias.json",
                &BiasOut { estimand: estimand.into(), formula: c.formula, closed_form: v, mean_visits, refit },
            )?;
        }
        RunConfig::Sweep(c) => {
            let report = sweep(&c.sweep, &c.settings)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            out.add("sweep.csv", csv);
            out.json("sweep.json", &report)?;
            out.summary = format!("bias in {} over {:?}\n", report.estimand, report.param);
            for r in &report.rows {
                out.summary.push_str(&format!(
                    "{:>12.4} {:>14.6} (MC SE {:.6}) mean visits {:.3}\n",
                    r.value, r.bias, r.mc_se, r.mean_visits
                ));
            }
        }
        RunConfig::Replicate(c) => {
            if c.plans.is_empty() {
                return Err(Error::Config("plans: at least one plan is required".into()));
            }
            let mut table: Option<ReplicationTable> = None;
            for p in &c.plans {
                log::info!("replicating {} ({} reps)", p.name, p.n_reps);
                let t = run_replications(p)?;
                table = Some(match table {
                    None => t,
                    Some(acc) => acc.merge(t),
                });
            }
            let table = table.expect("non-empty plans");
            let mut csv = Vec::new();
            table.write_csv(&mut csv)?;
            out.add("table.csv", csv);
            out.summary = table.to_text();
            out.add("table.txt", out.summary.clone().into_bytes());
            out.json("records.json", &table.records)?;
        }
        RunConfig::Diagnose(c) => {
            let ds = load_data(&c.data)?;
            let report = diagnose(&ds, &c.specs, &c.thresholds, &c.settings)?;
            out.json("report.json", &report)?;
            if let Some(rc) = &report.re_correlation {
                let mut csv = Vec::new();
                rc.write_scatter_csv(&mut csv)?;
                out.add("scatter.csv", csv);
            }
            let mut s = String::new();
            for (name, flag) in report.flags() {
                s.push_str(&format!("{name:<24} {flag:?}\n"));
            }
            for f in &report.failures {
                s.push_str(&format!("unavailable: {f}\n"));
            }
            s.push_str(&report.recommendation);
            s.push('\n');
            out.summary = s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub visitbias: String,
    pub nalgebra: String,
    pub rand: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self { visitbias: env!("CARGO_PKG_VERSION").into(), nalgebra: "0.35".into(), rand: "0.9".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub threads: usize,
    pub versions: Versions,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
}

/// Executes `config` and writes its artifacts and `manifest.json` into
/// `dir`. Nothing is left at `dir` unless the whole run succeeds; an existing
/// `dir` is replaced only with `force`.
pub fn run_to_dir(config: &RunConfig, dir: &Path, force: bool, threads: usize) -> Result<Manifest> {
    if dir.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to overwrite", dir.display())));
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut outputs = execute(config)?;
    outputs.add("summary.txt", outputs.summary.clone().into_bytes());
    let manifest = Manifest {
        manifest_version: 1,
        command: config.command().into(),
        config: config.clone(),
        seed: config.seed(),
        threads,
        versions: Versions::default(),
        started_unix_s: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
        artifacts: outputs.artifacts.iter().map(|a| a.0.clone()).collect(),
    };
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().ok_or_else(|| Error::Config(format!("bad output directory {}", dir.display())))?;
    let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    let write = || -> Result<()> {
        fs::create_dir_all(&staging)?;
        for (n, bytes) in &outputs.artifacts {
            fs::write(staging.join(n), bytes)?;
        }
        fs::write(staging.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(())
    };
    write().inspect_err(|_| {
        let _ = fs::remove_dir_all(&staging);
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_config(n: usize) -> RunConfig {
        RunConfig::Simulate(SimulateConfig { scenario: StudyScenario::study1(), n_subjects: n, seed: 7 })
    }

    #[test]
    fn simulate_round_trips_through_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("sim");
        let m = run_to_dir(&sim_config(20), &dir, false, 1).unwrap();
        assert_eq!(m.seed, Some(7));
        for a in ["dataset.csv", "dataset.json", "summary.txt", "manifest.json"] {
            assert!(dir.join(a).exists(), "{a}");
        }
        assert!(run_to_dir(&sim_config(20), &dir, false, 1).is_err());
        let again: SimulateConfig = load_config(&dir.join("manifest.json")).unwrap();
        let dir2 = tmp.path().join("sim2");
        run_to_dir(&RunConfig::Simulate(again), &dir2, false, 1).unwrap();
        assert_eq!(fs::read(dir.join("dataset.csv")).unwrap(), fs::read(dir2.join("dataset.csv")).unwrap());
    }

    #[test]
    fn failure_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("fit");
        let cfg = RunConfig::Fit(FitConfig {
            data: tmp.path().join("missing.csv"),
            model: LmmSpec::linear_time(),
            settings: OptimizerSettings::default(),
        });
        assert!(run_to_dir(&cfg, &dir, false, 1).is_err());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn unknown_field_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.toml");
        fs::write(&p, "n_subjects = 5\nseed = 1\nbogus = 2\n[scenario]\nstudy = \"study1\"\n").unwrap();
        let e = load_config::<SimulateConfig>(&p).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
    }
}
