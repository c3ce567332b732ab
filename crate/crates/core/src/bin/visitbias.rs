use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use visitbias::bias::{BiasFormula, SweepSpec};
use visitbias::diagnostics::{DiagnosticSpecs, Thresholds};
use visitbias::harness::{Fitter, ReplicationPlan};
use visitbias::io::read_header;
use visitbias::joint::JointSpec;
use visitbias::lmm::LmmSpec;
use visitbias::run::{
    load_config, run_to_dir, BiasConfig, DiagnoseConfig, FitConfig, FitJointConfig, ReplicateConfig, RunConfig,
    SimulateConfig, SweepConfig, OUT_DIR_ENV,
};
use visitbias::sim::{MemoryScenario, StudyScenario};
use visitbias::{Error, OptimizerSettings, Result, Term};

#[derive(Parser)]
#[command(name = "visitbias", version, about = "Bias from informative visit times in longitudinal mixed models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Parent directory for run directories.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "visitbias-out")]
    out: PathBuf,
    /// Run directory name (defaults to the subcommand).
    #[arg(long, global = true)]
    name: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for every random draw; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a scenario.
    Simulate {
        /// Preset name, e.g. study1, intercept_only, decoupled.
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// TOML/JSON simulate config or a previous manifest.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the outcome-only mixed model.
    Fit {
        #[arg(long, required_unless_present = "config")]
        data: Option<PathBuf>,
        /// Model file (LmmSpec); defaults to a linear time trend with random intercept and slope.
        #[arg(long, conflicts_with = "scenario")]
        model: Option<PathBuf>,
        /// Use the outcome model of a scenario preset.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the joint model of the outcome and recommended intervals.
    FitJoint {
        #[arg(long, required_unless_present = "config")]
        data: Option<PathBuf>,
        #[arg(long, conflicts_with = "scenario")]
        model: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Closed-form bias of the outcome-only model.
    Bias {
        /// intercept_only or binary_baseline.
        #[arg(long, default_value = "intercept_only")]
        scenario: String,
        /// Covariate shift of the mean interval for binary_baseline.
        #[arg(long, default_value_t = 100.0 / 3.0)]
        alpha1: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Also fit the outcome model to the simulated population.
        #[arg(long)]
        refit: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Bias over a grid of one parameter.
    Sweep {
        /// Preset sweep, e.g. fig1_sigma_b, fig2_alpha1, fig3_re.
        #[arg(long, required_unless_present = "config")]
        sweep: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replication study over one or more table cells.
    Replicate {
        /// Named cell, repeatable, e.g. table1_high.
        #[arg(long = "plan", required_unless_present = "config")]
        plans: Vec<String>,
        #[arg(long, default_value_t = 300)]
        reps: usize,
        /// Reps on which the joint model is also fitted.
        #[arg(long, default_value_t = 150)]
        joint_reps: usize,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Comma-separated fitters.
        #[arg(long, value_delimiter = ',', default_value = "univariate,joint")]
        fitters: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pre-analysis risk diagnostics.
    Diagnose {
        #[arg(long, required_unless_present = "config")]
        data: Option<PathBuf>,
        /// Take the outcome and interval models from a scenario preset.
        #[arg(long)]
        scenario: Option<String>,
        /// Covariates to check (default: all baseline covariates).
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        /// TOML/JSON thresholds file.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_fitter(s: &str) -> Result<Fitter> {
    match s.trim() {
        "univariate" => Ok(Fitter::Univariate),
        "joint" => Ok(Fitter::Joint),
        other => Err(Error::Config(format!("fitters: unknown fitter '{other}'"))),
    }
}

fn covariates_of(data: &Path) -> Result<Vec<String>> {
    Ok(read_header(&data.with_extension("json"))?.covariates.unwrap_or_default())
}

fn build(command: Command, seed: Option<u64>) -> Result<RunConfig> {
    let s = seed.unwrap_or(1);
    Ok(match command {
        Command::Simulate { scenario, n, config } => {
            let mut c = match config {
                Some(p) => load_config::<SimulateConfig>(&p)?,
                None => SimulateConfig {
                    scenario: StudyScenario::preset(scenario.as_deref().unwrap_or("study1"))?,
                    n_subjects: n,
                    seed: s,
                },
            };
            if let Some(v) = seed {
                c.seed = v;
            }
            RunConfig::Simulate(c)
        }
        Command::Fit { data, model, scenario, config } => RunConfig::Fit(match config {
            Some(p) => load_config(&p)?,
            None => FitConfig {
                data: data.expect("required by clap"),
                model: match (model, scenario) {
                    (Some(m), _) => load_config::<LmmSpec>(&m)?,
                    (None, Some(sc)) => StudyScenario::preset(&sc)?.univariate_spec(),
                    (None, None) => LmmSpec::linear_time(),
                },
                settings: OptimizerSettings::default(),
            },
        }),
        Command::FitJoint { data, model, scenario, config } => RunConfig::FitJoint(match config {
            Some(p) => load_config(&p)?,
            None => FitJointConfig {
                data: data.expect("required by clap"),
                model: match (model, scenario) {
                    (Some(m), _) => load_config::<JointSpec>(&m)?,
                    (None, Some(sc)) => StudyScenario::preset(&sc)?
                        .joint_spec()
                        .ok_or_else(|| Error::Config(format!("scenario {sc} has no joint model")))?,
                    (None, None) => {
                        let lin = vec![Term::Intercept, Term::Time];
                        JointSpec::new(lin.clone(), lin.clone(), lin.clone(), lin)
                    }
                },
                settings: OptimizerSettings::default(),
            },
        }),
        Command::Bias { scenario, alpha1, n, refit, config } => {
            let mut c = match config {
                Some(p) => load_config::<BiasConfig>(&p)?,
                None => {
                    let (sc, formula) = match scenario.as_str() {
                        "intercept_only" => (MemoryScenario::intercept_only(), BiasFormula::InterceptOnly),
                        "binary_baseline" => (MemoryScenario::binary_baseline(alpha1), BiasFormula::BinaryCovariate),
                        other => {
                            return Err(Error::Config(format!(
                                "scenario: '{other}' has no closed form; use intercept_only or binary_baseline"
                            )))
                        }
                    };
                    BiasConfig { scenario: sc, formula, n_subjects: n, seed: s, refit, settings: OptimizerSettings::default() }
                }
            };
            if let Some(v) = seed {
                c.seed = v;
            }
            RunConfig::Bias(c)
        }
        Command::Sweep { sweep, n, reps, config } => {
            let mut c = match config {
                Some(p) => load_config::<SweepConfig>(&p)?,
                None => SweepConfig {
                    sweep: SweepSpec::named(sweep.as_deref().expect("required by clap"), s)?,
                    settings: OptimizerSettings::default(),
                },
            };
            if let Some(v) = seed {
                c.sweep.seed = v;
            }
            if let Some(v) = n {
                c.sweep.subjects = v;
            }
            if let Some(v) = reps {
                c.sweep.reps = v;
            }
            RunConfig::Sweep(c)
        }
        Command::Replicate { plans, reps, joint_reps, n, fitters, config } => {
            let mut c = match config {
                Some(p) => load_config::<ReplicateConfig>(&p)?,
                None => {
                    let fitters = fitters.iter().map(|f| parse_fitter(f)).collect::<Result<Vec<_>>>()?;
                    let plans = plans
                        .iter()
                        .map(|name| {
                            let mut p = ReplicationPlan::named(name, reps, s)?.with_fitters(&fitters);
                            p.n_subjects = n;
                            p.n_joint_reps = Some(joint_reps.min(reps));
                            Ok(p)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ReplicateConfig { plans }
                }
            };
            if let Some(v) = seed {
                c.plans.iter_mut().for_each(|p| p.seed = v);
            }
            RunConfig::Replicate(c)
        }
        Command::Diagnose { data, scenario, covariates, thresholds, config } => RunConfig::Diagnose(match config {
            Some(p) => load_config(&p)?,
            None => {
                let data = data.expect("required by clap");
                let covs = if covariates.is_empty() { covariates_of(&data)? } else { covariates };
                let specs = match scenario {
                    Some(sc) => {
                        let js = StudyScenario::preset(&sc)?
                            .joint_spec()
                            .ok_or_else(|| Error::Config(format!("scenario {sc} has no interval model")))?;
                        DiagnosticSpecs::from_joint(&js, covs)
                    }
                    None => DiagnosticSpecs {
                        y_spec: LmmSpec::linear_time(),
                        r_spec: LmmSpec::linear_time(),
                        covariates: covs,
                    },
                };
                let thresholds = match thresholds {
                    Some(p) => load_config::<Thresholds>(&p)?,
                    None => Thresholds::default(),
                };
                DiagnoseConfig { data, specs, thresholds, settings: OptimizerSettings::default() }
            }
        }),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = cli.global;
    if g.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(g.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = build(cli.command, g.seed).and_then(|cfg| {
        let dir = g.out.join(g.name.as_deref().unwrap_or(cfg.command()));
        let threads = rayon::current_num_threads();
        run_to_dir(&cfg, &dir, g.force, threads).map(|m| (dir, m))
    });
    match result {
        Ok((dir, m)) => {
            if let Ok(s) = std::fs::read_to_string(dir.join("summary.txt")) {
                print!("{s}");
            }
            println!("wrote {} ({:.2}s)", dir.display(), m.wall_time_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
