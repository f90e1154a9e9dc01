//! Command-line interface: scriptable subcommands over the runner with a
//! JSON config file whose values individual flags override.
//!
//! Exit codes: 0 success, 1 I/O or malformed data, 2 configuration error,
//! 3 weight-store error.

use crate::error::{AppError, Result};
use crate::runner::{
    self, AblatePlan, AnalyzePlan, CaseEvalPlan, CrossPlan, EvaluatePlan, InferPlan, SimulatePlan,
    TrainPlan, TrainTarget,
};
use clap::{Args, Parser, Subcommand};
use deixis_core::eval::TrainSource;
use deixis_core::event::{ModalitySet, UseCase};
use deixis_core::model::Hyper;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "deixis",
    version,
    about = "Driver deictic-reference pipeline: simulate pointing data, train and evaluate the two-stage fusion models, analyze modality quality"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic referencing datasets (JSONL) plus a manifest.
    Simulate(SimulateArgs),
    /// Train one model and place the weights in a store directory.
    Train(TrainArgs),
    /// Leave-one-subject-out evaluation of the fusion model, or of the case
    /// classifier when both datasets are given.
    Evaluate(EvaluateArgs),
    /// LOSO evaluation over modality subsets.
    Ablate(AblateArgs),
    /// Train on one use case (or both), test on the other.
    Cross(CrossArgs),
    /// Measurement analysis and pitch histograms of a dataset.
    Analyze(AnalyzeArgs),
    /// Two-stage prediction over an event file.
    Infer(InferArgs),
}

/// Fields a JSON config file may set; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scene_cockpit: Option<String>,
    pub scene_environment: Option<String>,
    pub scale: Option<String>,
    pub subjects: Option<usize>,
    pub events_per_subject: Option<usize>,
    pub noise_scale: Option<f64>,
    pub correlation: Option<f64>,
    pub jobs: Option<usize>,
    pub width: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr0: Option<f64>,
    pub modalities: Option<String>,
    pub case: Option<String>,
    pub store: Option<PathBuf>,
    pub val_subject: Option<String>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| AppError::parse_json(p, &e))
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for fold-level parallelism (default 1).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generator seed (required; identical seeds reproduce files byte for
    /// byte).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset size: "paper" (2514 + 6590 events) or "desk" (~440 + ~440).
    #[arg(long)]
    pub scale: Option<String>,
    /// Number of synthetic subjects (default 11).
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Events per subject per use case; overrides --scale totals.
    #[arg(long)]
    pub events_per_subject: Option<usize>,
    /// Multiplier on all error magnitudes (0 = exact pointing).
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Cross-modality coupling of per-event errors, 0..1.
    #[arg(long)]
    pub correlation: Option<f64>,
    /// Cockpit scene: a path or "builtin:cockpit".
    #[arg(long)]
    pub scene_cockpit: Option<String>,
    /// Environment scene: a path or "builtin:environment".
    #[arg(long)]
    pub scene_environment: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file(s); the case model takes both use cases.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    /// Which model to train: "fusion" (default) or "case".
    #[arg(long, default_value = "fusion")]
    pub model: String,
    /// Use case of the fusion model: cockpit or environment.
    #[arg(long)]
    pub case: Option<String>,
    /// Modalities for the fusion model, e.g. "eye,head,finger".
    #[arg(long)]
    pub modalities: Option<String>,
    /// Weight-store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Kernels per convolution layer (128/64 reproduce the full-size
    /// fusion/case architectures).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Validation subject (default: the last subject).
    #[arg(long)]
    pub val_subject: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file(s): one for fusion evaluation, the cockpit and
    /// environment files for --model case.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    /// "fusion" (default) or "case".
    #[arg(long, default_value = "fusion")]
    pub model: String,
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub modalities: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub case: Option<String>,
    /// Comma-separated modality subsets separated by ';' (default: all 7).
    #[arg(long)]
    pub subsets: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CrossArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cockpit dataset file.
    #[arg(long)]
    pub cockpit: Option<PathBuf>,
    /// Environment dataset file.
    #[arg(long)]
    pub environment: Option<PathBuf>,
    /// Training pool: cockpit, environment or combined.
    #[arg(long)]
    pub train_case: Option<String>,
    /// Test use case: cockpit or environment.
    #[arg(long)]
    pub test_case: Option<String>,
    #[arg(long)]
    pub modalities: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Event file (JSONL) to predict on.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Weight-store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// "auto" (two-stage, default), "cockpit" or "environment" to bypass
    /// the classifier.
    #[arg(long, default_value = "auto")]
    pub case: String,
    #[arg(long)]
    pub modalities: Option<String>,
    #[arg(long)]
    pub scene_cockpit: Option<String>,
    #[arg(long)]
    pub scene_environment: Option<String>,
}

fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| AppError::Config(format!("missing required {what}")))
}

fn parse_case(s: &str) -> Result<UseCase> {
    crate::scenefile::parse_use_case(s).ok_or_else(|| {
        AppError::Config(format!("--case must be cockpit or environment, got {s:?}"))
    })
}

fn parse_modalities(s: &Option<String>) -> Result<ModalitySet> {
    match s {
        None => Ok(ModalitySet::FULL),
        Some(text) => ModalitySet::parse(text).map_err(AppError::Config),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(AppError::Config(format!(
            "input does not exist: {}",
            path.display()
        )));
    }
    Ok(())
}

fn check_scene_spec(spec: &str) -> Result<()> {
    if spec.starts_with("builtin:") {
        if spec != "builtin:cockpit" && spec != "builtin:environment" {
            return Err(AppError::Config(format!("unknown builtin scene {spec:?}")));
        }
        return Ok(());
    }
    check_input(Path::new(spec))
}

/// Default kernel count for CLI runs; full-size architectures use 128/64.
const DEFAULT_WIDTH: usize = 16;
const DEFAULT_CASE_WIDTH: usize = 8;

fn hyper_from(
    epochs: Option<usize>,
    batch: Option<usize>,
    lr0: Option<f64>,
    config: &ConfigFile,
) -> Hyper {
    Hyper {
        epochs: epochs.or(config.epochs).unwrap_or(50),
        batch_size: batch.or(config.batch).unwrap_or(32),
        lr0: lr0.or(config.lr0).unwrap_or(0.001),
        ..Hyper::default()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => {
            let config = load_config(&args.common.config)?;
            let seed = require(args.seed.or(config.seed), "--seed")?;
            let out = require(args.common.out.clone().or(config.out), "--out")?;
            let scale = args.scale.or(config.scale).unwrap_or_else(|| "desk".into());
            let subjects = args.subjects.or(config.subjects).unwrap_or(11);
            let (mut cockpit_total, mut environment_total) = match scale.as_str() {
                "paper" => (2514, 6590),
                "desk" => (440, 440),
                other => {
                    return Err(AppError::Config(format!(
                        "--scale must be paper or desk, got {other:?}"
                    )))
                }
            };
            if let Some(per) = args.events_per_subject.or(config.events_per_subject) {
                cockpit_total = per * subjects;
                environment_total = per * subjects;
            }
            let scene_cockpit = args
                .scene_cockpit
                .or(config.scene_cockpit)
                .unwrap_or_else(|| "builtin:cockpit".into());
            let scene_environment = args
                .scene_environment
                .or(config.scene_environment)
                .unwrap_or_else(|| "builtin:environment".into());
            check_scene_spec(&scene_cockpit)?;
            check_scene_spec(&scene_environment)?;
            let plan = SimulatePlan {
                seed,
                scale,
                subjects,
                cockpit_total,
                environment_total,
                noise_scale: args.noise_scale.or(config.noise_scale).unwrap_or(1.0),
                correlation: args.correlation.or(config.correlation).unwrap_or(0.0),
                scene_cockpit,
                scene_environment,
            };
            let (c, e) = runner::run_simulate(&plan, &out)?;
            println!("wrote {} and {}", c.display(), e.display());
            Ok(())
        }
        Command::Train(args) => {
            let config = load_config(&args.common.config)?;
            let seed = require(args.seed.or(config.seed), "--seed")?;
            let hyper = hyper_from(args.epochs, args.batch, args.lr0, &config);
            let store = require(args.store.clone().or(config.store), "--store")?;
            let datasets = if args.datasets.is_empty() {
                return Err(AppError::Config("missing required --dataset".into()));
            } else {
                args.datasets.clone()
            };
            for d in &datasets {
                check_input(d)?;
            }
            let target = match args.model.as_str() {
                "fusion" => {
                    let case = parse_case(&require(
                        args.case.clone().or(config.case.clone()),
                        "--case",
                    )?)?;
                    TrainTarget::Fusion {
                        use_case: case,
                        modalities: parse_modalities(
                            &args.modalities.clone().or(config.modalities.clone()),
                        )?,
                    }
                }
                "case" => TrainTarget::Case,
                other => {
                    return Err(AppError::Config(format!(
                        "--model must be fusion or case, got {other:?}"
                    )))
                }
            };
            let width = args.width.or(config.width).unwrap_or(match target {
                TrainTarget::Fusion { .. } => DEFAULT_WIDTH,
                TrainTarget::Case => DEFAULT_CASE_WIDTH,
            });
            let plan = TrainPlan {
                target,
                dataset_paths: datasets,
                store,
                width,
                hyper,
                seed,
                val_subject: args.val_subject.or(config.val_subject),
            };
            runner::run_train(&plan)?;
            println!("weights stored under {}", plan.store.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = load_config(&args.common.config)?;
            let seed = args.seed.or(config.seed).unwrap_or(42);
            let hyper = hyper_from(args.epochs, args.batch, args.lr0, &config);
            let out = require(args.common.out.clone().or(config.out), "--out")?;
            let jobs = args.common.jobs.or(config.jobs).unwrap_or(1);
            for d in &args.datasets {
                check_input(d)?;
            }
            match args.model.as_str() {
                "fusion" => {
                    if args.datasets.len() != 1 {
                        return Err(AppError::Config(
                            "fusion evaluation takes exactly one --dataset".into(),
                        ));
                    }
                    let case = parse_case(&require(args.case.clone().or(config.case), "--case")?)?;
                    let plan = EvaluatePlan {
                        dataset_path: args.datasets[0].clone(),
                        use_case: case,
                        modalities: parse_modalities(
                            &args.modalities.clone().or(config.modalities),
                        )?,
                        width: args.width.or(config.width).unwrap_or(DEFAULT_WIDTH),
                        hyper,
                        seed,
                        jobs,
                    };
                    let dir = out.join(format!("evaluate_{}", case.as_str()));
                    let cv = runner::run_evaluate(&plan, &dir)?;
                    println!(
                        "{}: MAD {:.2} deg, Std.AD {:.2} deg, hit rate {:.1}% over {} events",
                        case,
                        cv.aggregate.mad_deg,
                        cv.aggregate.std_ad_deg,
                        cv.aggregate.hit_rate * 100.0,
                        cv.aggregate.n
                    );
                    Ok(())
                }
                "case" => {
                    if args.datasets.len() != 2 {
                        return Err(AppError::Config(
                            "case evaluation takes the cockpit and environment datasets".into(),
                        ));
                    }
                    let plan = CaseEvalPlan {
                        cockpit_path: args.datasets[0].clone(),
                        environment_path: args.datasets[1].clone(),
                        width: args.width.or(config.width).unwrap_or(DEFAULT_CASE_WIDTH),
                        hyper,
                        seed,
                        jobs,
                    };
                    let dir = out.join("evaluate_case");
                    let cv = runner::run_case_eval(&plan, &dir)?;
                    println!("case accuracy {:.2}%", cv.accuracy * 100.0);
                    Ok(())
                }
                other => Err(AppError::Config(format!(
                    "--model must be fusion or case, got {other:?}"
                ))),
            }
        }
        Command::Ablate(args) => {
            let config = load_config(&args.common.config)?;
            let seed = args.seed.or(config.seed).unwrap_or(42);
            let hyper = hyper_from(args.epochs, args.batch, args.lr0, &config);
            let out = require(args.common.out.clone().or(config.out), "--out")?;
            let jobs = args.common.jobs.or(config.jobs).unwrap_or(1);
            if args.datasets.len() != 1 {
                return Err(AppError::Config(
                    "ablation takes exactly one --dataset".into(),
                ));
            }
            check_input(&args.datasets[0])?;
            let case = parse_case(&require(args.case.clone().or(config.case), "--case")?)?;
            let subsets = match &args.subsets {
                None => ModalitySet::all_nonempty(),
                Some(text) => text
                    .split(';')
                    .map(|part| ModalitySet::parse(part).map_err(AppError::Config))
                    .collect::<Result<Vec<_>>>()?,
            };
            let plan = AblatePlan {
                dataset_path: args.datasets[0].clone(),
                use_case: case,
                subsets,
                width: args.width.or(config.width).unwrap_or(DEFAULT_WIDTH),
                hyper,
                seed,
                jobs,
            };
            let dir = out.join(format!("ablate_{}", case.as_str()));
            let results = runner::run_ablate(&plan, &dir)?;
            for (m, cv) in &results {
                println!(
                    "{m}: MAD {:.2} deg, hit rate {:.1}%",
                    cv.aggregate.mad_deg,
                    cv.aggregate.hit_rate * 100.0
                );
            }
            Ok(())
        }
        Command::Cross(args) => {
            let config = load_config(&args.common.config)?;
            let seed = args.seed.or(config.seed).unwrap_or(42);
            let hyper = hyper_from(args.epochs, args.batch, args.lr0, &config);
            let out = require(args.common.out.clone().or(config.out), "--out")?;
            let jobs = args.common.jobs.or(config.jobs).unwrap_or(1);
            let cockpit = require(args.cockpit.clone(), "--cockpit")?;
            let environment = require(args.environment.clone(), "--environment")?;
            check_input(&cockpit)?;
            check_input(&environment)?;
            let train_source = match require(args.train_case.clone(), "--train-case")?.as_str() {
                "cockpit" => TrainSource::Cockpit,
                "environment" => TrainSource::Environment,
                "combined" => TrainSource::Combined,
                other => {
                    return Err(AppError::Config(format!(
                        "--train-case must be cockpit, environment or combined, got {other:?}"
                    )))
                }
            };
            let test_case = parse_case(&require(args.test_case.clone(), "--test-case")?)?;
            let plan = CrossPlan {
                cockpit_path: cockpit,
                environment_path: environment,
                train_source,
                test_case,
                modalities: parse_modalities(&args.modalities.clone().or(config.modalities))?,
                width: args.width.or(config.width).unwrap_or(DEFAULT_WIDTH),
                hyper,
                seed,
                jobs,
            };
            let dir = out.join(format!(
                "cross_{}_to_{}",
                plan.train_source.as_str(),
                plan.test_case.as_str()
            ));
            let cv = runner::run_cross(&plan, &dir)?;
            println!(
                "{} -> {}: MAD {:.2} deg, hit rate {:.1}%",
                plan.train_source.as_str(),
                plan.test_case.as_str(),
                cv.aggregate.mad_deg,
                cv.aggregate.hit_rate * 100.0
            );
            Ok(())
        }
        Command::Analyze(args) => {
            let config = load_config(&args.common.config)?;
            let out = require(args.common.out.clone().or(config.out), "--out")?;
            if args.datasets.is_empty() {
                return Err(AppError::Config("missing required --dataset".into()));
            }
            for d in &args.datasets {
                check_input(d)?;
            }
            let plan = AnalyzePlan {
                dataset_paths: args.datasets.clone(),
            };
            let summary = runner::run_analyze(&plan, &out.join("analysis"))?;
            for row in &summary.measurement {
                println!(
                    "{} {}: yaw {:.1} ± {:.1} deg, pitch {:.1} ± {:.1} deg (n={})",
                    row.use_case,
                    row.modality,
                    row.yaw_mean_deg,
                    row.yaw_std_deg,
                    row.pitch_mean_deg,
                    row.pitch_std_deg,
                    row.n
                );
            }
            Ok(())
        }
        Command::Infer(args) => {
            let config = load_config(&args.common.config)?;
            let events = require(args.events.clone(), "--events")?;
            let store = require(args.store.clone().or(config.store), "--store")?;
            check_input(&events)?;
            check_input(&store)?;
            let forced_case = match args.case.as_str() {
                "auto" => None,
                other => Some(parse_case(other)?),
            };
            let scene_cockpit = args
                .scene_cockpit
                .or(config.scene_cockpit)
                .unwrap_or_else(|| "builtin:cockpit".into());
            let scene_environment = args
                .scene_environment
                .or(config.scene_environment)
                .unwrap_or_else(|| "builtin:environment".into());
            check_scene_spec(&scene_cockpit)?;
            check_scene_spec(&scene_environment)?;
            let plan = InferPlan {
                events_path: events,
                store,
                forced_case,
                modalities: parse_modalities(&args.modalities.clone().or(config.modalities))?,
                scene_cockpit,
                scene_environment,
            };
            for line in runner::run_infer(&plan)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}
