//! Experiment orchestration: wires scenes, datasets, training and the
//! evaluation protocol into reproducible runs with file outputs. Folds are
//! independent and can run on a thread pool; results are always collected
//! in fold order, so the emitted files are identical for any job count.

use crate::datafile;
use crate::error::{AppError, Result};
use crate::report::{fmt, write_csv, write_json};
use crate::scenefile;
use crate::weightstore::{file_sha256, WeightMeta, WeightStore};
use deixis_core::eval::{
    aggregate_case_folds, aggregate_folds, loso_folds, per_driver_report, prepare_case_samples,
    prepare_direction_samples, run_case_fold, run_fusion_fold, CVResult, CaseCVResult,
    CaseEvalConfig, EvalError, FusionEvalConfig, TrainSource,
};
use deixis_core::event::{Dataset, ModalitySet, UseCase};
use deixis_core::metrics::{direction_histograms, measurement_analysis, TargetIndex};
use deixis_core::model::{predict_case, train_case, train_fusion, CaseModel, FusionModel, Hyper};
use deixis_core::scene::Scene;
use deixis_core::sim::{generate_dataset, SimConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};

fn eval_err(e: EvalError) -> AppError {
    AppError::Config(e.to_string())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

/// Runs one closure per fold, optionally on a thread pool, preserving fold
/// order in the output.
pub fn map_folds<T: Send, F>(
    folds: &[deixis_core::eval::FoldSpec],
    jobs: usize,
    f: F,
) -> Result<Vec<T>>
where
    F: Fn(&deixis_core::eval::FoldSpec) -> std::result::Result<T, EvalError> + Sync,
{
    if jobs <= 1 {
        return folds.iter().map(|fold| f(fold).map_err(eval_err)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| AppError::Config(e.to_string()))?;
    pool.install(|| {
        use rayon::prelude::*;
        folds
            .par_iter()
            .map(|fold| f(fold).map_err(eval_err))
            .collect()
    })
}

// ── simulate ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct SimulatePlan {
    pub seed: u64,
    pub scale: String,
    pub subjects: usize,
    pub cockpit_total: usize,
    pub environment_total: usize,
    pub noise_scale: f64,
    pub correlation: f64,
    pub scene_cockpit: String,
    pub scene_environment: String,
}

#[derive(Debug, Serialize)]
struct SimulateManifest<'a> {
    command: &'static str,
    format_version: u32,
    #[serde(flatten)]
    plan: &'a SimulatePlan,
    counts: ManifestCounts,
    config_sha256: String,
}

#[derive(Debug, Serialize)]
struct ManifestCounts {
    cockpit: usize,
    environment: usize,
}

pub fn run_simulate(plan: &SimulatePlan, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let cockpit_scene = scenefile::resolve_scene(&plan.scene_cockpit)?;
    let environment_scene = scenefile::resolve_scene(&plan.scene_environment)?;
    let config = SimConfig {
        seed: plan.seed,
        n_subjects: plan.subjects,
        cockpit_total: plan.cockpit_total,
        environment_total: plan.environment_total,
        noise_scale: plan.noise_scale,
        cross_modality_correlation: plan.correlation,
        priors: Default::default(),
    };
    let output = generate_dataset(&config, &cockpit_scene, &environment_scene)
        .map_err(|e| AppError::Config(e.to_string()))?;
    ensure_dir(out_dir)?;
    let cockpit_path = out_dir.join("cockpit.jsonl");
    let environment_path = out_dir.join("environment.jsonl");
    datafile::save_dataset(&cockpit_path, &output.cockpit)?;
    datafile::save_dataset(&environment_path, &output.environment)?;

    let plan_json = serde_json::to_string(plan).expect("plan serializes");
    let config_sha256 = {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(plan_json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    };
    let manifest = SimulateManifest {
        command: "simulate",
        format_version: 1,
        plan,
        counts: ManifestCounts {
            cockpit: output.cockpit.len(),
            environment: output.environment.len(),
        },
        config_sha256,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok((cockpit_path, environment_path))
}

// ── train ─────────────────────────────────────────────────────────────

pub enum TrainTarget {
    Fusion {
        use_case: UseCase,
        modalities: ModalitySet,
    },
    Case,
}

pub struct TrainPlan {
    pub target: TrainTarget,
    pub dataset_paths: Vec<PathBuf>,
    pub store: PathBuf,
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
    /// Held-out validation subject; defaults to the last subject.
    pub val_subject: Option<String>,
}

fn load_many(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths.iter().map(|p| datafile::load_dataset(p)).collect()
}

fn union_all(datasets: &[Dataset]) -> Dataset {
    let mut iter = datasets.iter();
    let first = iter.next().expect("at least one dataset").clone();
    iter.fold(first, |acc, d| acc.union(d))
}

fn data_fingerprint(paths: &[PathBuf]) -> Result<String> {
    let mut parts = Vec::new();
    for p in paths {
        parts.push(file_sha256(p)?);
    }
    Ok(parts.join("+"))
}

fn split_by_val_subject(
    dataset: &Dataset,
    val_subject: &Option<String>,
) -> Result<(Vec<usize>, Vec<usize>, String)> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(AppError::Config(
            "training needs at least 2 subjects (one for validation)".into(),
        ));
    }
    let val = match val_subject {
        Some(s) => {
            if !subjects.contains(s) {
                return Err(AppError::Config(format!("unknown validation subject {s}")));
            }
            s.clone()
        }
        None => subjects.last().expect("non-empty").clone(),
    };
    let mut train = Vec::new();
    let mut val_idx = Vec::new();
    for (i, e) in dataset.events.iter().enumerate() {
        if e.subject_id == val {
            val_idx.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val_idx, val))
}

fn write_history_csv(path: &Path, history: &deixis_core::model::TrainHistory) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .epochs
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i.to_string(), fmt(e.train_loss), fmt(e.val_loss), fmt(e.lr)])
        .collect();
    write_csv(path, &["epoch", "train_loss", "val_loss", "lr"], &rows)
}

pub fn run_train(plan: &TrainPlan) -> Result<()> {
    let datasets = load_many(&plan.dataset_paths)?;
    let store = WeightStore::new(&plan.store);
    let fingerprint = data_fingerprint(&plan.dataset_paths)?;
    match &plan.target {
        TrainTarget::Fusion {
            use_case,
            modalities,
        } => {
            if datasets.len() != 1 {
                return Err(AppError::Config(
                    "fusion training takes exactly one dataset".into(),
                ));
            }
            let dataset = &datasets[0];
            if let Some(event) = dataset.events.iter().find(|e| e.use_case != *use_case) {
                return Err(AppError::Config(format!(
                    "dataset contains {} events but --case {} was requested",
                    event.use_case, use_case
                )));
            }
            let scene = resolve_scene_for(dataset, *use_case)?;
            let index = TargetIndex::build(&scene).map_err(|e| AppError::Config(e.to_string()))?;
            let inputs =
                prepare_direction_samples(dataset, *modalities, &index).map_err(eval_err)?;
            let (train_idx, val_idx, val_subject) =
                split_by_val_subject(dataset, &plan.val_subject)?;
            let train: Vec<_> = train_idx
                .iter()
                .map(|&i| inputs.samples[i].clone())
                .collect();
            let val: Vec<_> = val_idx.iter().map(|&i| inputs.samples[i].clone()).collect();
            let mut model = FusionModel::new(*modalities, plan.width, plan.seed)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let hyper = Hyper {
                seed: plan.seed ^ 0x5eed,
                ..plan.hyper.clone()
            };
            let history = train_fusion(&mut model, &train, &val, &hyper)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let meta = WeightMeta {
                arch_fingerprint: model.fingerprint(),
                seed: plan.seed,
                epochs: plan.hyper.epochs,
                best_val_loss: history.best_val_loss,
                data_fingerprint: fingerprint,
                val_subject,
            };
            store.save_fusion(*use_case, &model, &meta)?;
            write_history_csv(
                &store.fusion_dir(*use_case, *modalities).join("history.csv"),
                &history,
            )
        }
        TrainTarget::Case => {
            if datasets.is_empty() {
                return Err(AppError::Config(
                    "case training needs the cockpit and environment datasets".into(),
                ));
            }
            let combined = union_all(&datasets);
            let cases: std::collections::BTreeSet<UseCase> =
                combined.events.iter().map(|e| e.use_case).collect();
            if cases.len() < 2 {
                return Err(AppError::Config(
                    "case training needs events from both use cases".into(),
                ));
            }
            let samples = prepare_case_samples(&combined.events);
            let (train_idx, val_idx, val_subject) =
                split_by_val_subject(&combined, &plan.val_subject)?;
            let train: Vec<_> = train_idx.iter().map(|&i| samples[i].clone()).collect();
            let val: Vec<_> = val_idx.iter().map(|&i| samples[i].clone()).collect();
            let mut model = CaseModel::new(plan.width, plan.seed)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let hyper = Hyper {
                seed: plan.seed ^ 0x5eed,
                ..plan.hyper.clone()
            };
            let history = train_case(&mut model, &train, &val, &hyper)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let meta = WeightMeta {
                arch_fingerprint: model.fingerprint(),
                seed: plan.seed,
                epochs: plan.hyper.epochs,
                best_val_loss: history.best_val_loss,
                data_fingerprint: fingerprint,
                val_subject,
            };
            store.save_case(&model, &meta)?;
            write_history_csv(&store.case_dir().join("history.csv"), &history)
        }
    }
}

/// Scene for a dataset: its recorded `scene_ref` (builtin name or path).
fn resolve_scene_for(dataset: &Dataset, use_case: UseCase) -> Result<Scene> {
    let scene = scenefile::resolve_scene(&dataset.scene_ref)?;
    if scene.use_case != use_case {
        return Err(AppError::Config(format!(
            "scene {} is a {} scene, dataset needs {}",
            dataset.scene_ref, scene.use_case, use_case
        )));
    }
    Ok(scene)
}

// ── evaluation summaries ──────────────────────────────────────────────

#[derive(Debug, Serialize)]
pub struct MetricsJson {
    pub mad_deg: f64,
    pub std_ad_deg: f64,
    pub hit_rate: f64,
    pub n: usize,
}

impl From<&deixis_core::metrics::MetricsReport> for MetricsJson {
    fn from(r: &deixis_core::metrics::MetricsReport) -> Self {
        MetricsJson {
            mad_deg: r.mad_deg,
            std_ad_deg: r.std_ad_deg,
            hit_rate: r.hit_rate,
            n: r.n,
        }
    }
}

fn fold_rows(cv: &CVResult) -> Vec<Vec<String>> {
    cv.folds
        .iter()
        .map(|f| {
            let report = f.sums.report().expect("non-empty fold");
            vec![
                f.fold.index.to_string(),
                f.fold.test_subject.clone(),
                f.fold.val_subject.clone(),
                fmt(report.mad_deg),
                fmt(report.std_ad_deg),
                fmt(report.hit_rate),
                report.n.to_string(),
                fmt(f.best_val_loss),
            ]
        })
        .collect()
}

const FOLD_HEADER: [&str; 8] = [
    "fold",
    "test_subject",
    "val_subject",
    "mad_deg",
    "std_ad_deg",
    "hit_rate",
    "n",
    "best_val_loss",
];

pub struct EvaluatePlan {
    pub dataset_path: PathBuf,
    pub use_case: UseCase,
    pub modalities: ModalitySet,
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
pub struct EvaluateSummary {
    pub use_case: String,
    pub modalities: String,
    pub width: usize,
    pub seed: u64,
    pub aggregate: MetricsJson,
}

/// Full LOSO evaluation of the fusion model on one dataset.
pub fn run_evaluate(plan: &EvaluatePlan, out_dir: &Path) -> Result<CVResult> {
    let dataset = datafile::load_dataset_checked(&plan.dataset_path, Some(plan.use_case))?;
    let scene = resolve_scene_for(&dataset, plan.use_case)?;
    let index = TargetIndex::build(&scene).map_err(|e| AppError::Config(e.to_string()))?;
    let config = FusionEvalConfig {
        modalities: plan.modalities,
        width: plan.width,
        hyper: plan.hyper.clone(),
        seed: plan.seed,
    };
    let inputs = prepare_direction_samples(&dataset, plan.modalities, &index).map_err(eval_err)?;
    let folds = loso_folds(&dataset.subjects()).map_err(eval_err)?;
    let outcomes = map_folds(&folds, plan.jobs, |fold| {
        run_fusion_fold(&inputs, &inputs, &index, fold, &config)
    })?;
    let cv = aggregate_folds(outcomes).map_err(eval_err)?;

    ensure_dir(out_dir)?;
    write_csv(&out_dir.join("folds.csv"), &FOLD_HEADER, &fold_rows(&cv))?;
    let drivers = per_driver_report(&cv).map_err(eval_err)?;
    let driver_rows: Vec<Vec<String>> = drivers
        .iter()
        .map(|d| {
            vec![
                d.subject.clone(),
                fmt(d.report.mad_deg),
                fmt(d.report.std_ad_deg),
                fmt(d.report.hit_rate),
                d.report.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("per_driver.csv"),
        &["subject", "mad_deg", "std_ad_deg", "hit_rate", "n"],
        &driver_rows,
    )?;
    write_json(
        &out_dir.join("summary.json"),
        &EvaluateSummary {
            use_case: plan.use_case.as_str().to_string(),
            modalities: plan.modalities.to_string(),
            width: plan.width,
            seed: plan.seed,
            aggregate: MetricsJson::from(&cv.aggregate),
        },
    )?;
    Ok(cv)
}

pub struct AblatePlan {
    pub dataset_path: PathBuf,
    pub use_case: UseCase,
    pub subsets: Vec<ModalitySet>,
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
pub struct AblateSummary {
    pub use_case: String,
    pub rows: Vec<AblateRow>,
}

#[derive(Debug, Serialize)]
pub struct AblateRow {
    pub modalities: String,
    #[serde(flatten)]
    pub metrics: MetricsJson,
}

/// One LOSO run per modality subset.
pub fn run_ablate(plan: &AblatePlan, out_dir: &Path) -> Result<Vec<(ModalitySet, CVResult)>> {
    let dataset = datafile::load_dataset_checked(&plan.dataset_path, Some(plan.use_case))?;
    let scene = resolve_scene_for(&dataset, plan.use_case)?;
    let index = TargetIndex::build(&scene).map_err(|e| AppError::Config(e.to_string()))?;
    let folds = loso_folds(&dataset.subjects()).map_err(eval_err)?;
    let mut results = Vec::with_capacity(plan.subsets.len());
    for &modalities in &plan.subsets {
        let config = FusionEvalConfig {
            modalities,
            width: plan.width,
            hyper: plan.hyper.clone(),
            seed: plan.seed,
        };
        let inputs = prepare_direction_samples(&dataset, modalities, &index).map_err(eval_err)?;
        let outcomes = map_folds(&folds, plan.jobs, |fold| {
            run_fusion_fold(&inputs, &inputs, &index, fold, &config)
        })?;
        results.push((modalities, aggregate_folds(outcomes).map_err(eval_err)?));
    }

    ensure_dir(out_dir)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(m, cv)| {
            vec![
                m.to_string(),
                fmt(cv.aggregate.mad_deg),
                fmt(cv.aggregate.std_ad_deg),
                fmt(cv.aggregate.hit_rate),
                cv.aggregate.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("ablation.csv"),
        &["modalities", "mad_deg", "std_ad_deg", "hit_rate", "n"],
        &rows,
    )?;
    write_json(
        &out_dir.join("summary.json"),
        &AblateSummary {
            use_case: plan.use_case.as_str().to_string(),
            rows: results
                .iter()
                .map(|(m, cv)| AblateRow {
                    modalities: m.to_string(),
                    metrics: MetricsJson::from(&cv.aggregate),
                })
                .collect(),
        },
    )?;
    Ok(results)
}

pub struct CrossPlan {
    pub cockpit_path: PathBuf,
    pub environment_path: PathBuf,
    pub train_source: TrainSource,
    pub test_case: UseCase,
    pub modalities: ModalitySet,
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
pub struct CrossSummary {
    pub train_source: String,
    pub test_case: String,
    pub aggregate: MetricsJson,
}

/// Cross-use-case transfer evaluation under the LOSO protocol.
pub fn run_cross(plan: &CrossPlan, out_dir: &Path) -> Result<CVResult> {
    let cockpit = datafile::load_dataset_checked(&plan.cockpit_path, Some(UseCase::Cockpit))?;
    let environment =
        datafile::load_dataset_checked(&plan.environment_path, Some(UseCase::Environment))?;
    let cockpit_scene = resolve_scene_for(&cockpit, UseCase::Cockpit)?;
    let environment_scene = resolve_scene_for(&environment, UseCase::Environment)?;
    let cockpit_index =
        TargetIndex::build(&cockpit_scene).map_err(|e| AppError::Config(e.to_string()))?;
    let environment_index =
        TargetIndex::build(&environment_scene).map_err(|e| AppError::Config(e.to_string()))?;
    let config = FusionEvalConfig {
        modalities: plan.modalities,
        width: plan.width,
        hyper: plan.hyper.clone(),
        seed: plan.seed,
    };
    // Fold-level parallelism happens inside via map_folds only for the
    // top-level protocol; the transfer protocol in deixis-core is already
    // fold-sequential, so parallelize here by reimplementing its loop.
    let subjects = cockpit.subjects();
    if subjects != environment.subjects() {
        return Err(AppError::Config(
            "cockpit and environment datasets must share their subject set".into(),
        ));
    }
    let merged;
    let (train_dataset, train_index): (Dataset, &TargetIndex) = match plan.train_source {
        TrainSource::Cockpit => (cockpit.clone(), &cockpit_index),
        TrainSource::Environment => (environment.clone(), &environment_index),
        TrainSource::Combined => {
            merged = cockpit_index.merged(&environment_index);
            (cockpit.union(&environment), &merged)
        }
    };
    let (test_dataset, test_index) = match plan.test_case {
        UseCase::Cockpit => (&cockpit, &cockpit_index),
        UseCase::Environment => (&environment, &environment_index),
    };
    let train_inputs = prepare_direction_samples(&train_dataset, plan.modalities, train_index)
        .map_err(eval_err)?;
    let test_inputs =
        prepare_direction_samples(test_dataset, plan.modalities, test_index).map_err(eval_err)?;
    let folds = loso_folds(&subjects).map_err(eval_err)?;
    let outcomes = map_folds(&folds, plan.jobs, |fold| {
        run_fusion_fold(&train_inputs, &test_inputs, test_index, fold, &config)
    })?;
    let cv = aggregate_folds(outcomes).map_err(eval_err)?;

    ensure_dir(out_dir)?;
    write_csv(&out_dir.join("folds.csv"), &FOLD_HEADER, &fold_rows(&cv))?;
    write_json(
        &out_dir.join("summary.json"),
        &CrossSummary {
            train_source: plan.train_source.as_str().to_string(),
            test_case: plan.test_case.as_str().to_string(),
            aggregate: MetricsJson::from(&cv.aggregate),
        },
    )?;
    Ok(cv)
}

pub struct CaseEvalPlan {
    pub cockpit_path: PathBuf,
    pub environment_path: PathBuf,
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Serialize)]
pub struct CaseSummary {
    pub accuracy: f64,
    pub n: usize,
}

/// LOSO accuracy of the case-distinction model.
pub fn run_case_eval(plan: &CaseEvalPlan, out_dir: &Path) -> Result<CaseCVResult> {
    let cockpit = datafile::load_dataset_checked(&plan.cockpit_path, Some(UseCase::Cockpit))?;
    let environment =
        datafile::load_dataset_checked(&plan.environment_path, Some(UseCase::Environment))?;
    let combined = cockpit.union(&environment);
    let samples = prepare_case_samples(&combined.events);
    let config = CaseEvalConfig {
        width: plan.width,
        hyper: plan.hyper.clone(),
        seed: plan.seed,
    };
    let folds = loso_folds(&combined.subjects()).map_err(eval_err)?;
    let outcomes = map_folds(&folds, plan.jobs, |fold| {
        run_case_fold(&combined.events, &samples, fold, &config)
    })?;
    let cv = aggregate_case_folds(outcomes).map_err(eval_err)?;

    ensure_dir(out_dir)?;
    let rows: Vec<Vec<String>> = cv
        .folds
        .iter()
        .map(|f| {
            vec![
                f.fold.index.to_string(),
                f.fold.test_subject.clone(),
                fmt(f.correct as f64 / f.n as f64),
                f.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("case_folds.csv"),
        &["fold", "test_subject", "accuracy", "n"],
        &rows,
    )?;
    write_json(
        &out_dir.join("case_summary.json"),
        &CaseSummary {
            accuracy: cv.accuracy,
            n: cv.folds.iter().map(|f| f.n).sum(),
        },
    )?;
    Ok(cv)
}

// ── analyze ───────────────────────────────────────────────────────────

pub struct AnalyzePlan {
    pub dataset_paths: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct AnalyzeSummary {
    pub measurement: Vec<MeasurementJson>,
    pub histogram_means: Vec<HistogramMeanJson>,
}

#[derive(Debug, Serialize)]
pub struct MeasurementJson {
    pub use_case: String,
    pub modality: String,
    pub yaw_mean_deg: f64,
    pub yaw_std_deg: f64,
    pub pitch_mean_deg: f64,
    pub pitch_std_deg: f64,
    pub n: usize,
}

#[derive(Debug, Serialize)]
pub struct HistogramMeanJson {
    pub use_case: String,
    pub series: String,
    pub mean_deg: f64,
    pub std_deg: f64,
    pub n: usize,
}

/// Measurement analysis and pitch histograms over one or more datasets.
pub fn run_analyze(plan: &AnalyzePlan, out_dir: &Path) -> Result<AnalyzeSummary> {
    let datasets = load_many(&plan.dataset_paths)?;
    let mut events = Vec::new();
    let mut index: Option<TargetIndex> = None;
    for dataset in &datasets {
        let cases: std::collections::BTreeSet<UseCase> =
            dataset.events.iter().map(|e| e.use_case).collect();
        for case in cases {
            let scene = resolve_scene_for(dataset, case)?;
            let built = TargetIndex::build(&scene).map_err(|e| AppError::Config(e.to_string()))?;
            index = Some(match index.take() {
                Some(existing) => existing.merged(&built),
                None => built,
            });
        }
        events.extend(dataset.events.iter().cloned());
    }
    let index = index.ok_or_else(|| AppError::Config("no events to analyze".into()))?;
    let rows =
        measurement_analysis(&events, &index).map_err(|e| AppError::Config(e.to_string()))?;
    let histograms = direction_histograms(&events).map_err(|e| AppError::Config(e.to_string()))?;

    ensure_dir(out_dir)?;
    let measurement_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.use_case.as_str().to_string(),
                r.modality.as_str().to_string(),
                fmt(r.yaw.mean_deg),
                fmt(r.yaw.std_deg),
                fmt(r.pitch.mean_deg),
                fmt(r.pitch.std_deg),
                r.yaw.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("measurement.csv"),
        &[
            "use_case",
            "modality",
            "yaw_mean_deg",
            "yaw_std_deg",
            "pitch_mean_deg",
            "pitch_std_deg",
            "n",
        ],
        &measurement_rows,
    )?;
    let mut histogram_rows: Vec<Vec<String>> = Vec::new();
    for h in &histograms {
        for (bin, count) in h.counts.iter().enumerate() {
            if *count == 0 {
                continue;
            }
            histogram_rows.push(vec![
                h.use_case.as_str().to_string(),
                h.series.as_str().to_string(),
                fmt(deixis_core::metrics::HIST_MIN_DEG + bin as f64),
                count.to_string(),
            ]);
        }
    }
    write_csv(
        &out_dir.join("histograms.csv"),
        &["use_case", "series", "bin_start_deg", "count"],
        &histogram_rows,
    )?;
    let summary = AnalyzeSummary {
        measurement: rows
            .iter()
            .map(|r| MeasurementJson {
                use_case: r.use_case.as_str().to_string(),
                modality: r.modality.as_str().to_string(),
                yaw_mean_deg: r.yaw.mean_deg,
                yaw_std_deg: r.yaw.std_deg,
                pitch_mean_deg: r.pitch.mean_deg,
                pitch_std_deg: r.pitch.std_deg,
                n: r.yaw.n,
            })
            .collect(),
        histogram_means: histograms
            .iter()
            .map(|h| HistogramMeanJson {
                use_case: h.use_case.as_str().to_string(),
                series: h.series.as_str().to_string(),
                mean_deg: h.mean_deg,
                std_deg: h.std_deg,
                n: h.n,
            })
            .collect(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ── infer ─────────────────────────────────────────────────────────────

pub struct InferPlan {
    pub events_path: PathBuf,
    pub store: PathBuf,
    /// Forced use case; None runs the two-stage classifier.
    pub forced_case: Option<UseCase>,
    pub modalities: ModalitySet,
    pub scene_cockpit: String,
    pub scene_environment: String,
}

/// Per-event predictions, one formatted line per event.
pub fn run_infer(plan: &InferPlan) -> Result<Vec<String>> {
    let dataset = datafile::load_dataset(&plan.events_path)?;
    let store = WeightStore::new(&plan.store);
    let cockpit_scene = scenefile::resolve_scene(&plan.scene_cockpit)?;
    let environment_scene = scenefile::resolve_scene(&plan.scene_environment)?;

    let case_model = match plan.forced_case {
        None => Some(store.load_case()?.0),
        Some(_) => store.load_case().ok().map(|(m, _)| m),
    };
    let cockpit_fusion = store
        .load_fusion(UseCase::Cockpit, plan.modalities)
        .ok()
        .map(|(m, _)| m);
    let environment_fusion = store
        .load_fusion(UseCase::Environment, plan.modalities)
        .ok()
        .map(|(m, _)| m);

    let mut lines = Vec::with_capacity(dataset.events.len());
    for event in &dataset.events {
        let outcome = match plan.forced_case {
            None => {
                let predictor = deixis_core::model::TwoStagePredictor {
                    case_model: case_model.as_ref().expect("loaded above"),
                    cockpit_fusion: cockpit_fusion.as_ref(),
                    environment_fusion: environment_fusion.as_ref(),
                    cockpit_scene: &cockpit_scene,
                    environment_scene: &environment_scene,
                };
                predictor.predict(event)
            }
            Some(case) => forced_predict(
                case,
                event,
                cockpit_fusion.as_ref(),
                environment_fusion.as_ref(),
                &cockpit_scene,
                &environment_scene,
            ),
        }
        .map_err(|e| match e {
            deixis_core::model::ModelError::Store(msg) => AppError::Store(msg.to_string()),
            other => AppError::Config(other.to_string()),
        })?;
        let (yaw, pitch) = deixis_core::geometry::yaw_pitch_deg(outcome.direction)
            .map_err(|e| AppError::Config(e.to_string()))?;
        lines.push(format!(
            "subject={} case={} p_env={:.4} dir=({:.6},{:.6},{:.6}) yaw={:.2} pitch={:.2} target={} hit={}",
            event.subject_id,
            outcome.use_case,
            outcome.p_environment,
            outcome.direction.x,
            outcome.direction.y,
            outcome.direction.z,
            yaw,
            pitch,
            outcome.target_id.as_deref().unwrap_or("-"),
            outcome
                .hit
                .map(|h| if h { "yes" } else { "no" })
                .unwrap_or("-"),
        ));
    }
    Ok(lines)
}

fn forced_predict(
    case: UseCase,
    event: &deixis_core::event::ReferencingEvent,
    cockpit_fusion: Option<&FusionModel>,
    environment_fusion: Option<&FusionModel>,
    cockpit_scene: &Scene,
    environment_scene: &Scene,
) -> std::result::Result<deixis_core::model::TwoStageOutcome, deixis_core::model::ModelError> {
    use deixis_core::model::{predict_direction, ModelError, TwoStageOutcome};
    let (fusion, scene, pose_id) = match case {
        UseCase::Cockpit => (
            cockpit_fusion.ok_or_else(|| ModelError::Store("no cockpit fusion weights".into()))?,
            cockpit_scene,
            None,
        ),
        UseCase::Environment => (
            environment_fusion
                .ok_or_else(|| ModelError::Store("no environment fusion weights".into()))?,
            environment_scene,
            event.pose_id,
        ),
    };
    let direction = predict_direction(fusion, event)?;
    let needs_pose = case == UseCase::Environment && pose_id.is_none();
    let (target_id, hit) = if needs_pose {
        (None, None)
    } else {
        let id = deixis_core::scene::resolve_nearest(direction, scene, pose_id)?;
        let target = scene.target(&id)?;
        let pose = match pose_id {
            Some(pid) => Some(*scene.pose(pid)?),
            None => None,
        };
        let extent = deixis_core::scene::angular_extent(target, pose.as_ref())?;
        (
            Some(id),
            Some(deixis_core::scene::hit_test(direction, &extent)?),
        )
    };
    Ok(TwoStageOutcome {
        use_case: case,
        p_environment: match case {
            UseCase::Cockpit => 0.0,
            UseCase::Environment => 1.0,
        },
        direction,
        target_id,
        hit,
    })
}

/// Case probabilities for one dataset (diagnostic helper for infer tests).
pub fn case_probabilities(model: &CaseModel, dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .events
        .iter()
        .map(|e| {
            predict_case(model, e)
                .map(|p| p.p_environment)
                .map_err(|err| AppError::Config(err.to_string()))
        })
        .collect()
}
