//! Leave-one-subject-out evaluation protocol: fold construction, fusion and
//! case-model cross-validation, modality ablation, cross-use-case transfer
//! and per-driver reporting.
//!
//! Fold i tests subject i and validates on subject (i+1) mod n, so no
//! subject ever appears in two roles within a fold. Aggregates weight folds
//! by test-set size; the angular-distance spread is pooled over all fold
//! residuals rather than averaged across folds.

use crate::event::{Dataset, ModalitySet, ReferencingEvent, UseCase};
use crate::geometry::normalize;
use crate::metrics::{MetricsError, MetricsReport, MetricsSums, TargetIndex};
use crate::model::{
    predict_case, prepare_case_input, prepare_fusion_input, train_case, train_fusion, CaseModel,
    CaseSample, DirectionSample, FusionModel, Hyper, ModelError,
};
use crate::tensor::Tensor;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    InvalidConfig(String),
    Metrics(MetricsError),
    Model(ModelError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::InvalidConfig(s) => write!(f, "invalid config: {s}"),
            EvalError::Metrics(e) => write!(f, "{e}"),
            EvalError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<MetricsError> for EvalError {
    fn from(e: MetricsError) -> Self {
        EvalError::Metrics(e)
    }
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(e)
    }
}

/// One cross-validation fold: who is held out and who validates.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub index: usize,
    pub test_subject: String,
    pub val_subject: String,
}

/// One fold per subject; the validation subject rotates cyclically.
pub fn loso_folds(subjects: &[String]) -> Result<Vec<FoldSpec>, EvalError> {
    if subjects.len() < 3 {
        return Err(EvalError::InvalidConfig(alloc::format!(
            "leave-one-subject-out needs at least 3 subjects, got {}",
            subjects.len()
        )));
    }
    Ok((0..subjects.len())
        .map(|i| FoldSpec {
            index: i,
            test_subject: subjects[i].clone(),
            val_subject: subjects[(i + 1) % subjects.len()].clone(),
        })
        .collect())
}

/// Evaluation configuration shared by all folds of one run.
#[derive(Debug, Clone)]
pub struct FusionEvalConfig {
    pub modalities: ModalitySet,
    /// Kernels per convolution layer.
    pub width: usize,
    pub hyper: Hyper,
    /// Base seed; per-fold seeds are derived from it.
    pub seed: u64,
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Prepared fusion inputs aligned with a dataset's events.
pub struct FusionInputs<'a> {
    pub events: &'a [ReferencingEvent],
    pub samples: Vec<DirectionSample>,
}

/// Interpolates every event once and resolves its ground truth.
pub fn prepare_direction_samples<'a>(
    dataset: &'a Dataset,
    modalities: ModalitySet,
    index: &TargetIndex,
) -> Result<FusionInputs<'a>, EvalError> {
    let mut samples = Vec::with_capacity(dataset.events.len());
    for event in &dataset.events {
        let (gt, _) = index.lookup(event)?;
        samples.push(DirectionSample {
            features: prepare_fusion_input(event, modalities),
            target: *gt,
        });
    }
    Ok(FusionInputs {
        events: &dataset.events,
        samples,
    })
}

/// Prepared case-model inputs: label 1 = environment.
pub fn prepare_case_samples(events: &[ReferencingEvent]) -> Vec<CaseSample> {
    events
        .iter()
        .map(|event| CaseSample {
            features: prepare_case_input(event),
            label: match event.use_case {
                UseCase::Cockpit => 0.0,
                UseCase::Environment => 1.0,
            },
        })
        .collect()
}

/// Outcome of one fusion fold: per-event metric sums over the held-out
/// subject plus training diagnostics.
#[derive(Debug, Clone)]
pub struct FusionFoldOutcome {
    pub fold: FoldSpec,
    pub sums: MetricsSums,
    pub best_val_loss: f64,
    pub n_train: usize,
}

/// Trains one fold on prepared inputs and scores the held-out subject.
/// `train_inputs` supplies the training/validation pool; `test_inputs`
/// supplies the test pool (they differ in cross-use-case transfer runs).
pub fn run_fusion_fold(
    train_inputs: &FusionInputs<'_>,
    test_inputs: &FusionInputs<'_>,
    test_index: &TargetIndex,
    fold: &FoldSpec,
    config: &FusionEvalConfig,
) -> Result<FusionFoldOutcome, EvalError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (event, sample) in train_inputs.events.iter().zip(&train_inputs.samples) {
        if event.subject_id == fold.test_subject {
            continue;
        }
        if event.subject_id == fold.val_subject {
            val.push(sample.clone());
        } else {
            train.push(sample.clone());
        }
    }
    let test: Vec<(usize, &ReferencingEvent)> = test_inputs
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.subject_id == fold.test_subject)
        .collect();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(EvalError::InvalidConfig(alloc::format!(
            "fold {} (test {}, val {}) has an empty split",
            fold.index,
            fold.test_subject,
            fold.val_subject
        )));
    }
    let seed = fold_seed(config.seed, fold.index);
    let mut model = FusionModel::new(config.modalities, config.width, seed)?;
    let hyper = Hyper {
        seed: seed ^ 0x5eed,
        ..config.hyper.clone()
    };
    let history = train_fusion(&mut model, &train, &val, &hyper)?;

    let mut sums = MetricsSums::default();
    for chunk in test.chunks(64) {
        let xs: Vec<&Tensor> = chunk
            .iter()
            .map(|(i, _)| &test_inputs.samples[*i].features)
            .collect();
        let mut shape = alloc::vec![xs.len()];
        shape.extend_from_slice(xs[0].shape());
        let mut values = Vec::with_capacity(xs.len() * xs[0].len());
        for x in &xs {
            values.extend_from_slice(x.values());
        }
        let batch = Tensor::from_values(&shape, values);
        let out = model.predict_batch(&batch)?;
        for (row, (_, event)) in chunk.iter().enumerate() {
            let raw = crate::geometry::Vec3::new(
                out.values()[row * 3],
                out.values()[row * 3 + 1],
                out.values()[row * 3 + 2],
            );
            let dir = normalize(raw).map_err(ModelError::from)?;
            let (ad, hit) = crate::metrics::score_prediction(dir, event, test_index)?;
            sums.push(ad, hit);
        }
    }
    Ok(FusionFoldOutcome {
        fold: fold.clone(),
        sums,
        best_val_loss: history.best_val_loss,
        n_train: train.len(),
    })
}

/// Cross-validation result: per-fold reports plus the weighted aggregate.
#[derive(Debug, Clone)]
pub struct CVResult {
    pub folds: Vec<FusionFoldOutcome>,
    pub aggregate: MetricsReport,
}

/// Pools fold outcomes into the weighted aggregate report.
pub fn aggregate_folds(folds: Vec<FusionFoldOutcome>) -> Result<CVResult, EvalError> {
    let mut total = MetricsSums::default();
    for f in &folds {
        total.merge(&f.sums);
    }
    let aggregate = total.report()?;
    Ok(CVResult { folds, aggregate })
}

/// Full leave-one-subject-out cross-validation of the fusion model.
pub fn loso_fusion_cv(
    dataset: &Dataset,
    index: &TargetIndex,
    config: &FusionEvalConfig,
) -> Result<CVResult, EvalError> {
    let inputs = prepare_direction_samples(dataset, config.modalities, index)?;
    let folds = loso_folds(&dataset.subjects())?;
    let outcomes = folds
        .iter()
        .map(|fold| run_fusion_fold(&inputs, &inputs, index, fold, config))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_folds(outcomes)
}

/// One LOSO run per modality subset.
pub fn ablation(
    dataset: &Dataset,
    index: &TargetIndex,
    subsets: &[ModalitySet],
    config: &FusionEvalConfig,
) -> Result<Vec<(ModalitySet, CVResult)>, EvalError> {
    let mut out = Vec::with_capacity(subsets.len());
    for &modalities in subsets {
        let cv = loso_fusion_cv(
            dataset,
            index,
            &FusionEvalConfig {
                modalities,
                ..config.clone()
            },
        )?;
        out.push((modalities, cv));
    }
    Ok(out)
}

/// Training pool for a transfer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSource {
    Cockpit,
    Environment,
    /// Union of both use cases.
    Combined,
}

impl TrainSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainSource::Cockpit => "cockpit",
            TrainSource::Environment => "environment",
            TrainSource::Combined => "combined",
        }
    }
}

/// Cross-use-case transfer under the LOSO protocol: fold i trains on the
/// source pool without subjects i and i+1, validates on subject i+1's
/// source events, and tests on subject i's events from the target use case.
pub fn cross_dataset_cv(
    cockpit: &Dataset,
    environment: &Dataset,
    source: TrainSource,
    test_case: UseCase,
    cockpit_index: &TargetIndex,
    environment_index: &TargetIndex,
    config: &FusionEvalConfig,
) -> Result<CVResult, EvalError> {
    let subjects = cockpit.subjects();
    if subjects != environment.subjects() {
        return Err(EvalError::InvalidConfig(
            "cockpit and environment datasets must share their subject set".to_string(),
        ));
    }
    let combined;
    let (train_dataset, train_index): (&Dataset, &TargetIndex) = match source {
        TrainSource::Cockpit => (cockpit, cockpit_index),
        TrainSource::Environment => (environment, environment_index),
        TrainSource::Combined => {
            combined = cockpit.union(environment);
            (&combined, cockpit_index)
        }
    };
    // The combined pool spans both scenes, so resolve ground truth with the
    // merged index.
    let paired;
    let train_index = if source == TrainSource::Combined {
        paired = cockpit_index.merged(environment_index);
        &paired
    } else {
        train_index
    };
    let (test_dataset, test_index) = match test_case {
        UseCase::Cockpit => (cockpit, cockpit_index),
        UseCase::Environment => (environment, environment_index),
    };
    let train_inputs = prepare_direction_samples(train_dataset, config.modalities, train_index)?;
    let test_inputs = prepare_direction_samples(test_dataset, config.modalities, test_index)?;
    let folds = loso_folds(&subjects)?;
    let outcomes = folds
        .iter()
        .map(|fold| run_fusion_fold(&train_inputs, &test_inputs, test_index, fold, config))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_folds(outcomes)
}

/// Case-model evaluation configuration.
#[derive(Debug, Clone)]
pub struct CaseEvalConfig {
    pub width: usize,
    pub hyper: Hyper,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CaseFoldOutcome {
    pub fold: FoldSpec,
    pub correct: usize,
    pub n: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CaseCVResult {
    pub folds: Vec<CaseFoldOutcome>,
    /// Weighted binary accuracy over all folds.
    pub accuracy: f64,
}

/// One case-distinction fold over the combined dataset.
pub fn run_case_fold(
    events: &[ReferencingEvent],
    samples: &[CaseSample],
    fold: &FoldSpec,
    config: &CaseEvalConfig,
) -> Result<CaseFoldOutcome, EvalError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (event, sample) in events.iter().zip(samples) {
        if event.subject_id == fold.test_subject {
            test.push((event, sample));
        } else if event.subject_id == fold.val_subject {
            val.push(sample.clone());
        } else {
            train.push(sample.clone());
        }
    }
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(EvalError::InvalidConfig(alloc::format!(
            "case fold {} has an empty split",
            fold.index
        )));
    }
    let seed = fold_seed(config.seed, fold.index);
    let mut model = CaseModel::new(config.width, seed)?;
    let hyper = Hyper {
        seed: seed ^ 0x5eed,
        ..config.hyper.clone()
    };
    let history = train_case(&mut model, &train, &val, &hyper)?;
    let mut correct = 0;
    for (event, _) in &test {
        let pred = predict_case(&model, event)?;
        correct += usize::from(pred.use_case == event.use_case);
    }
    Ok(CaseFoldOutcome {
        fold: fold.clone(),
        correct,
        n: test.len(),
        best_val_loss: history.best_val_loss,
    })
}

pub fn aggregate_case_folds(folds: Vec<CaseFoldOutcome>) -> Result<CaseCVResult, EvalError> {
    let total: usize = folds.iter().map(|f| f.n).sum();
    if total == 0 {
        return Err(EvalError::InvalidConfig("no test events".into()));
    }
    let correct: usize = folds.iter().map(|f| f.correct).sum();
    Ok(CaseCVResult {
        folds,
        accuracy: correct as f64 / total as f64,
    })
}

/// LOSO accuracy of the case-distinction model over the union of both
/// datasets.
pub fn loso_case_cv(
    cockpit: &Dataset,
    environment: &Dataset,
    config: &CaseEvalConfig,
) -> Result<CaseCVResult, EvalError> {
    let combined = cockpit.union(environment);
    let samples = prepare_case_samples(&combined.events);
    let folds = loso_folds(&combined.subjects())?;
    let outcomes = folds
        .iter()
        .map(|fold| run_case_fold(&combined.events, &samples, fold, config))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_case_folds(outcomes)
}

/// Per-subject row of a cross-validation result.
#[derive(Debug, Clone)]
pub struct DriverRow {
    pub subject: String,
    pub report: MetricsReport,
}

/// Per-driver table: each fold's held-out subject with its own metrics.
pub fn per_driver_report(cv: &CVResult) -> Result<Vec<DriverRow>, EvalError> {
    let mut rows = Vec::with_capacity(cv.folds.len());
    for fold in &cv.folds {
        let mut report = fold.sums.report()?;
        report.subject = Some(fold.fold.test_subject.clone());
        rows.push(DriverRow {
            subject: fold.fold.test_subject.clone(),
            report,
        });
    }
    rows.sort_by(|a, b| a.subject.cmp(&b.subject));
    Ok(rows)
}
