//! The two referencing networks and their training loop.
//!
//! The case-distinction model is a shallow early-fusion CNN over the full
//! 36x6x3 feature window that decides whether the referenced object lies
//! inside or outside the vehicle. The fusion model regresses the pointing
//! direction: per-modality convolution branches over each 36x2x3 slice,
//! feature-map concatenation, a shared convolution trunk and a linear
//! 3-vector head.

use crate::event::{
    interpolate_missing, modality_slice, to_tensor, FeatureTensor, ModalitySet, ReferencingEvent,
    UseCase, EVENT_FRAMES, FEATURE_DIMS,
};
use crate::geometry::{normalize, GeometryError, Vec3};
use crate::scene::{self, Scene, SceneError};
use crate::tensor::{adam_step, AdamState, Graph, NodeId, PlateauSchedule, Tensor, TensorError};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Kernels per convolution layer in the full-size fusion model.
pub const FUSION_WIDTH: usize = 128;
/// Kernels per convolution layer in the full-size case model.
pub const CASE_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    InvalidConfig(String),
    /// Requested weights are absent from the store.
    Store(String),
    /// Architecture fingerprint or parameter layout mismatch on import.
    WeightMismatch(String),
    Tensor(TensorError),
    Geometry(GeometryError),
    Scene(SceneError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(s) => write!(f, "invalid config: {s}"),
            ModelError::Store(s) => write!(f, "weight store: {s}"),
            ModelError::WeightMismatch(s) => write!(f, "weight mismatch: {s}"),
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Geometry(e) => write!(f, "{e}"),
            ModelError::Scene(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<GeometryError> for ModelError {
    fn from(e: GeometryError) -> Self {
        ModelError::Geometry(e)
    }
}

impl From<SceneError> for ModelError {
    fn from(e: SceneError) -> Self {
        ModelError::Scene(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    kernel: Tensor,
    bias: Tensor,
}

impl ConvLayer {
    /// He-style uniform fan-in initialization, zero bias.
    fn init(rng: &mut ChaCha8Rng, kh: usize, kw: usize, cin: usize, cout: usize) -> ConvLayer {
        let fan_in = (kh * kw * cin) as f64;
        let limit = crate::math::sqrt(6.0 / fan_in);
        let n = kh * kw * cin * cout;
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        ConvLayer {
            kernel: Tensor::from_values(&[kh, kw, cin, cout], values),
            bias: Tensor::zeros(&[cout]),
        }
    }

    fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
}

impl DenseLayer {
    fn init(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DenseLayer {
        let limit = crate::math::sqrt(6.0 / n as f64);
        let values: Vec<f64> = (0..n * m)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        DenseLayer {
            weight: Tensor::from_values(&[n, m], values),
            bias: Tensor::zeros(&[m]),
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    conv1: ConvLayer,
    conv2: ConvLayer,
}

/// Model-level fusion regressor over a modality subset.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub modalities: ModalitySet,
    pub width: usize,
    branches: Vec<Branch>,
    trunk1: ConvLayer,
    trunk2: ConvLayer,
    head: DenseLayer,
}

impl FusionModel {
    /// Builds an untrained model with deterministic seeded initialization.
    /// `width` is the kernel count per convolution layer ([`FUSION_WIDTH`]
    /// for the full-size network; smaller for desk-scale work).
    pub fn new(
        modalities: ModalitySet,
        width: usize,
        seed: u64,
    ) -> Result<FusionModel, ModelError> {
        if modalities.is_empty() {
            return Err(ModelError::InvalidConfig("empty modality set".into()));
        }
        if width == 0 {
            return Err(ModelError::InvalidConfig("zero width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = modalities
            .members()
            .iter()
            .map(|_| Branch {
                conv1: ConvLayer::init(&mut rng, 2, 2, FEATURE_DIMS, width),
                conv2: ConvLayer::init(&mut rng, 2, 2, width, width),
            })
            .collect::<Vec<_>>();
        let trunk1 = ConvLayer::init(&mut rng, 3, 3, width, width);
        let trunk2 = ConvLayer::init(&mut rng, 3, 3, width, width);
        let pooled_frames = EVENT_FRAMES.div_ceil(2);
        let flat = pooled_frames * 2 * modalities.len() * width;
        let head = DenseLayer::init(&mut rng, flat, 3);
        Ok(FusionModel {
            modalities,
            width,
            branches,
            trunk1,
            trunk2,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.branches
            .iter()
            .map(|b| b.conv1.param_count() + b.conv2.param_count())
            .sum::<usize>()
            + self.trunk1.param_count()
            + self.trunk2.param_count()
            + self.head.param_count()
    }

    /// Ordered (name, tensor) pairs of all trainable parameters.
    pub fn export_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (branch, m) in self.branches.iter().zip(self.modalities.members()) {
            out.push((
                alloc::format!("{}.conv1.kernel", m.as_str()),
                branch.conv1.kernel.clone(),
            ));
            out.push((
                alloc::format!("{}.conv1.bias", m.as_str()),
                branch.conv1.bias.clone(),
            ));
            out.push((
                alloc::format!("{}.conv2.kernel", m.as_str()),
                branch.conv2.kernel.clone(),
            ));
            out.push((
                alloc::format!("{}.conv2.bias", m.as_str()),
                branch.conv2.bias.clone(),
            ));
        }
        out.push(("trunk.conv1.kernel".to_string(), self.trunk1.kernel.clone()));
        out.push(("trunk.conv1.bias".to_string(), self.trunk1.bias.clone()));
        out.push(("trunk.conv2.kernel".to_string(), self.trunk2.kernel.clone()));
        out.push(("trunk.conv2.bias".to_string(), self.trunk2.bias.clone()));
        out.push(("head.weight".to_string(), self.head.weight.clone()));
        out.push(("head.bias".to_string(), self.head.bias.clone()));
        out
    }

    /// Replaces parameters from export order; names and shapes must match.
    pub fn import_params(&mut self, params: &[(String, Tensor)]) -> Result<(), ModelError> {
        let expected = self.export_params();
        if params.len() != expected.len() {
            return Err(ModelError::WeightMismatch(alloc::format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, value), (want_name, want)) in params.iter().zip(&expected) {
            if name != want_name || value.shape() != want.shape() {
                return Err(ModelError::WeightMismatch(alloc::format!(
                    "parameter {name}{:?} does not match expected {want_name}{:?}",
                    value.shape(),
                    want.shape()
                )));
            }
        }
        let mut iter = params.iter().map(|(_, t)| t.clone());
        for branch in self.branches.iter_mut() {
            branch.conv1.kernel = iter.next().expect("checked length");
            branch.conv1.bias = iter.next().expect("checked length");
            branch.conv2.kernel = iter.next().expect("checked length");
            branch.conv2.bias = iter.next().expect("checked length");
        }
        self.trunk1.kernel = iter.next().expect("checked length");
        self.trunk1.bias = iter.next().expect("checked length");
        self.trunk2.kernel = iter.next().expect("checked length");
        self.trunk2.bias = iter.next().expect("checked length");
        self.head.weight = iter.next().expect("checked length");
        self.head.bias = iter.next().expect("checked length");
        Ok(())
    }

    /// Architecture descriptor checked when loading stored weights.
    pub fn fingerprint(&self) -> String {
        alloc::format!(
            "fusion/v1;modalities={};width={};frames={EVENT_FRAMES}",
            self.modalities,
            self.width
        )
    }

    /// Splits a combined `[b, t, 2m, 3]` batch into per-modality `[b,t,2,3]`
    /// tensors in branch order.
    fn split_branches(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        let s = x.shape();
        let m = self.modalities.len();
        if s.len() != 4 || s[1] != EVENT_FRAMES || s[2] != 2 * m || s[3] != FEATURE_DIMS {
            return Err(ModelError::InvalidConfig(alloc::format!(
                "fusion input {s:?} does not match [b, {EVENT_FRAMES}, {}, {FEATURE_DIMS}]",
                2 * m
            )));
        }
        let (b, t, f) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(m);
        for mi in 0..m {
            let mut values = Vec::with_capacity(b * t * 2 * FEATURE_DIMS);
            for bi in 0..b {
                for ti in 0..t {
                    for fi in (2 * mi)..(2 * mi + 2) {
                        let base = ((bi * t + ti) * f + fi) * FEATURE_DIMS;
                        values.extend_from_slice(&x.values()[base..base + FEATURE_DIMS]);
                    }
                }
            }
            out.push(Tensor::from_values(&[b, t, 2, FEATURE_DIMS], values));
        }
        Ok(out)
    }

    fn forward_with(
        &self,
        g: &mut Graph,
        x: &Tensor,
        trainable: bool,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let insert = |g: &mut Graph, t: &Tensor, ids: &mut Vec<NodeId>| {
            let id = if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            };
            ids.push(id);
            id
        };
        let mut param_ids = Vec::new();
        let branch_inputs = self.split_branches(x)?;
        let mut maps = Vec::with_capacity(self.branches.len());
        for (branch, input) in self.branches.iter().zip(branch_inputs) {
            let xid = g.input(input);
            let k1 = insert(g, &branch.conv1.kernel, &mut param_ids);
            let b1 = insert(g, &branch.conv1.bias, &mut param_ids);
            let c1 = g.conv2d(xid, k1, b1)?;
            let r1 = g.relu(c1);
            let k2 = insert(g, &branch.conv2.kernel, &mut param_ids);
            let b2 = insert(g, &branch.conv2.bias, &mut param_ids);
            let c2 = g.conv2d(r1, k2, b2)?;
            let r2 = g.relu(c2);
            maps.push(g.avg_pool_rows(r2)?);
        }
        let joined = if maps.len() == 1 {
            maps[0]
        } else {
            g.concat(&maps, 2)?
        };
        let tk1 = insert(g, &self.trunk1.kernel, &mut param_ids);
        let tb1 = insert(g, &self.trunk1.bias, &mut param_ids);
        let t1 = g.conv2d(joined, tk1, tb1)?;
        let t1r = g.relu(t1);
        let tk2 = insert(g, &self.trunk2.kernel, &mut param_ids);
        let tb2 = insert(g, &self.trunk2.bias, &mut param_ids);
        let t2 = g.conv2d(t1r, tk2, tb2)?;
        let t2r = g.relu(t2);
        let flat = g.flatten(t2r);
        let hw = insert(g, &self.head.weight, &mut param_ids);
        let hb = insert(g, &self.head.bias, &mut param_ids);
        let out = g.dense(flat, hw, hb)?;
        Ok((param_ids, out))
    }

    /// Raw `[b,3]` regression output for a batch.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let (_, out) = self.forward_with(&mut g, x, false)?;
        Ok(g.value(out).clone())
    }

    /// Records the training loss graph for a batch; returns the parameter
    /// node ids (in [`FusionModel::export_params`] order) and the scalar
    /// loss node.
    pub fn training_loss_graph(
        &self,
        g: &mut Graph,
        batch: &[&DirectionSample],
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        Trainable::batch_loss(self, g, batch, true)
    }
}

/// Shallow early-fusion classifier: inside (cockpit) vs outside
/// (environment).
#[derive(Debug, Clone, PartialEq)]
pub struct CaseModel {
    pub width: usize,
    conv1: ConvLayer,
    conv2: ConvLayer,
    head: DenseLayer,
}

impl CaseModel {
    pub fn new(width: usize, seed: u64) -> Result<CaseModel, ModelError> {
        if width == 0 {
            return Err(ModelError::InvalidConfig("zero width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(CaseModel {
            width,
            conv1: ConvLayer::init(&mut rng, 3, 3, FEATURE_DIMS, width),
            conv2: ConvLayer::init(&mut rng, 3, 3, width, width),
            head: DenseLayer::init(&mut rng, width, 1),
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.head.param_count()
    }

    pub fn export_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("conv1.kernel".to_string(), self.conv1.kernel.clone()),
            ("conv1.bias".to_string(), self.conv1.bias.clone()),
            ("conv2.kernel".to_string(), self.conv2.kernel.clone()),
            ("conv2.bias".to_string(), self.conv2.bias.clone()),
            ("head.weight".to_string(), self.head.weight.clone()),
            ("head.bias".to_string(), self.head.bias.clone()),
        ]
    }

    pub fn import_params(&mut self, params: &[(String, Tensor)]) -> Result<(), ModelError> {
        let expected = self.export_params();
        if params.len() != expected.len() {
            return Err(ModelError::WeightMismatch(alloc::format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, value), (want_name, want)) in params.iter().zip(&expected) {
            if name != want_name || value.shape() != want.shape() {
                return Err(ModelError::WeightMismatch(alloc::format!(
                    "parameter {name}{:?} does not match expected {want_name}{:?}",
                    value.shape(),
                    want.shape()
                )));
            }
        }
        self.conv1.kernel = params[0].1.clone();
        self.conv1.bias = params[1].1.clone();
        self.conv2.kernel = params[2].1.clone();
        self.conv2.bias = params[3].1.clone();
        self.head.weight = params[4].1.clone();
        self.head.bias = params[5].1.clone();
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        alloc::format!("case/v1;width={};frames={EVENT_FRAMES}", self.width)
    }

    fn forward_with(
        &self,
        g: &mut Graph,
        x: &Tensor,
        trainable: bool,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let s = x.shape();
        if s.len() != 4 || s[1] != EVENT_FRAMES || s[2] != 6 || s[3] != FEATURE_DIMS {
            return Err(ModelError::InvalidConfig(alloc::format!(
                "case input {s:?} does not match [b, {EVENT_FRAMES}, 6, {FEATURE_DIMS}]"
            )));
        }
        let insert = |g: &mut Graph, t: &Tensor, ids: &mut Vec<NodeId>| {
            let id = if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            };
            ids.push(id);
            id
        };
        let mut param_ids = Vec::new();
        let xid = g.input(x.clone());
        let k1 = insert(g, &self.conv1.kernel, &mut param_ids);
        let b1 = insert(g, &self.conv1.bias, &mut param_ids);
        let c1 = g.conv2d(xid, k1, b1)?;
        let r1 = g.relu(c1);
        let k2 = insert(g, &self.conv2.kernel, &mut param_ids);
        let b2 = insert(g, &self.conv2.bias, &mut param_ids);
        let c2 = g.conv2d(r1, k2, b2)?;
        let r2 = g.relu(c2);
        let pooled = g.global_avg_pool(r2)?;
        let hw = insert(g, &self.head.weight, &mut param_ids);
        let hb = insert(g, &self.head.bias, &mut param_ids);
        let d = g.dense(pooled, hw, hb)?;
        let out = g.sigmoid(d);
        Ok((param_ids, out))
    }

    /// Probability of the environment (outside-vehicle) case per batch row.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let (_, out) = self.forward_with(&mut g, x, false)?;
        Ok(g.value(out).clone())
    }

    /// Records the training loss graph for a batch; returns the parameter
    /// node ids (in [`CaseModel::export_params`] order) and the scalar loss
    /// node.
    pub fn training_loss_graph(
        &self,
        g: &mut Graph,
        batch: &[&CaseSample],
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        Trainable::batch_loss(self, g, batch, true)
    }
}

/// Training hyperparameters. Defaults follow the standard protocol: batch
/// size 32, 50 epochs, Adam starting at 1e-3 with plateau halving.
#[derive(Debug, Clone)]
pub struct Hyper {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Seed for shuffling; model initialization is seeded separately.
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            batch_size: 32,
            epochs: 50,
            lr0: 0.001,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// One training example for the fusion model: a `[t, 2m, 3]` feature window
/// and its unit ground-truth direction.
#[derive(Debug, Clone)]
pub struct DirectionSample {
    pub features: Tensor,
    pub target: Vec3,
}

/// One training example for the case model: the full `[t, 6, 3]` window and
/// a 0/1 label (1 = environment).
#[derive(Debug, Clone)]
pub struct CaseSample {
    pub features: Tensor,
    pub label: f64,
}

/// Interpolates an event and assembles the `[t, 2m, 3]` fusion input for a
/// modality subset.
pub fn prepare_fusion_input(event: &ReferencingEvent, modalities: ModalitySet) -> Tensor {
    let (frames, _) = interpolate_missing(&event.frames);
    let mut interpolated = event.clone();
    interpolated.frames = frames;
    let tensor = to_tensor(&interpolated);
    let sliced = modality_slice(&tensor, modalities);
    feature_tensor_to_tensor(&sliced)
}

/// Interpolates an event and assembles the full `[t, 6, 3]` case input.
pub fn prepare_case_input(event: &ReferencingEvent) -> Tensor {
    let (frames, _) = interpolate_missing(&event.frames);
    let mut interpolated = event.clone();
    interpolated.frames = frames;
    feature_tensor_to_tensor(&to_tensor(&interpolated))
}

fn feature_tensor_to_tensor(ft: &FeatureTensor) -> Tensor {
    Tensor::from_values(&[ft.frames, ft.features, FEATURE_DIMS], ft.values.clone())
}

/// Stacks per-sample `[t,f,3]` tensors into one `[b,t,f,3]` batch.
fn stack(samples: &[&Tensor]) -> Tensor {
    let s = samples[0].shape();
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(s);
    let mut values = Vec::with_capacity(samples.len() * samples[0].len());
    for t in samples {
        debug_assert_eq!(t.shape(), s);
        values.extend_from_slice(t.values());
    }
    Tensor::from_values(&shape, values)
}

trait Trainable {
    type Sample;
    fn snapshot(&self) -> Vec<Tensor>;
    fn restore(&mut self, params: &[Tensor]);
    /// Builds the batch loss graph; returns parameter node ids (in snapshot
    /// order) and the scalar loss node.
    fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&Self::Sample],
        trainable: bool,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError>;
}

impl Trainable for FusionModel {
    type Sample = DirectionSample;

    fn snapshot(&self) -> Vec<Tensor> {
        self.export_params().into_iter().map(|(_, t)| t).collect()
    }

    fn restore(&mut self, params: &[Tensor]) {
        let named: Vec<(String, Tensor)> = self
            .export_params()
            .into_iter()
            .map(|(n, _)| n)
            .zip(params.iter().cloned())
            .collect();
        self.import_params(&named)
            .expect("snapshot layout is stable");
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&DirectionSample],
        trainable: bool,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let xs: Vec<&Tensor> = batch.iter().map(|s| &s.features).collect();
        let x = stack(&xs);
        let mut targets = Vec::with_capacity(batch.len() * 3);
        for s in batch {
            targets.extend_from_slice(&[s.target.x, s.target.y, s.target.z]);
        }
        let gt = Tensor::from_values(&[batch.len(), 3], targets);
        let (params, out) = self.forward_with(g, &x, trainable)?;
        let loss = g.mad_loss(out, &gt)?;
        Ok((params, loss))
    }
}

impl Trainable for CaseModel {
    type Sample = CaseSample;

    fn snapshot(&self) -> Vec<Tensor> {
        self.export_params().into_iter().map(|(_, t)| t).collect()
    }

    fn restore(&mut self, params: &[Tensor]) {
        let named: Vec<(String, Tensor)> = self
            .export_params()
            .into_iter()
            .map(|(n, _)| n)
            .zip(params.iter().cloned())
            .collect();
        self.import_params(&named)
            .expect("snapshot layout is stable");
    }

    fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&CaseSample],
        trainable: bool,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let xs: Vec<&Tensor> = batch.iter().map(|s| &s.features).collect();
        let x = stack(&xs);
        let labels: Vec<f64> = batch.iter().map(|s| s.label).collect();
        let y = Tensor::from_values(&[batch.len(), 1], labels);
        let (params, out) = self.forward_with(g, &x, trainable)?;
        let loss = g.bce_loss(out, &y)?;
        Ok((params, loss))
    }
}

fn mean_loss<M: Trainable>(
    model: &M,
    samples: &[M::Sample],
    batch_size: usize,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size) {
        let refs: Vec<&M::Sample> = chunk.iter().collect();
        let mut g = Graph::new();
        let (_, loss) = model.batch_loss(&mut g, &refs, false)?;
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn train_impl<M: Trainable>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    hyper: &Hyper,
) -> Result<TrainHistory, ModelError> {
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(ModelError::InvalidConfig(
            "batch size and epoch count must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = model.snapshot();
    let mut adam = AdamState::new(&params);
    let mut schedule = PlateauSchedule::new(hyper.lr0);
    schedule.patience = hyper.plateau_patience;
    schedule.factor = hyper.plateau_factor;
    schedule.min_lr = hyper.min_lr;

    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..hyper.epochs {
        // Fisher-Yates shuffle with the training rng.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let lr = schedule.lr();
        let mut train_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            model.restore(&params);
            let refs: Vec<&M::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let (param_ids, loss) = model.batch_loss(&mut g, &refs, true)?;
            train_loss += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss)?;
            let grad_tensors: Vec<Tensor> = param_ids
                .iter()
                .zip(&params)
                .map(|(&id, p)| grads.of(id, p.shape()))
                .collect();
            adam_step(&mut params, &grad_tensors, &mut adam, lr);
        }
        train_loss /= train.len() as f64;
        model.restore(&params);
        let val_loss = mean_loss(model, val, hyper.batch_size)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        schedule.observe(val_loss);
        history.push(EpochStats {
            train_loss,
            val_loss,
            lr,
        });
    }
    model.restore(&best_params);
    Ok(TrainHistory {
        epochs: history,
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Trains the fusion model, returning the parameter snapshot with minimal
/// validation loss and the per-epoch history.
pub fn train_fusion(
    model: &mut FusionModel,
    train: &[DirectionSample],
    val: &[DirectionSample],
    hyper: &Hyper,
) -> Result<TrainHistory, ModelError> {
    train_impl(model, train, val, hyper)
}

/// Trains the case-distinction model; labels are 1 for environment.
pub fn train_case(
    model: &mut CaseModel,
    train: &[CaseSample],
    val: &[CaseSample],
    hyper: &Hyper,
) -> Result<TrainHistory, ModelError> {
    train_impl(model, train, val, hyper)
}

/// Unit-norm predicted direction for one (preprocessed) event.
pub fn predict_direction(
    model: &FusionModel,
    event: &ReferencingEvent,
) -> Result<Vec3, ModelError> {
    let input = prepare_fusion_input(event, model.modalities);
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let batch = Tensor::from_values(&shape, input.values().to_vec());
    let out = model.predict_batch(&batch)?;
    let v = Vec3::new(out.values()[0], out.values()[1], out.values()[2]);
    if v.norm() < 1e-9 {
        return Err(ModelError::Geometry(GeometryError::DegenerateVector));
    }
    Ok(normalize(v)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasePrediction {
    pub use_case: UseCase,
    /// Probability of the environment case; the cockpit probability is its
    /// complement.
    pub p_environment: f64,
}

/// Classifies an event as inside or outside referencing at threshold 0.5.
pub fn predict_case(
    model: &CaseModel,
    event: &ReferencingEvent,
) -> Result<CasePrediction, ModelError> {
    let input = prepare_case_input(event);
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let batch = Tensor::from_values(&shape, input.values().to_vec());
    let out = model.predict_batch(&batch)?;
    let p = out.values()[0];
    Ok(CasePrediction {
        use_case: classify_with_threshold(p, 0.5),
        p_environment: p,
    })
}

/// Environment iff the environment probability strictly exceeds the
/// threshold, so raising the threshold can only reduce environment calls.
pub fn classify_with_threshold(p_environment: f64, threshold: f64) -> UseCase {
    if p_environment > threshold {
        UseCase::Environment
    } else {
        UseCase::Cockpit
    }
}

/// Two-stage predictor: classify the use case, select the matching fusion
/// weights, regress the direction, resolve the nearest visible target.
pub struct TwoStagePredictor<'a> {
    pub case_model: &'a CaseModel,
    pub cockpit_fusion: Option<&'a FusionModel>,
    pub environment_fusion: Option<&'a FusionModel>,
    pub cockpit_scene: &'a Scene,
    pub environment_scene: &'a Scene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutcome {
    pub use_case: UseCase,
    pub p_environment: f64,
    pub direction: Vec3,
    /// Resolved target id; absent for environment events without a pose.
    pub target_id: Option<String>,
    /// Whether the direction hits the resolved target's angular extent.
    pub hit: Option<bool>,
}

impl TwoStagePredictor<'_> {
    pub fn predict(&self, event: &ReferencingEvent) -> Result<TwoStageOutcome, ModelError> {
        let case = predict_case(self.case_model, event)?;
        let (fusion, scene_ref, pose_id) = match case.use_case {
            UseCase::Cockpit => (
                self.cockpit_fusion
                    .ok_or_else(|| ModelError::Store("no cockpit fusion weights loaded".into()))?,
                self.cockpit_scene,
                None,
            ),
            UseCase::Environment => (
                self.environment_fusion.ok_or_else(|| {
                    ModelError::Store("no environment fusion weights loaded".into())
                })?,
                self.environment_scene,
                event.pose_id,
            ),
        };
        let direction = predict_direction(fusion, event)?;
        let needs_pose = case.use_case == UseCase::Environment && pose_id.is_none();
        let (target_id, hit) = if needs_pose {
            (None, None)
        } else {
            let id = scene::resolve_nearest(direction, scene_ref, pose_id)?;
            let target = scene_ref.target(&id)?;
            let pose = match pose_id {
                Some(pid) => Some(*scene_ref.pose(pid)?),
                None => None,
            };
            let extent = scene::angular_extent(target, pose.as_ref())?;
            let hit = scene::hit_test(direction, &extent)?;
            (Some(id), Some(hit))
        };
        Ok(TwoStageOutcome {
            use_case: case.use_case,
            p_environment: case.p_environment,
            direction,
            target_id,
            hit,
        })
    }
}
