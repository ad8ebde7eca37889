use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::augment;
use super::branch::GeometricBranch;
use super::config::{AugmentationConfig, BranchConfig, FusionConfig, FusionMode, OptimizerConfig};
use super::head::ClassifierHead;
use super::metrics::{argmax, MetricsReport};
use super::rng::{stream_rng, Stream};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::fusion::{late_fuse, FusionLayout, FusionStage};
use crate::nn::{
    class_weights_from_counts, global_average_pool, weighted_cross_entropy, Checkpoint, ClassWeights, Grads, ParamStore, Sgd,
    Tensor,
};

/// A model trained by per-sample forward/backward passes.
pub trait Trainable: Sync {
    type Sample: Sync;

    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn classes(&self) -> usize;
    fn label(&self, sample: &Self::Sample) -> Result<usize>;

    /// Logits for one sample; `train` enables augmentation and dropout.
    fn logits(&self, sample: &Self::Sample, train: bool, rng: &mut dyn rand::RngCore) -> Result<(Vec<f64>, Backprop)>;

    /// Accumulates the parameter gradient of `grad_logits` into `grads`.
    fn backward(&self, backprop: &Backprop, grad_logits: &[f64], grads: &mut Grads) -> Result<()>;
}

/// Opaque per-sample forward state.
pub struct Backprop(Box<dyn std::any::Any + Send>);

impl Backprop {
    fn new<T: Send + 'static>(v: T) -> Self {
        Self(Box::new(v))
    }

    fn get<T: 'static>(&self) -> &T {
        self.0.downcast_ref().expect("forward state of the matching model")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub mean_accuracy: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.17e}\t{:.17e}",
            self.epoch, self.split, self.loss, self.mean_accuracy
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metrics: MetricsReport,
    pub best_checkpoint: Checkpoint,
    pub class_weights: ClassWeights,
}

impl TrainOutcome {
    pub fn metrics_text(&self) -> String {
        let mut s = String::from("epoch\tsplit\tloss\tmean_acc\n");
        for r in &self.history {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))
}

struct SampleResult {
    loss: f64,
    prediction: usize,
    label: usize,
    grads: Option<Grads>,
}

fn run_sample<M: Trainable>(
    model: &M,
    sample: &M::Sample,
    weights: &ClassWeights,
    train: bool,
    mut rng: impl rand::RngCore,
) -> Result<SampleResult> {
    let label = model.label(sample)?;
    let (logits, backprop) = model.logits(sample, train, &mut rng)?;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let (loss, grad) = weighted_cross_entropy(&logits, label, weights)?;
    let grads = if train {
        let mut g = model.store().zero_grads();
        model.backward(&backprop, &grad, &mut g)?;
        Some(g)
    } else {
        None
    };
    Ok(SampleResult {
        loss,
        prediction: argmax(&logits),
        label,
        grads,
    })
}

/// Loss and metrics over a dataset with dropout and augmentation off.
pub fn evaluate<M: Trainable>(
    model: &M,
    samples: &[M::Sample],
    weights: &ClassWeights,
    workers: usize,
) -> Result<(f64, MetricsReport)> {
    let pool = thread_pool(workers)?;
    let results: Vec<SampleResult> = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_sample(model, s, weights, false, stream_rng(0, Stream::Eval, i as u64, 0)))
            .collect::<Result<_>>()
    })?;
    Ok(summarize(model.classes(), &results))
}

fn summarize(classes: usize, results: &[SampleResult]) -> (f64, MetricsReport) {
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len().max(1) as f64;
    let metrics = MetricsReport::from_predictions(classes, results.iter().map(|r| (r.label, r.prediction)));
    (loss, metrics)
}

pub fn label_counts<M: Trainable>(model: &M, samples: &[M::Sample]) -> Result<Vec<usize>> {
    let mut counts = vec![0; model.classes()];
    for s in samples {
        let l = model.label(s)?;
        if l >= counts.len() {
            return Err(Error::InvalidDataset(format!("label {l} outside {} classes", counts.len())));
        }
        counts[l] += 1;
    }
    Ok(counts)
}

/// Mini-batch SGD on the batch-averaged weighted cross-entropy.
///
/// Per-sample gradients are computed concurrently and summed in sample order,
/// so results do not depend on `workers`. The returned checkpoint is the one
/// with the best test (or, without a test split, train) mean class accuracy.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &[M::Sample],
    test_set: &[M::Sample],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    opts.optimizer.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    let class_weights = class_weights_from_counts(&label_counts(model, train_set)?)?;
    let pool = thread_pool(opts.workers)?;
    let o = &opts.optimizer;
    let mut sgd = Sgd::new(model.store(), o.learning_rate, o.momentum, o.weight_decay);
    let mut history = Vec::new();
    let mut best: Option<(usize, MetricsReport, Checkpoint)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=o.epochs {
        order.shuffle(&mut stream_rng(opts.seed, Stream::Shuffle, epoch as u64, 0));
        let mut epoch_results = Vec::with_capacity(train_set.len());
        for batch in order.chunks(o.batch_size) {
            let m: &M = model;
            let results: Vec<SampleResult> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let rng = stream_rng(opts.seed, Stream::Sample, i as u64, epoch as u64);
                        run_sample(m, &train_set[i], &class_weights, true, rng)
                    })
                    .collect::<Result<_>>()
            })?;
            let mut total = model.store().zero_grads();
            for r in &results {
                total.add(r.grads.as_ref().expect("training pass keeps gradients"));
            }
            total.scale(1.0 / batch.len() as f64);
            let store = model.store_mut();
            store.clear_grads();
            store.accumulate(&total);
            sgd.step(store);
            epoch_results.extend(
                batch
                    .iter()
                    .zip(results)
                    .map(|(&i, r)| (i, SampleResult { grads: None, ..r })),
            );
        }
        // Summed in dataset order so the epoch loss does not depend on the shuffle.
        epoch_results.sort_by_key(|(i, _)| *i);
        let epoch_results: Vec<SampleResult> = epoch_results.into_iter().map(|(_, r)| r).collect();
        let (loss, metrics) = summarize(model.classes(), &epoch_results);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            split: Split::Train,
            loss,
            mean_accuracy: metrics.mean_accuracy,
        };
        on_epoch(&record);
        history.push(record);
        let selection = if test_set.is_empty() {
            metrics
        } else {
            let (loss, metrics) = evaluate(model, test_set, &class_weights, opts.workers)?;
            let record = EpochRecord {
                epoch,
                split: Split::Test,
                loss,
                mean_accuracy: metrics.mean_accuracy,
            };
            on_epoch(&record);
            history.push(record);
            metrics
        };
        if best
            .as_ref()
            .is_none_or(|(_, m, _)| selection.mean_accuracy > m.mean_accuracy)
        {
            best = Some((epoch, selection, Checkpoint::from_store(model.store())));
        }
    }
    let (best_epoch, best_metrics, best_checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_metrics,
        best_checkpoint,
        class_weights,
    })
}

/// Geometric branch followed by a classifier head, on HHA point clouds.
#[derive(Debug, Clone)]
pub struct GeometricModel {
    pub store: ParamStore,
    pub branch: GeometricBranch,
    pub head: ClassifierHead,
    pub augmentation: AugmentationConfig,
}

impl GeometricModel {
    pub fn new(config: &BranchConfig, classes: usize, dropout: f64, augmentation: AugmentationConfig, seed: u64) -> Result<Self> {
        augmentation.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0, 0);
        let mut store = ParamStore::new();
        let branch = GeometricBranch::new(&mut store, "branch", config, &mut rng)?;
        let head = ClassifierHead::new(&mut store, "head", branch.output_dim(), classes, dropout, &mut rng)?;
        Ok(Self {
            store,
            branch,
            head,
            augmentation,
        })
    }

    /// Final branch nodes for `cloud`, without augmentation.
    pub fn features(&self, cloud: &PointCloud) -> Result<PointCloud> {
        Ok(self.branch.forward(&self.store, cloud)?.0)
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let out = self.features(cloud)?;
        let mut rng = stream_rng(0, Stream::Eval, 0, 0);
        let (logits, _) = self.head.forward_one(&self.store, &out.features, false, &mut rng)?;
        Ok(argmax(&logits))
    }
}

struct GeometricState {
    branch: super::branch::BranchCache,
    head: super::head::HeadCache,
}

impl Trainable for GeometricModel {
    type Sample = PointCloud;

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn classes(&self) -> usize {
        self.head.classes
    }

    fn label(&self, sample: &PointCloud) -> Result<usize> {
        sample.label.ok_or_else(|| Error::InvalidDataset("unlabelled cloud".into()))
    }

    fn logits(&self, sample: &PointCloud, train: bool, rng: &mut dyn rand::RngCore) -> Result<(Vec<f64>, Backprop)> {
        let input = if train {
            augment(sample, &self.augmentation, rng)?
        } else {
            sample.clone()
        };
        let (out, branch) = self.branch.forward(&self.store, &input)?;
        let (logits, head) = self.head.forward_one(&self.store, &out.features, train, rng)?;
        Ok((logits, Backprop::new(GeometricState { branch, head })))
    }

    fn backward(&self, backprop: &Backprop, grad_logits: &[f64], grads: &mut Grads) -> Result<()> {
        let state: &GeometricState = backprop.get();
        let g = Tensor::new(vec![1, grad_logits.len()], grad_logits.to_vec())?;
        let g = self.head.backward(&self.store, grads, &state.head, &g)?;
        self.branch.backward(&self.store, grads, &state.branch, &g)?;
        Ok(())
    }
}

/// Inputs of the fusion head: final geometric nodes and lifted texture points.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSample {
    pub geometric: PointCloud,
    pub texture: PointCloud,
    pub label: usize,
}

/// Fusion stage (or a baseline) followed by a classifier head. The branches
/// producing its inputs stay fixed.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub store: ParamStore,
    pub mode: FusionMode,
    pub stage: Option<FusionStage>,
    pub head: ClassifierHead,
    pub geometric_dim: usize,
    pub texture_dim: usize,
    pub layout: FusionLayout,
}

impl FusionModel {
    pub fn new(config: &FusionConfig, geometric_dim: usize, texture_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 1, 0);
        let mut store = ParamStore::new();
        let (stage, head_dim) = match config.mode {
            FusionMode::Geometric => {
                let mut stage = FusionStage::new(
                    &mut store,
                    "fusion",
                    geometric_dim,
                    texture_dim,
                    config.fused_dim,
                    config.radius,
                    config.layout,
                    &mut rng,
                )?;
                stage.grouping = config.grouping;
                let d = stage.output_dim();
                (Some(stage), d)
            }
            FusionMode::Late => (None, geometric_dim + texture_dim),
            FusionMode::TextureOnly => (None, texture_dim),
        };
        let head = ClassifierHead::new(&mut store, "head", head_dim, classes, config.optimizer.dropout, &mut rng)?;
        Ok(Self {
            store,
            mode: config.mode,
            stage,
            head,
            geometric_dim,
            texture_dim,
            layout: config.layout,
        })
    }

    /// Node features entering the classifier head.
    fn head_input(&self, sample: &FusionSample) -> Result<(Tensor, Option<crate::fusion::FusionCache>)> {
        match (&self.stage, self.mode) {
            (Some(stage), _) => {
                let (fused, cache) = stage.forward(&self.store, &sample.geometric, &sample.texture)?;
                Ok((fused.features, Some(cache)))
            }
            (None, mode) => {
                let pool = |c: &PointCloud| global_average_pool(&c.features, &vec![0; c.len()], 1);
                let tex = pool(&sample.texture)?;
                let geo = match mode {
                    FusionMode::TextureOnly => Tensor::zeros(&[1, 0]),
                    _ => pool(&sample.geometric)?,
                };
                Ok((late_fuse(&geo, &tex, self.layout)?, None))
            }
        }
    }
}

struct FusionState {
    fusion: Option<crate::fusion::FusionCache>,
    head: super::head::HeadCache,
}

impl Trainable for FusionModel {
    type Sample = FusionSample;

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn classes(&self) -> usize {
        self.head.classes
    }

    fn label(&self, sample: &FusionSample) -> Result<usize> {
        Ok(sample.label)
    }

    fn logits(&self, sample: &FusionSample, train: bool, rng: &mut dyn rand::RngCore) -> Result<(Vec<f64>, Backprop)> {
        let (x, fusion) = self.head_input(sample)?;
        let (logits, head) = self.head.forward_one(&self.store, &x, train, rng)?;
        Ok((logits, Backprop::new(FusionState { fusion, head })))
    }

    fn backward(&self, backprop: &Backprop, grad_logits: &[f64], grads: &mut Grads) -> Result<()> {
        let state: &FusionState = backprop.get();
        let g = Tensor::new(vec![1, grad_logits.len()], grad_logits.to_vec())?;
        let g = self.head.backward(&self.store, grads, &state.head, &g)?;
        if let (Some(stage), Some(cache)) = (&self.stage, &state.fusion) {
            stage.backward(&self.store, grads, cache, &g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ExperimentConfig;
    use crate::nn::params::uniform_tensor;
    use crate::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_branch() -> BranchConfig {
        BranchConfig {
            widths: vec![4, 4],
            radii: vec![0.3],
            k: 4,
            filter_hidden: 4,
            ..BranchConfig::desk()
        }
    }

    /// Clouds whose features shift with the label.
    fn labelled_clouds(seed: u64, per_class: usize, classes: usize) -> Vec<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..per_class * classes)
            .map(|i| {
                let label = i % classes;
                let pos: Vec<Point3> = (0..40).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
                let mut f = uniform_tensor(&mut rng, &[40, 3], 0.25);
                f.data_mut().iter_mut().for_each(|v| *v += label as f64);
                PointCloud::new(pos, f).unwrap().with_label(label)
            })
            .collect()
    }

    fn options(lr: f64, epochs: usize, workers: usize) -> TrainOptions {
        TrainOptions {
            optimizer: OptimizerConfig {
                learning_rate: lr,
                epochs,
                batch_size: 2,
                dropout: 0.0,
                ..ExperimentConfig::preset(crate::model::Preset::Desk).optimizer
            },
            seed: 3,
            workers,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = labelled_clouds(0, 3, 2);
        let mut model = GeometricModel::new(&tiny_branch(), 2, 0.0, AugmentationConfig::disabled(), 1).unwrap();
        let before = model.store.clone();
        let out = train(&mut model, &data, &[], &options(0.0, 3, 1), |_| {}).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(model.store.iter()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
        let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
    }

    #[test]
    fn one_sample_per_class_is_memorised() {
        let data = labelled_clouds(1, 1, 2);
        let mut model = GeometricModel::new(&tiny_branch(), 2, 0.0, AugmentationConfig::disabled(), 2).unwrap();
        let out = train(&mut model, &data, &[], &options(0.05, 40, 1), |_| {}).unwrap();
        let last = out.history.last().unwrap();
        assert_eq!(last.mean_accuracy, 1.0, "{}", out.metrics_text());
        assert!(last.loss < out.history[0].loss);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let data = labelled_clouds(2, 4, 3);
        let test = labelled_clouds(3, 2, 3);
        let run = |workers| {
            let mut model = GeometricModel::new(&tiny_branch(), 3, 0.2, AugmentationConfig::default(), 4).unwrap();
            let out = train(&mut model, &data, &test, &options(0.05, 3, workers), |_| {}).unwrap();
            (
                out.metrics_text(),
                out.best_checkpoint.to_bytes(),
                Checkpoint::from_store(&model.store).to_bytes(),
            )
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn absent_class_is_rejected() {
        let data: Vec<PointCloud> = labelled_clouds(4, 2, 2).into_iter().filter(|c| c.label == Some(0)).collect();
        let mut model = GeometricModel::new(&tiny_branch(), 2, 0.0, AugmentationConfig::disabled(), 0).unwrap();
        assert!(train(&mut model, &data, &[], &options(0.05, 1, 1), |_| {}).is_err());
    }
}
