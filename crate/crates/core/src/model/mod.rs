//! Branch assembly, classifier head, augmentation, synthetic data and training.

pub mod augment;
pub mod branch;
pub mod config;
pub mod diagnostics;
pub mod head;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use augment::augment;
pub use branch::{BranchCache, GeometricBranch};
pub use config::{
    AugmentationConfig, BranchConfig, DataConfig, ExperimentConfig, FusionConfig, FusionMode, OptimizerConfig, Preset,
};
pub use diagnostics::layer_gradient_errors;
pub use head::{prior_bias, ClassifierHead};
pub use metrics::{argmax, MetricsReport};
pub use pipeline::{capture_dirs, fusion_samples, hha_clouds, load_captures};
pub use synth::{synth_capture, synth_dataset, SynthDataset, SynthSpec, SynthVariant};
pub use train::{
    evaluate, train, EpochRecord, FusionModel, FusionSample, GeometricModel, Split, TrainOptions, TrainOutcome, Trainable,
};
