use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionLayout;
use crate::gconv::{Aggregation, EuclideanPolicy};
use crate::graph::AttributeConfig;
use crate::io::hha::HHA_CHANNELS;
use crate::pooling::PoolingKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
}

/// Layout of the geometric branch: `widths.len()` graph layers with a pooling
/// step (of the matching radius) between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub radii: Vec<f64>,
    pub k: usize,
    pub filter_hidden: usize,
    pub attributes: AttributeConfig,
    pub aggregation: Aggregation,
    pub euclidean_policy: EuclideanPolicy,
    pub clamp: bool,
    pub pooling: PoolingKind,
    pub pool_aggregation: Aggregation,
    /// Per-cloud channel normalization between each graph layer and its activation.
    pub normalize: bool,
    pub post_activation: bool,
}

impl BranchConfig {
    pub fn paper() -> Self {
        Self {
            input_dim: HHA_CHANNELS,
            widths: vec![64, 128, 256, 512, 512],
            radii: vec![0.05, 0.08, 0.12, 0.24],
            k: 9,
            filter_hidden: 128,
            attributes: AttributeConfig::default(),
            aggregation: Aggregation::Average,
            euclidean_policy: EuclideanPolicy::Knn,
            clamp: true,
            pooling: PoolingKind::NearestVoxel,
            pool_aggregation: Aggregation::Average,
            normalize: true,
            post_activation: true,
        }
    }

    pub fn desk() -> Self {
        Self {
            widths: vec![8, 16, 16],
            radii: vec![0.25, 0.5],
            filter_hidden: 8,
            ..Self::paper()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.input_dim == 0 {
            return Err(Error::invalid("branch widths must be positive and non-empty"));
        }
        if self.radii.len() + 1 != self.widths.len() {
            return Err(Error::invalid(format!(
                "{} graph layers need {} pooling radii, got {}",
                self.widths.len(),
                self.widths.len() - 1,
                self.radii.len()
            )));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("pooling radii must be positive"));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("pooling radii must be strictly increasing"));
        }
        if self.k == 0 || self.filter_hidden == 0 {
            return Err(Error::invalid("k and the filter hidden width must be positive"));
        }
        if let EuclideanPolicy::Radius { r } = self.euclidean_policy {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid("neighbourhood radius must be positive"));
            }
        }
        self.attributes.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub rotation: bool,
    pub mirror_probability: f64,
    pub drop_probability: f64,
    pub crop: bool,
    pub crop_range: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation: true,
            mirror_probability: 0.5,
            drop_probability: 0.2,
            crop: true,
            crop_range: [0.875, 1.0],
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.mirror_probability) || !unit(self.drop_probability) {
            return Err(Error::invalid("augmentation probabilities must lie in [0, 1]"));
        }
        let [lo, hi] = self.crop_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid("crop factor range must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 32,
            dropout: 0.2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::invalid("momentum must lie in [0, 1) and weight decay be non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Spatial grouping of projected features.
    #[default]
    Geometric,
    /// Concatenation of globally pooled branch features.
    Late,
    /// Texture features alone.
    TextureOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub fused_dim: usize,
    pub radius: f64,
    pub layout: FusionLayout,
    pub grouping: PoolingKind,
    pub optimizer: OptimizerConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl FusionConfig {
    pub fn paper() -> Self {
        Self {
            mode: FusionMode::Geometric,
            fused_dim: 512,
            radius: 0.24,
            layout: FusionLayout::GeometricFirst,
            grouping: PoolingKind::NearestVoxel,
            optimizer: OptimizerConfig {
                epochs: 20,
                dropout: 0.5,
                ..OptimizerConfig::default()
            },
        }
    }

    pub fn desk() -> Self {
        Self {
            fused_dim: 16,
            radius: 0.5,
            optimizer: OptimizerConfig {
                learning_rate: 0.02,
                epochs: 30,
                batch_size: 16,
                dropout: 0.5,
                ..OptimizerConfig::default()
            },
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fused_dim == 0 || !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("fused width and fusion radius must be positive"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Depth decimation stride for point clouds built from captures.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            stride: 8,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub branch: BranchConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub fusion: FusionConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self {
                preset,
                seed: 0,
                branch: BranchConfig::paper(),
                optimizer: OptimizerConfig::default(),
                augmentation: AugmentationConfig::default(),
                fusion: FusionConfig::paper(),
                data: DataConfig::default(),
            },
            Preset::Desk => Self {
                preset,
                seed: 0,
                branch: BranchConfig::desk(),
                optimizer: OptimizerConfig {
                    learning_rate: 0.05,
                    epochs: 50,
                    batch_size: 16,
                    ..OptimizerConfig::default()
                },
                augmentation: AugmentationConfig::default(),
                fusion: FusionConfig::desk(),
                data: DataConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.branch.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        self.fusion.validate()?;
        if self.data.stride == 0 {
            return Err(Error::invalid("decimation stride must be positive"));
        }
        Ok(())
    }

    /// Reads a TOML file. Missing tables fall back to the preset named in the
    /// file (or the desk preset).
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::format(format!("config: {e}")))?;
        let preset = match value.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).map_err(|e| Error::format(format!("config preset: {e}")))?,
            None => Preset::default(),
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::format(e.to_string()))?;
        merge_tables(&mut merged, value);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
