//! Experiment configuration: the TOML config file and data-source
//! resolution. No environment variables are read anywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{load_point_cloud, synth_scene, FeatureSchema, PointCloud, SceneSpec};
use crate::loss::LossWeights;
use crate::point::NetworkConfig;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per epoch; each step consumes one batch of blocks.
    #[serde(default = "default_one")]
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

fn default_one() -> usize {
    1
}

impl OptimConfig {
    /// `base_lr · decay^floor(epoch / decay_every)`, epochs counted from 0.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "epochs, batch_size and steps_per_epoch must be at least 1".into(),
            ));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where training and evaluation clouds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Synth,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub mode: DataMode,
    pub schema: FeatureSchema,
    /// Synth mode: scene spec path (relative paths resolve against the
    /// config file) and per-split scene counts.
    #[serde(default)]
    pub scene_spec: Option<PathBuf>,
    #[serde(default)]
    pub train_scenes: usize,
    #[serde(default)]
    pub eval_scenes: usize,
    #[serde(default)]
    pub scene_seed: u64,
    /// Files mode: interchange-format clouds per split.
    #[serde(default)]
    pub train_files: Vec<PathBuf>,
    #[serde(default)]
    pub eval_files: Vec<PathBuf>,
    #[serde(default)]
    pub num_classes: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Square block side in meters.
    pub size: f64,
    /// Extra gather margin around the block.
    pub padding: f64,
    /// Points per block; must equal the network's finest layer count.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

/// The full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub block: BlockConfig,
    pub run: RunConfig,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a config file; relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(spec) = &mut config.data.scene_spec {
            resolve(spec);
        }
        for f in config
            .data
            .train_files
            .iter_mut()
            .chain(config.data.eval_files.iter_mut())
        {
            resolve(f);
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.block.points != self.network.block_points() {
            return Err(Error::Config(format!(
                "block.points = {} but the network's finest layer has {}",
                self.block.points,
                self.network.block_points()
            )));
        }
        if self.block.size <= 0.0 || self.block.padding < 0.0 {
            return Err(Error::Config(format!(
                "block size {} / padding {} invalid",
                self.block.size, self.block.padding
            )));
        }
        if self.data.schema.dim() != self.network.input_dim {
            return Err(Error::Config(format!(
                "schema {} is {}-D but network.input_dim is {}",
                self.data.schema,
                self.data.schema.dim(),
                self.network.input_dim
            )));
        }
        match self.data.mode {
            DataMode::Synth => {
                if self.data.scene_spec.is_none() {
                    return Err(Error::Config("synth mode needs data.scene_spec".into()));
                }
                if self.data.train_scenes == 0 {
                    return Err(Error::Config("synth mode needs train_scenes >= 1".into()));
                }
            }
            DataMode::Files => {
                if self.data.train_files.is_empty() {
                    return Err(Error::Config("files mode needs data.train_files".into()));
                }
                if self.data.num_classes.is_none() {
                    return Err(Error::Config("files mode needs data.num_classes".into()));
                }
            }
        }
        Ok(())
    }
}

/// Which clouds to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" | "val" | "test" => Ok(Split::Eval),
            other => Err(Error::Validation(format!(
                "unknown split {other:?}; use train or eval"
            ))),
        }
    }
}

/// Offset separating train-split and eval-split scene seeds in synth mode.
const EVAL_SEED_OFFSET: u64 = 10_000;

/// Resolves a split to concrete labeled clouds. Synth scenes use seeds
/// `scene_seed + i` (train) and `scene_seed + 10000 + i` (eval), so splits
/// never share a cloud.
pub fn load_split(config: &TrainConfig, split: Split) -> Result<Vec<PointCloud>> {
    match config.data.mode {
        DataMode::Synth => {
            let spec_path = config
                .data
                .scene_spec
                .as_ref()
                .ok_or_else(|| Error::Config("synth mode needs data.scene_spec".into()))?;
            let spec = SceneSpec::load(spec_path)?;
            if spec.schema != config.data.schema {
                return Err(Error::Config(format!(
                    "scene spec schema {} does not match data schema {}",
                    spec.schema, config.data.schema
                )));
            }
            let (count, offset) = match split {
                Split::Train => (config.data.train_scenes, 0),
                Split::Eval => (config.data.eval_scenes, EVAL_SEED_OFFSET),
            };
            if count == 0 {
                return Err(Error::Config("the requested split has no scenes".into()));
            }
            (0..count)
                .map(|i| synth_scene(&spec, config.data.scene_seed + offset + i as u64))
                .collect()
        }
        DataMode::Files => {
            let files = match split {
                Split::Train => &config.data.train_files,
                Split::Eval => &config.data.eval_files,
            };
            if files.is_empty() {
                return Err(Error::Config("the requested split has no files".into()));
            }
            let num_classes = config
                .data
                .num_classes
                .ok_or_else(|| Error::Config("files mode needs data.num_classes".into()))?;
            files
                .iter()
                .map(|f| load_point_cloud(f, config.data.schema, num_classes))
                .collect()
        }
    }
}

/// Deterministic per-(epoch, step, block) seed derivation, SplitMix64-style.
pub fn derive_seed(base: u64, epoch: usize, step: usize, block: usize) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(1 + epoch as u64))
        .wrapping_add(0xbf58476d1ce4e5b9u64.wrapping_mul(1 + step as u64))
        .wrapping_add(0x94d049bb133111ebu64.wrapping_mul(1 + block as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
