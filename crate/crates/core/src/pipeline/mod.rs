//! End-to-end training and evaluation runs driven by one TOML config.

mod model;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use model::{Label, ModelOutput, One2Many, Prepared, Sample};
pub use train::{evaluate, load_samples, run_eval, run_train, EpochLog, EvalOutcome, TrainOutcome, CHECKPOINT_FILE, CONFIG_SNAPSHOT, EVAL_DIR, PREDICTIONS_CSV, SPLIT_FILE, TRAIN_LOG};

use crate::augment::{AugmentConfig, AugmentToggles};
use crate::backbone::{AuxConfig, BackboneConfig};
use crate::data::{DataError, DEFAULT_NUM_CLASSES};
use crate::error::ModelError;
use crate::geometry::View;
use crate::heads::{DecodeConfig, GarHeadConfig, TgalHeadConfig};
use crate::metrics::MetricsError;
use crate::numerics::{NumericsError, Real};
use crate::par::Parallelism;
use crate::statt::StattConfig;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } => 3,
            PipelineError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path) -> impl Fn(std::io::Error) -> Self + '_ {
        move |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => PipelineError::Config(m),
            ModelError::Shape(m) => PipelineError::Data(m),
            ModelError::Numerics(n) => n.into(),
        }
    }
}

impl From<NumericsError> for PipelineError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::Io(..) | NumericsError::Format(_) => PipelineError::Data(e.to_string()),
            _ => PipelineError::Numeric(e.to_string()),
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<crate::augment::AugmentError> for PipelineError {
    fn from(e: crate::augment::AugmentError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gar,
    Tgal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modeling {
    #[default]
    Statt,
    /// No group modeling between aggregation and head.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Corpus directory (manifest plus rounds).
    pub corpus: PathBuf,
    /// Evaluate on this corpus instead of a held-out split of `corpus`.
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Pad length; 400 for GAR and 800 for TGAL when unset.
    #[serde(default)]
    pub pad_frames: Option<usize>,
}

fn default_split_ratio() -> f64 {
    0.7
}

fn default_num_classes() -> usize {
    DEFAULT_NUM_CLASSES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: BackboneConfig,
    /// Backbone weight file, or "random".
    pub pretrained: String,
    /// Backpropagate into the backbone; when off its features are cached.
    pub train_backbone: bool,
    /// Feed a 2D orthographic view instead of 3D joints.
    pub input_view: Option<View>,
    pub aux: AuxConfig,
    pub modeling: Modeling,
    pub statt: StattConfig,
    pub gar: GarHeadConfig,
    pub tgal: TgalHeadConfig,
    pub decode: DecodeConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            pretrained: "random".into(),
            train_backbone: false,
            input_view: None,
            aux: AuxConfig::default(),
            modeling: Modeling::Statt,
            statt: StattConfig::default(),
            gar: GarHeadConfig::default(),
            tgal: TgalHeadConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn pretrained_path(&self) -> Option<&Path> {
        (self.pretrained != "random").then(|| Path::new(&self.pretrained))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: Real,
    pub momentum: Real,
    pub weight_decay: Real,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Court flip.
    pub spatial: bool,
    /// Frame masking and extraction.
    pub temporal: bool,
    pub flip_prob: f64,
    pub mask_ratio: f64,
    pub keep_fraction: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            spatial: false,
            temporal: false,
            flip_prob: a.flip_prob,
            mask_ratio: a.mask_ratio,
            keep_fraction: a.keep_fraction,
        }
    }
}

impl AugmentSection {
    pub fn config(&self, seed: u64) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.flip_prob,
            mask_ratio: self.mask_ratio,
            keep_fraction: self.keep_fraction,
            seed,
        }
    }

    pub fn toggles(&self) -> AugmentToggles {
        AugmentToggles {
            spatial: self.spatial,
            temporal: self.temporal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// 64 for GAR and 8 for TGAL when unset.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub parallelism: Parallelism,
    /// Held-out evaluation every this many epochs (0: only at the end).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop once the held-out score (GAR mAcc or TGAL mAP@0.5, percent)
    /// reaches this value.
    #[serde(default)]
    pub stop_at: Option<Real>,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub augment: AugmentSection,
}

fn default_epochs() -> usize {
    30
}

fn default_eval_every() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn batch(&self) -> usize {
        self.batch_size.unwrap_or(match self.task {
            Task::Gar => 64,
            Task::Tgal => 8,
        })
    }

    pub fn pad_frames(&self) -> usize {
        self.data.pad_frames.unwrap_or(match self.task {
            Task::Gar => 400,
            Task::Tgal => 800,
        })
    }

    /// Schema-level checks that need no file access.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.batch() == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.data.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if !(self.data.split_ratio > 0.0 && self.data.split_ratio < 1.0) && self.data.test_corpus.is_none() {
            return bad(format!("split_ratio {} not in (0, 1)", self.data.split_ratio));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.momentum >= 0.0 && self.optimizer.weight_decay >= 0.0) {
            return bad("optimizer needs lr > 0, momentum >= 0, weight_decay >= 0".into());
        }
        self.model.backbone.validate()?;
        self.model.statt.validate()?;
        self.augment.config(self.seed).validate()?;
        if self.pad_frames() < self.model.backbone.window_len {
            return bad(format!(
                "pad_frames {} shorter than the backbone window {}",
                self.pad_frames(),
                self.model.backbone.window_len
            ));
        }
        Ok(())
    }

    /// Checks that every referenced path exists.
    pub fn check_paths(&self) -> Result<(), PipelineError> {
        let mut paths = vec![self.data.corpus.as_path()];
        paths.extend(self.data.test_corpus.as_deref());
        paths.extend(self.model.pretrained_path());
        for p in paths {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Applies a `dotted.key=value` override; the value is parsed as TOML
    /// and falls back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self, PipelineError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("override {assignment:?} is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut doc = toml::Value::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut node = &mut doc;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| PipelineError::Config(format!("{key}: {part} is not inside a table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let text = toml::to_string(&doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        Self::from_toml(&text).map_err(|e| PipelineError::Config(format!("override {key}: {e}")))
    }
}

#[cfg(test)]
mod tests;
