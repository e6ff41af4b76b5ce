//! Run configuration: typed TOML sections per stage, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{Budget, LayerCostStats};
use crate::error::{Error, Result};
use crate::indicator::{validate_bits, InitScheme};
use crate::model::ModelKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub indicators: IndicatorSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub flags: FlagsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// mlp | cnn | contrast
    pub model: String,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::bits")]
    pub bits: Vec<u32>,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// synth | idx
    pub kind: String,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::train_samples")]
    pub train_samples: usize,
    #[serde(default = "defaults::val_samples")]
    pub val_samples: usize,
    #[serde(default = "defaults::input_shape")]
    pub input_shape: Vec<usize>,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_labels: Option<PathBuf>,
}

/// Budgets as absolute integers or as uniform-bit-equivalent levels, e.g.
/// `bitops_level = 3.0` means the BitOps of running every layer at 3W3A.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitops: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitops_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_level: Option<f64>,
}

impl BudgetSection {
    pub fn is_empty(&self) -> bool {
        self.bitops.is_none() && self.bitops_level.is_none() && self.size_bits.is_none() && self.size_level.is_none()
    }

    /// Turn levels into absolute limits using the model's cost stats.
    pub fn resolve(&self, stats: &[LayerCostStats]) -> Result<Budget> {
        let total_macs: u64 = stats.iter().map(|s| s.macs).sum();
        let total_params: u64 = stats.iter().map(|s| s.params).sum();
        let bitops = match (self.bitops, self.bitops_level) {
            (Some(abs), _) => Some(abs),
            (None, Some(level)) => Some((level * level * total_macs as f64).round() as u64),
            (None, None) => None,
        };
        let size = match (self.size_bits, self.size_level) {
            (Some(abs), _) => Some(abs),
            (None, Some(level)) => Some((level * total_params as f64).round() as u64),
            (None, None) => None,
        };
        Budget::new(bitops, size).map_err(|_| Error::Config("budget needs at least one of bitops/bitops_level/size_bits/size_level".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorSection {
    #[serde(default = "defaults::indicator_steps")]
    pub steps: usize,
    #[serde(default = "defaults::indicator_lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::data_fraction")]
    pub data_fraction: f64,
    /// statistics | uniform
    #[serde(default = "defaults::init")]
    pub init: String,
}

impl Default for IndicatorSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are complete")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    #[serde(default = "defaults::finetune_steps")]
    pub steps: usize,
    #[serde(default = "defaults::finetune_lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Also fine-tune a full-precision copy for the accuracy-drop readout.
    #[serde(default = "defaults::fp_baseline")]
    pub fp_baseline: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are complete")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsSection {
    /// None applies the model's convention (on for cnn, off otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exempt_first_last: Option<bool>,
    #[serde(default)]
    pub reversed: bool,
    /// Scale-gradient normalizer 1/sqrt(N*max_b); exposed so it can be
    /// switched off.
    #[serde(default = "defaults::grad_scale")]
    pub grad_scale: bool,
}

impl Default for FlagsSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults are complete")
    }
}

mod defaults {
    use std::path::PathBuf;

    pub fn seed() -> u64 {
        42
    }
    pub fn bits() -> Vec<u32> {
        vec![2, 3, 4, 8]
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("mpq-out")
    }
    pub fn classes() -> usize {
        10
    }
    pub fn train_samples() -> usize {
        2000
    }
    pub fn val_samples() -> usize {
        400
    }
    pub fn input_shape() -> Vec<usize> {
        vec![16]
    }
    pub fn noise() -> f64 {
        0.3
    }
    pub fn indicator_steps() -> usize {
        300
    }
    pub fn indicator_lr() -> f64 {
        0.01
    }
    pub fn finetune_steps() -> usize {
        600
    }
    pub fn finetune_lr() -> f64 {
        0.02
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        0.0
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn data_fraction() -> f64 {
        0.5
    }
    pub fn init() -> String {
        "statistics".into()
    }
    pub fn fp_baseline() -> bool {
        true
    }
    pub fn grad_scale() -> bool {
        true
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.run.model)
    }

    pub fn init_scheme(&self) -> Result<InitScheme> {
        InitScheme::parse(&self.indicators.init)
    }

    fn validate(&self) -> Result<Self> {
        self.model_kind()?;
        self.init_scheme()?;
        validate_bits(&self.run.bits)?;
        if !(self.run.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.run.alpha)));
        }
        match self.dataset.kind.as_str() {
            "synth" => {}
            "idx" => {
                if self.dataset.train_images.is_none() || self.dataset.train_labels.is_none() {
                    return Err(Error::Config("idx dataset needs train_images and train_labels".into()));
                }
                if self.dataset.val_images.is_some() != self.dataset.val_labels.is_some() {
                    return Err(Error::Config("idx dataset needs both val_images and val_labels, or neither".into()));
                }
            }
            other => return Err(Error::Config(format!("unknown dataset kind '{other}' (expected synth or idx)"))),
        }
        if !(0.0..=1.0).contains(&self.indicators.data_fraction) || self.indicators.data_fraction == 0.0 {
            return Err(Error::Config(format!("data_fraction {} not in (0, 1]", self.indicators.data_fraction)));
        }
        Ok(self.clone())
    }

    /// Digest of the canonical re-serialized config; identifies a run.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
