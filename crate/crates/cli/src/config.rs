//! Run configuration. Every key is optional in the TOML file; the resolved
//! config (with all defaults filled in) is written into the run directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clvae_core::attribution::Policy;
use clvae_core::frame::DataFormat;
use serde::{Deserialize, Serialize};

use crate::report::TimeUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub clustering: ClusteringConfig,
    pub model: ModelConfig,
    pub scoring: ScoringConfig,
    pub threshold: ThresholdConfig,
    pub attribution: AttributionConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("run"),
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            clustering: ClusteringConfig::default(),
            model: ModelConfig::default(),
            scoring: ScoringConfig::default(),
            threshold: ThresholdConfig::default(),
            attribution: AttributionConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training series; cleaned, clustered and used to fit the models.
    pub train: PathBuf,
    /// Series to score. Defaults to the training series.
    pub test: Option<PathBuf>,
    /// Ground-truth labels aligned to the scored series.
    pub labels: Option<PathBuf>,
    pub format: DataFormat,
    pub timestamp_column: Option<String>,
    /// Feature columns to keep; all non-timestamp columns when unset.
    pub features: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::new(),
            test: None,
            labels: None,
            format: DataFormat::Csv,
            timestamp_column: Some("timestamp".into()),
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub iqr_multiplier: f64,
    pub window: usize,
    pub stride: usize,
    pub standardize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            iqr_multiplier: clvae_core::preprocess::DEFAULT_IQR_MULTIPLIER,
            window: clvae_core::preprocess::DEFAULT_WINDOW,
            stride: 1,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Fixed cluster count; skips k selection.
    pub k: Option<usize>,
    pub k_min: usize,
    /// Upper end of the scan, capped at the feature count.
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_min: 2,
            k_max: 8,
            seed: 0,
            restarts: 16,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub latent: usize,
    pub beta: f64,
    /// Seed for parameter initialization; cluster `j` uses `seed + j`.
    pub init_seed: u64,
    pub train: clvae_core::vae::TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 8,
            beta: 1.0,
            init_seed: 0,
            train: clvae_core::vae::TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub normalize: bool,
    /// Trailing moving-average length applied before thresholding; 1 = off.
    pub smoothing: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            normalize: true,
            smoothing: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub q: f64,
    pub init_quantile: f64,
    pub min_excess: usize,
    /// Sliding window; estimated from the scores when unset.
    pub window: Option<usize>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            q: clvae_core::pot::DEFAULT_RISK,
            init_quantile: clvae_core::pot::DEFAULT_INIT_QUANTILE,
            min_excess: clvae_core::pot::DEFAULT_MIN_EXCESS,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub enabled: bool,
    pub policy: Policy,
    pub repeats: usize,
    pub seed: u64,
    /// Inclusive timestamp ranges ranked separately, in addition to the
    /// whole scored series.
    pub periods: Vec<(i64, i64)>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            policy: Policy::Permute,
            repeats: clvae_core::attribution::DEFAULT_REPEATS,
            seed: 0,
            periods: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Meaning of integer timestamps when counting anomalies per year.
    pub time_unit: TimeUnit,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            time_unit: TimeUnit::Index,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid run config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.train.as_os_str().is_empty() {
            bail!("data.train is not set");
        }
        for p in [Some(&self.data.train), self.data.test.as_ref(), self.data.labels.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        if !(self.preprocess.iqr_multiplier > 0.0) {
            bail!("preprocess.iqr_multiplier must be positive");
        }
        if self.preprocess.window == 0 || self.preprocess.stride == 0 {
            bail!("preprocess.window and preprocess.stride must be positive");
        }
        if self.clustering.k == Some(0) {
            bail!("clustering.k must be at least 1");
        }
        if self.model.hidden == 0 || self.model.latent == 0 {
            bail!("model.hidden and model.latent must be positive");
        }
        self.model.train.validate()?;
        if self.scoring.smoothing == 0 {
            bail!("scoring.smoothing must be at least 1");
        }
        self.pot().validate()?;
        if self.attribution.repeats == 0 {
            bail!("attribution.repeats must be positive");
        }
        Ok(())
    }

    pub fn pot(&self) -> clvae_core::pot::PotOptions {
        clvae_core::pot::PotOptions {
            q: self.threshold.q,
            init_quantile: self.threshold.init_quantile,
            min_excess: self.threshold.min_excess,
        }
    }

    pub fn schema(&self) -> clvae_core::frame::CsvSchema {
        clvae_core::frame::CsvSchema {
            timestamp_column: self.data.timestamp_column.clone(),
            feature_columns: self.data.features.clone(),
        }
    }
}
