//! TOML configuration files: the pipeline config consumed by the CLI and
//! the metadata sidecars written into dataset/feature directories.
//!
//! Every section and key has a default, so a config file only needs the
//! keys it overrides. Key names are documented in `docs/FORMATS.md`.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::chansim::SimParams;
use crate::error::{Error, Result};
use crate::labels::BinEdges;
use crate::nn::adam::AdamParams;
use crate::ofdm::RadioConfig;
use crate::radar::CropConfig;
use crate::train::{Precision, TrainSettings};

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub radio: RadioConfig,
    pub crop: CropConfig,
    pub sim: SimParams,
    pub bins: BinEdges,
    pub train: TrainSettings,
    pub preprocess: PreprocessSettings,
}

/// Clutter-removal settings for the preprocessing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSettings {
    /// Cumulative energy fraction retained in the clutter basis.
    pub energy_fraction: f64,
    /// Optional hard cap on the basis rank.
    pub max_rank: Option<usize>,
    /// At most this many calibration snapshots are used per polarization.
    pub max_calibration_snapshots: usize,
    /// Calibration day override; the default picks the calmest prior day.
    pub calibration_day: Option<i64>,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        Self {
            energy_fraction: 0.99,
            max_rank: None,
            max_calibration_snapshots: 32,
            calibration_day: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.bins.validate()?;
        self.train.validate()?;
        if !(self.preprocess.energy_fraction > 0.0 && self.preprocess.energy_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "preprocess.energy_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The reduced desk profile: 256x256 frames cropped to 128x32 bins.
    pub fn desk() -> Self {
        PipelineConfig {
            radio: RadioConfig::reduced(),
            crop: CropConfig {
                max_range_m: 450.0,
                max_abs_speed_mps: 10.0,
                range_bins: Some(128),
                speed_bins: Some(32),
            },
            ..Default::default()
        }
    }
}

/// Sidecar written into a dataset directory by `simulate`, so downstream
/// stages process the data with the radio profile that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub radio: RadioConfig,
    pub sim: SimParams,
    pub seed: u64,
    /// Path of the shared TX reference tensor, relative to the directory.
    pub tx_path: String,
}

pub const DATASET_META_FILE: &str = "dataset.toml";

impl DatasetMeta {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(DATASET_META_FILE);
        let text = toml::to_string(self)
            .map_err(|e| Error::Other(format!("serialize dataset metadata: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Sidecar written into a features directory by `preprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesMeta {
    pub radio: RadioConfig,
    /// Crop extents of every feature tensor: (range bins, speed bins).
    pub range_bins: usize,
    pub speed_bins: usize,
    pub calibration_day: i64,
    pub calibration_snapshots: usize,
    pub clutter_rank_copol: usize,
    pub clutter_rank_crosspol: usize,
    pub energy_fraction: f64,
}

pub const FEATURES_META_FILE: &str = "features.toml";

impl FeaturesMeta {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FEATURES_META_FILE);
        let text = toml::to_string(self)
            .map_err(|e| Error::Other(format!("serialize features metadata: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FEATURES_META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 40,
            adam: AdamParams::default(),
            batch_size: 100,
            rain_per_batch: 50,
            train_fraction: 0.8,
            precision: Precision::F64,
        }
    }
}
