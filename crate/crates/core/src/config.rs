//! Single pipeline configuration file covering every stage, loaded from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkin::TimeSlotSpec;
use crate::error::{Error, Result};
use crate::extract::ExtractionConfig;
use crate::mf::MFConfig;
use crate::transr::TrainConfig;

/// Ingestion and discretization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub slot_hours: u32,
    /// k-means region count; ignored when `region_label_file` is set.
    pub region_k: u32,
    /// Optional `poi_id -> region_id` label table for precomputed regions.
    pub region_label_file: Option<PathBuf>,
    pub train_fraction: f64,
    /// Dataset-level timezone offset in hours applied before slotting.
    pub tz_offset: f64,
    pub kmeans_seed: u64,
    pub kmeans_max_iters: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            slot_hours: 8,
            region_k: 200,
            region_label_file: None,
            train_fraction: 0.8,
            tz_offset: 0.0,
            kmeans_seed: 42,
            kmeans_max_iters: 100,
        }
    }
}

/// Graph construction settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Compose category components into relation paths when present.
    pub use_category: bool,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    /// Drop POIs the user already visited in training.
    pub exclude_train_visited: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k_list: vec![1, 5, 10, 20], exclude_train_visited: true }
    }
}

/// The full pipeline configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub graph: GraphConfig,
    pub transr: TrainConfig,
    pub extraction: ExtractionConfig,
    pub mf: MFConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: Config =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        TimeSlotSpec::new(self.data.slot_hours)?;
        let frac = self.data.train_fraction;
        if !frac.is_finite() || frac <= 0.0 || frac >= 1.0 {
            return Err(Error::Config(format!("train_fraction must be in (0, 1), got {frac}")));
        }
        if self.data.region_label_file.is_none() && self.data.region_k == 0 {
            return Err(Error::Config("region_k must be at least 1".into()));
        }
        self.transr.validate()?;
        self.extraction.validate()?;
        self.mf.validate()?;
        if self.eval.k_list.is_empty() || self.eval.k_list.contains(&0) {
            return Err(Error::Config("eval k_list must contain positive cutoffs".into()));
        }
        Ok(())
    }

    /// Overrides every stage seed, for a CLI-level `--seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.kmeans_seed = seed;
        self.transr.seed = seed;
        self.mf.seed = seed;
        self
    }
}
