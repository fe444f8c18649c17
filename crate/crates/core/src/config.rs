//! Pipeline run configuration.
//!
//! A JSON config file is the primary interface; every field has a default so
//! partial files work, and the CLI can override individual values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::block_model::CovarianceModel;
use crate::error::{Error, Result};

/// How the per-location Gaussians are weighted in the bucket mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Equal weights 1/N over the sampled locations.
    Equal,
    /// Inverse-distance-squared to the recorded position, normalized.
    Idw2,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(WeightMode::Equal),
            "idw2" => Ok(WeightMode::Idw2),
            other => Err(Error::Config(format!(
                "unknown weight mode `{other}` (expected `equal` or `idw2`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// XY radius for the block neighbor search, meters.
    pub r_xy_neighbor: f64,
    /// XY radius for simulated dig locations, meters.
    pub r_xy_sampling: f64,
    /// Spacing of the sampling grid, meters.
    pub grid_interval: f64,
    /// Bucket volume, m^3.
    pub bucket_volume: f64,
    pub weight_mode: WeightMode,
    pub kernel: CovarianceModel,
    /// Dump aggregation window in seconds; `None` covers the whole replay.
    pub window_seconds: Option<f64>,
    /// Dig event ids for which per-bucket pdf/cdf plot data is emitted.
    pub plot_dig_ids: Vec<String>,
    pub seed: u64,
    /// Worker threads for the batch stages; 0 uses all available cores.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r_xy_neighbor: 12.0,
            r_xy_sampling: 12.0,
            grid_interval: 2.0,
            bucket_volume: 30.0,
            weight_mode: WeightMode::Equal,
            kernel: CovarianceModel::default(),
            window_seconds: None,
            plot_dig_ids: Vec::new(),
            seed: 42,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_xy_neighbor", self.r_xy_neighbor),
            ("r_xy_sampling", self.r_xy_sampling),
            ("grid_interval", self.grid_interval),
            ("bucket_volume", self.bucket_volume),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if let Some(w) = self.window_seconds {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Config(format!(
                    "window_seconds must be strictly positive, got {w}"
                )));
            }
        }
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}
