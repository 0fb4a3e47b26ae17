use std::path::Path;

use illum_core::aggregate::{HyperGrid, PoolingConfig};
use illum_core::cnn::{CnnConfig, TrainConfig};
use illum_core::datagen::{RelightSetConfig, SceneSetConfig};
use illum_core::pipeline::{HistogramConfig, PipelineConfig};
use illum_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything tunable from a `--config` file. Sections and fields that are
/// left out keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenes: SceneSetConfig,
    pub relight: RelightSetConfig,
    pub network: CnnConfig,
    pub training: TrainConfig,
    pub pooling: PoolingConfig,
    pub grid: HyperGrid,
    pub pipeline: PipelineConfig,
    pub histogram: HistogramConfig,
}

impl FileConfig {
    /// TOML for `.toml` files, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.scenes.seed = s;
            self.relight.seed = s;
            self.relight.relight.seed = s;
            self.training.seed = s;
        }
        self
    }
}
