//! TOML configuration covering every stage.
//!
//! ```toml
//! [pipeline]
//! enable_correction = true
//! flow_provider = "lk"          # or "ground_truth" for simulator datasets
//! min_area = 20
//!
//! [flow]
//! window = 21
//!
//! [tracker]
//! gate = 0.8
//!
//! [localize]
//! margin = 25
//!
//! [correct]
//! size_lower = 0.5
//!
//! [scene]                       # read by `fruitcount simulate`
//! seed = 7
//! ```
//!
//! Every key is optional; missing keys take their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correct::CorrectionConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::ingest::DEFAULT_MIN_AREA;
use crate::localize::LocalizeConfig;
use crate::simulate::SceneConfig;
use crate::track::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    /// Pyramidal Lucas-Kanade on the frames.
    #[default]
    Lk,
    /// Exact flow from the simulator's ground truth.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub enable_correction: bool,
    pub flow_provider: FlowSource,
    /// Smallest mask component, in pixels, accepted as a detection.
    pub min_area: usize,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Recorded in reports; counting itself has no random steps.
    pub seed: Option<u64>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            enable_correction: true,
            flow_provider: FlowSource::Lk,
            min_area: DEFAULT_MIN_AREA,
            dataset: None,
            out: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub flow: FlowConfig,
    pub tracker: TrackerConfig,
    pub localize: LocalizeConfig,
    pub correct: CorrectionConfig,
    pub scene: SceneConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text)
    }

    /// Validates the counting stages (the scene is checked by the simulator).
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.tracker.validate()?;
        self.localize.validate()?;
        self.correct.validate()?;
        if self.pipeline.min_area == 0 {
            return Err(Error::Config("pipeline.min_area must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
