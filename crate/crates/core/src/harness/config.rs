//! Experiment configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticTopicSpec;
use crate::agent::PpoConfig;
use crate::corpus::DEFAULT_SEGMENTS;
use crate::embed::{Compressor, TsneConfig};
use crate::error::{Error, Result};
use crate::eval::MetricConfig;
use crate::retrieval::{DEFAULT_FEEDBACK_WEIGHT, DEFAULT_K};
use crate::seed::derive_seed;
use crate::state::DEFAULT_GRID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Iterations per episode.
    pub iterations: usize,
    /// Documents returned per iteration.
    pub k: usize,
    /// Irrelevant documents per relevant document in each collection.
    pub mix_ratio: f64,
    pub segments: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub compressor: Compressor,
    /// Rank visited documents again instead of removing them.
    pub allow_duplicates: bool,
    pub topics: usize,
    pub eval_seeds: usize,
    /// Also evaluate each topic's agent on the next topic's collection.
    pub heldout: bool,
    /// Weight of the feedback centroid in the relevance-feedback baseline.
    pub feedback_weight: f64,
    pub output_dir: PathBuf,
    pub synthetic: SyntheticTopicSpec,
    pub tsne: TsneConfig,
    pub ppo: PpoConfig,
    pub metrics: MetricConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            iterations: 10,
            k: DEFAULT_K,
            mix_ratio: 1.0,
            segments: DEFAULT_SEGMENTS,
            grid_rows: DEFAULT_GRID.0,
            grid_cols: DEFAULT_GRID.1,
            compressor: Compressor::Tsne,
            allow_duplicates: false,
            topics: 5,
            eval_seeds: 3,
            heldout: true,
            feedback_weight: DEFAULT_FEEDBACK_WEIGHT,
            output_dir: PathBuf::from("runs/default"),
            synthetic: SyntheticTopicSpec::default(),
            tsne: TsneConfig::default(),
            ppo: PpoConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.k == 0 {
            return Err(Error::Config("iterations and k must be at least 1".into()));
        }
        if !(self.mix_ratio >= 0.0 && self.mix_ratio.is_finite()) {
            return Err(Error::Config("mix_ratio must be finite and non-negative".into()));
        }
        if self.segments == 0 || self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::Config("segments and grid must be positive".into()));
        }
        if self.topics == 0 || self.eval_seeds == 0 {
            return Err(Error::Config("topics and eval_seeds must be at least 1".into()));
        }
        if self.tsne.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        self.metrics.validate()?;
        self.ppo.validate()?;
        self.synthetic.validate()
    }

    /// Specification of synthetic topic `index`, with its own seed and the
    /// irrelevant count set by the mix ratio.
    pub fn topic_spec(&self, index: usize) -> SyntheticTopicSpec {
        let mut spec = self.synthetic.clone();
        spec.topic_id = format!("syn-{index:02}");
        spec.seed = derive_seed(self.seed, 0x5000 + index as u64);
        spec.irrelevant_docs = (spec.relevant_docs() as f64 * self.mix_ratio).round() as usize;
        spec
    }

    pub fn topic_ids(&self) -> Vec<String> {
        (0..self.topics).map(|i| format!("syn-{i:02}")).collect()
    }

    /// t-SNE settings for one topic.
    pub fn tsne_for(&self, index: usize) -> TsneConfig {
        TsneConfig {
            seed: derive_seed(self.seed, 0x7000 + index as u64),
            ..self.tsne.clone()
        }
    }

    /// PPO settings for one topic and compressor.
    pub fn ppo_for(&self, index: usize, compressor: Compressor) -> PpoConfig {
        let stream = match compressor {
            Compressor::Tsne => 0x8000,
            Compressor::Svd => 0x9000,
        };
        PpoConfig {
            seed: derive_seed(self.seed, stream + index as u64),
            ..self.ppo.clone()
        }
    }
}
