//! The repo-wide TOML configuration file.
//!
//! Every key is optional and falls back to the default shown by
//! [`RepoConfig::default_toml`]; unknown keys are an error naming the key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscriminatorSpec, GeneratorSpec, HyperParams};
use crate::preprocess::{LiveParams, PreprocessConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepoConfig {
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub instrument: InstrumentConfig,
    pub service: ServiceConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub total_iterations: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub preview_every: u64,
    pub seed: u64,
    pub workers: usize,
    pub hyper: HyperParams,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            corpus: t.corpus,
            out_dir: t.out_dir,
            total_iterations: t.total_iterations,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            preview_every: t.preview_every,
            seed: t.seed,
            workers: t.workers,
            hyper: t.hyper,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Source frame at its own aspect, then the model output.
    #[default]
    SideBySide,
    OutputOnly,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "side_by_side" | "side-by-side" => Ok(Layout::SideBySide),
            "output_only" | "output-only" => Ok(Layout::OutputOnly),
            _ => Err(Error::InvalidArgument(format!("unknown layout {s:?}; use side_by_side or output_only"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstrumentConfig {
    pub layout: Layout,
    /// Pacing for image-sequence sources; zero runs as fast as possible.
    pub fps: f64,
    pub loop_source: bool,
    /// Process only the newest frame when inference falls behind the source.
    pub drop_stale_frames: bool,
    /// Directory `start_record` uses when the message names none.
    pub record_dir: Option<PathBuf>,
    pub initial: LiveParams,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        Self {
            layout: Layout::SideBySide,
            fps: 0.0,
            loop_source: false,
            drop_stale_frames: false,
            record_dir: None,
            initial: LiveParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Preview frames per second per client.
    pub preview_rate: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 7654, preview_rate: 15.0 }
    }
}

impl RepoConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn default_toml() -> String {
        Self::default().to_toml()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            corpus: t.corpus.clone(),
            preprocess: self.preprocess.clone(),
            generator: self.model.generator,
            discriminator: self.model.discriminator,
            hyper: t.hyper,
            total_iterations: t.total_iterations,
            batch_size: t.batch_size,
            checkpoint_every: t.checkpoint_every,
            preview_every: t.preview_every,
            seed: t.seed,
            out_dir: t.out_dir.clone(),
            workers: t.workers,
        }
    }
}
