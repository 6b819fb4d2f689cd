//! Command configuration files. Paths inside a configuration are resolved
//! against the directory holding it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pfml_core::data::SyntheticSpec;
use pfml_core::finetune::{FinetuneConfig, ProbeConfig};
use pfml_core::functionals::FunctionalSet;
use pfml_core::nn::{ModelConfig, Pooling};
use pfml_core::pretrain::PretrainConfig;
use pfml_core::signal::FrameConfig;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: SyntheticSpec,
    pub frame: FrameConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub functionals: FunctionalSet,
    #[serde(default)]
    pub include_lag0: bool,
    #[serde(default = "yes")]
    pub normalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainRun {
    pub manifest: PathBuf,
    pub pretrain: PretrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneRun {
    pub manifest: PathBuf,
    /// Pre-trained checkpoint; without one the model trains from scratch.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Architecture when no checkpoint is given.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRun {
    pub manifest: PathBuf,
    /// Backbone checkpoint; without one a randomly initialized backbone
    /// (seeded by `probe.seed`) is probed.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub probe: ProbeConfig,
    /// Permute labels across sequences before training.
    #[serde(default)]
    pub shuffle_labels: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub pooling: Option<Pooling>,
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Directory of a configuration file, for resolving relative paths.
pub fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}
