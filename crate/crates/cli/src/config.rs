//! JSON run configurations. Fields missing from a file take their defaults;
//! command-line flags override both.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tar_core::data::{Adjustment, FakeKind, SplitSpec};
use tar_core::eval::DEFAULT_CAM_LAYER;
use tar_core::model::{ArchConfig, Variant};
use tar_core::train::TrainConfig;
use tar_core::TarError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
    Micro,
}

impl Preset {
    pub fn arch(self) -> ArchConfig {
        match self {
            Preset::Paper => ArchConfig::paper(),
            Preset::Desk => ArchConfig::desk(),
            Preset::Micro => ArchConfig::micro(),
        }
    }
}

/// Resolve the seed: flag, then config file, then `TAR_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var("TAR_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| TarError::config(format!("TAR_SEED={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(0),
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| TarError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| TarError::config(format!("config {}: {e}", path.display())).into())
}

pub fn parse_domains(list: &str) -> anyhow::Result<Vec<FakeKind>> {
    if list == "all" {
        return Ok(FakeKind::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.trim().parse::<FakeKind>().map_err(anyhow::Error::from))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Preset,
    /// Image size; defaults to the preset's input size.
    pub size: Option<usize>,
    pub domains: Vec<FakeKind>,
    pub splits: SplitSpec,
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: Preset::Desk,
            size: None,
            domains: FakeKind::ALL.to_vec(),
            splits: SplitSpec::default(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub data: Option<PathBuf>,
    pub domain: Option<FakeKind>,
    pub preset: Preset,
    /// Explicit architecture; overrides the preset.
    pub arch: Option<ArchConfig>,
    pub variant: Variant,
    pub train: TrainConfig,
    pub seed: Option<u64>,
}

/// Transfer stage defaults: 100 passes over the few-shot set, batch 10.
pub fn transfer_train_default() -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch_size: 10,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub source: Option<FakeKind>,
    pub seq: Vec<FakeKind>,
    pub shots: usize,
    pub allow_count_mismatch: bool,
    pub train: TrainConfig,
    pub seed: Option<u64>,
}

impl Default for TransferCmdConfig {
    fn default() -> Self {
        TransferCmdConfig {
            checkpoint: None,
            data: None,
            source: None,
            seq: Vec::new(),
            shots: 50,
            allow_count_mismatch: false,
            train: transfer_train_default(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    /// Empty means every domain in the dataset.
    pub domains: Vec<FakeKind>,
    pub base: Option<FakeKind>,
    pub adjustment: Adjustment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamCmdConfig {
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub layer: String,
    pub alpha: f64,
}

impl Default for CamCmdConfig {
    fn default() -> Self {
        CamCmdConfig {
            checkpoint: None,
            image: None,
            layer: DEFAULT_CAM_LAYER.to_string(),
            alpha: 0.5,
        }
    }
}

pub fn required<T>(v: Option<T>, what: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| TarError::config(format!("missing {what} (flag or config file)")).into())
}
