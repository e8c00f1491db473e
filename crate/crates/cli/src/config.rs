// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration read from TOML. Every section has defaults, so
//! an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sentlens::analysis::FitOptions;
use sentlens::directions::{DasConfig, LogisticConfig};
use sentlens::interventions::{AblateMode, PositionSelector, TokenClass};
use sentlens::transformer::Sampler;
use sentlens::{Error, Result};

/// Environment variable naming the directory that holds bundles, tokenizer
/// files and datasets.
pub const DATA_ENV: &str = "SENTLENS_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bundle: PathBuf,
    /// GPT-2 `encoder.json`; the built-in vocabulary is used when unset.
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub dataset: DatasetConfig,
    /// Held-out pairs for sweeps.
    pub eval_dataset: Option<DatasetConfig>,
    pub fit: FitSection,
    pub patch: PatchSection,
    pub ablate: AblateSection,
    pub steer: SteerSection,
    pub scan: ScanSection,
    pub circuit: CircuitSection,
    pub sweep: SweepSection,
    pub means: MeansSection,
    pub histogram: HistogramSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bundle: "gpt2-small.slb".into(),
            vocab: None,
            merges: None,
            out_dir: "runs".into(),
            seed: 0,
            threads: 1,
            dataset: DatasetConfig::default(),
            eval_dataset: None,
            fit: FitSection::default(),
            patch: PatchSection::default(),
            ablate: AblateSection::default(),
            steer: SteerSection::default(),
            scan: ScanSection::default(),
            circuit: CircuitSection::default(),
            sweep: SweepSection::default(),
            means: MeansSection::default(),
            histogram: HistogramSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    ToyMovie,
    ToyMood,
    Sst,
    Negation,
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub split: String,
    /// SST record file or corpus directory.
    pub path: Option<PathBuf>,
    pub scaffold: String,
    /// Token count of a filler inserted into movie reviews; 0 for none.
    pub filler: usize,
    pub max_tokens: usize,
    /// Use at most this many pairs or prompts; 0 keeps all.
    pub limit: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::ToyMovie,
            split: "train".into(),
            path: None,
            scaffold: "review_sentiment".into(),
            filler: 0,
            max_tokens: 20_000,
            limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub methods: Vec<String>,
    pub sites: Vec<String>,
    pub slots: Vec<String>,
    pub das_dim: usize,
    pub das: DasConfig,
    pub logistic: LogisticConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            methods: ["MD", "KM", "PCA", "LR", "DAS"].map(String::from).to_vec(),
            sites: vec!["resid_post.0".into()],
            slots: vec!["ADJ".into()],
            das_dim: 1,
            das: DasConfig::default(),
            logistic: LogisticConfig::default(),
        }
    }
}

impl FitSection {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            slots: self.slots.clone(),
            das: DasConfig { seed, ..self.das },
            das_dim: self.das_dim,
            logistic: LogisticConfig { seed, ..self.logistic },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    /// Direction file for directional patching.
    pub direction: Option<PathBuf>,
    /// Sites for full activation patching when no direction is given.
    pub sites: Vec<String>,
    pub positions: PositionSelector,
}

impl Default for PatchSection {
    fn default() -> Self {
        Self {
            direction: None,
            sites: Vec::new(),
            positions: PositionSelector::Slots(vec!["ADJ".into()]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateKind {
    Directional,
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub kind: AblateKind,
    pub direction: Option<PathBuf>,
    /// Ablate a seeded random direction of this site instead of a file.
    pub random_site: Option<String>,
    pub mode: AblateMode,
    /// Sites ablated; the direction's own site when empty.
    pub sites: Vec<String>,
    pub positions: PositionSelector,
    /// Site means file written by `means`.
    pub means: Option<PathBuf>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            kind: AblateKind::Directional,
            direction: None,
            random_site: None,
            mode: AblateMode::ZeroProjection,
            sites: Vec::new(),
            positions: PositionSelector::All,
            means: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSection {
    pub direction: Option<PathBuf>,
    pub prompt: String,
    pub coefficients: Vec<f32>,
    pub n_new: usize,
    pub sampler: Sampler,
}

impl Default for SteerSection {
    fn default() -> Self {
        Self {
            direction: None,
            prompt: "I thought this movie was".into(),
            coefficients: vec![0.0, -5.0, -10.0, -17.0],
            n_new: 20,
            sampler: Sampler::Greedy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub directions: Vec<PathBuf>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSection {
    pub threshold: f32,
    pub positions: PositionSelector,
    /// Sender sites for path patching; the head sweep runs when empty.
    pub senders: Vec<String>,
    pub sender_positions: PositionSelector,
    pub receivers: Vec<String>,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            positions: PositionSelector::All,
            senders: Vec::new(),
            sender_positions: PositionSelector::All,
            receivers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Layer,
    DasDim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    pub method: String,
    /// Sites swept; every `resid_post` when empty.
    pub sites: Vec<String>,
    pub positions: PositionSelector,
    pub dims: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: SweepKind::Layer,
            method: "DAS".into(),
            sites: Vec::new(),
            positions: PositionSelector::Slots(vec!["ADJ".into()]),
            dims: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeansSection {
    pub sites: Vec<String>,
    pub token_class: Option<TokenClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramSection {
    pub direction: Option<PathBuf>,
    pub bins: usize,
    pub per_bin: usize,
    /// Token labels file, or `builtin` for the shipped lexicon; no threshold
    /// report when unset.
    pub labels: Option<PathBuf>,
    pub quantile: f64,
}

impl Default for HistogramSection {
    fn default() -> Self {
        Self {
            direction: None,
            bins: 20,
            per_bin: 20,
            labels: None,
            quantile: 0.001,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// `path` as given when it exists or is absolute, otherwise under the data
/// directory when one is set.
pub fn resolve(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match data_dir {
        Some(d) => d.join(path),
        None => path.to_path_buf(),
    }
}
