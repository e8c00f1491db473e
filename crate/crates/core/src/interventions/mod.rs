// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal interventions built as hook programs: activation and directional
//! patching, zero/mean/directional ablation, attention freezing, path
//! patching and steering.

mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::PromptInstance;
use crate::error::{Error, Result};
use crate::metrics::MetricResult;
use crate::tokenizer::{TokenId, Tokenizer};
use crate::transformer::{HookSite, Positions};

pub use ops::{
    activation_patch, compute_site_means, directional_ablate, directional_patch, directional_patch_many,
    freeze_and_patch_values, head_direction, mean_ablate, path_patch, steer_generate, steering_hook, zero_ablate,
    Sender,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Replace,
    DirectionalReplace,
    DirectionalAblate,
    MeanAblate,
    ZeroAblate,
    FreezePattern,
    SteeringAdd,
    PathPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateMode {
    #[default]
    ZeroProjection,
    MeanProjection,
}

impl FromStr for AblateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "zero_projection" => Ok(AblateMode::ZeroProjection),
            "mean" | "mean_projection" => Ok(AblateMode::MeanProjection),
            _ => Err(Error::Intervention(format!("unknown ablate mode {s:?}"))),
        }
    }
}

/// Which run supplies source activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRef {
    Clean,
    Corrupted,
}

/// Token classes usable as position selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    /// Tokens decoding to `","` or `" ,"`.
    Comma,
}

impl TokenClass {
    pub fn name(self) -> &'static str {
        match self {
            TokenClass::Comma => "comma",
        }
    }

    pub fn matches_text(self, text: &str) -> bool {
        match self {
            TokenClass::Comma => text == "," || text == " ,",
        }
    }

    /// Every vocabulary id in the class.
    pub fn filter(self, tok: &Tokenizer) -> Result<TokenFilter> {
        let mut ids = BTreeSet::new();
        for id in 0..tok.vocab_size() as TokenId {
            let bytes = tok.token_bytes(id)?;
            if std::str::from_utf8(&bytes).is_ok_and(|s| self.matches_text(s)) {
                ids.insert(id);
            }
        }
        if ids.is_empty() {
            return Err(Error::Intervention(format!("no {} tokens in vocabulary", self.name())));
        }
        Ok(TokenFilter { class: self, ids })
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comma" | "commas" => Ok(TokenClass::Comma),
            _ => Err(Error::Intervention(format!("unknown token class {s:?}"))),
        }
    }
}

/// A token class resolved against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFilter {
    pub class: TokenClass,
    pub ids: BTreeSet<TokenId>,
}

impl TokenFilter {
    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.contains(&id)
    }

    pub fn positions(&self, tokens: &[TokenId]) -> Vec<usize> {
        tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| self.contains(**t))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSelector {
    All,
    Slots(Vec<String>),
    Indices(Vec<usize>),
    TokenClass(TokenClass),
}

impl PositionSelector {
    /// Sorted, deduplicated rows of `prompt`. Token classes need `filter`.
    pub fn resolve(&self, prompt: &PromptInstance, filter: Option<&TokenFilter>) -> Result<Positions> {
        let n = prompt.len();
        let idx: BTreeSet<usize> = match self {
            PositionSelector::All => return Ok(Positions::All),
            PositionSelector::Slots(names) => names.iter().map(|s| prompt.slot(s)).collect::<Result<_>>()?,
            PositionSelector::Indices(v) => v.iter().copied().collect(),
            PositionSelector::TokenClass(c) => {
                let f = filter
                    .filter(|f| f.class == *c)
                    .ok_or_else(|| Error::Intervention(format!("token class {c} was not resolved")))?;
                f.positions(&prompt.tokens).into_iter().collect()
            }
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Intervention(format!(
                "position {bad} out of range for length {n}"
            )));
        }
        Ok(Positions::Indices(idx.into_iter().collect()))
    }
}

/// Textual, replayable description of one intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub sites: Vec<HookSite>,
    pub positions: PositionSelector,
    /// Path of a direction file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate_mode: Option<AblateMode>,
    /// Receiver sites for path patching.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub receivers: Vec<HookSite>,
}

impl InterventionSpec {
    pub fn new(kind: InterventionKind, sites: Vec<HookSite>, positions: PositionSelector) -> Self {
        Self {
            kind,
            sites,
            positions,
            direction: None,
            source: None,
            coefficient: None,
            ablate_mode: None,
            receivers: Vec::new(),
        }
    }

    /// Checks that the fields each kind needs are present.
    pub fn validate(&self) -> Result<()> {
        use InterventionKind::*;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Intervention(format!("{:?} requires {what}", self.kind)))
            }
        };
        match self.kind {
            Replace => {
                need(!self.sites.is_empty(), "sites")?;
                need(self.source.is_some(), "source")
            }
            DirectionalReplace => {
                need(self.direction.is_some(), "direction")?;
                need(self.source.is_some(), "source")
            }
            DirectionalAblate => need(self.direction.is_some(), "direction"),
            MeanAblate | ZeroAblate => need(!self.sites.is_empty(), "sites"),
            FreezePattern => need(self.source.is_some(), "source"),
            SteeringAdd => {
                need(self.direction.is_some(), "direction")?;
                need(self.coefficient.is_some_and(f32::is_finite), "a finite coefficient")
            }
            PathPatch => {
                need(!self.sites.is_empty(), "sender sites")?;
                need(!self.receivers.is_empty(), "receivers")
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-site mean activation vectors over a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteMeans {
    pub means: BTreeMap<HookSite, Vec<f32>>,
    /// Rows averaged per site.
    pub counts: BTreeMap<HookSite, usize>,
    pub token_class: Option<TokenClass>,
}

impl SiteMeans {
    pub fn get(&self, site: &HookSite) -> Result<&[f32]> {
        self.means
            .get(site)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Intervention(format!("no mean for {site}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One line of a results log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub run_id: String,
    pub experiment: String,
    pub index: usize,
    pub spec: InterventionSpec,
    pub result: serde_json::Value,
}

impl LogRecord {
    pub fn new(
        run_id: &str,
        experiment: &str,
        index: usize,
        spec: &InterventionSpec,
        result: &MetricResult,
    ) -> Result<Self> {
        Ok(Self {
            run_id: run_id.to_string(),
            experiment: experiment.to_string(),
            index,
            spec: spec.clone(),
            result: serde_json::to_value(result)?,
        })
    }
}

/// Appends records as JSON lines.
pub fn append_log(path: impl AsRef<Path>, records: &[LogRecord]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Runs `f` over items in parallel; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.par_iter().map(f).collect()
}
