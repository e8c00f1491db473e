// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt datasets with slot annotations.
//!
//! A slot names a token position. Every slot points at the final sub-token
//! of its surface word, and `END` is always the last position.

mod corpus;
mod negation;
mod sst;
mod toy;
pub mod words;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use corpus::load_corpus;
pub use negation::{load_negation_fixture, negation_fixture_from_str, NEGATED, NEGATION_FIXTURE};
pub use sst::{load_sst_pairs, sst_pairs_from_str, SstPairs, SstReport, SstScaffold};
pub use toy::{
    filler, gen_toy_mood_story, gen_toy_movie_review, gen_toy_movie_review_with_filler, toy_movie_answers,
    toy_movie_review_pairs, toy_movie_review_pairs_with_filler, Split, FILLERS,
};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

pub const END: &str = "END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
}

impl Sentiment {
    pub fn opposite(self) -> Self {
        match self {
            Self::Positive => Self::Negative,
            Self::Negative => Self::Positive,
        }
    }

    /// `+1` for positive, `-1` for negative.
    pub fn sign(self) -> f32 {
        match self {
            Self::Positive => 1.0,
            Self::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Positive
    }
}

impl std::fmt::Display for Sentiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub slots: BTreeMap<String, usize>,
    pub label: Sentiment,
}

impl PromptInstance {
    pub fn slot(&self, name: &str) -> Result<usize> {
        self.slots
            .get(name)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("prompt has no slot {name}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Paired answer tokens; logit differences pair `positive_ids[i]` with
/// `negative_ids[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpec {
    pub positive_ids: Vec<TokenId>,
    pub negative_ids: Vec<TokenId>,
}

impl AnswerSpec {
    pub fn new(positive_ids: Vec<TokenId>, negative_ids: Vec<TokenId>) -> Result<Self> {
        if positive_ids.is_empty() || positive_ids.len() != negative_ids.len() {
            return Err(Error::Dataset(format!(
                "answer sets must be nonempty and equal length ({} vs {})",
                positive_ids.len(),
                negative_ids.len()
            )));
        }
        if let Some(t) = positive_ids.iter().find(|t| negative_ids.contains(t)) {
            return Err(Error::Dataset(format!("answer token {t} is in both sets")));
        }
        Ok(Self {
            positive_ids,
            negative_ids,
        })
    }

    /// Answer sets from words, each encoded with a leading space as a single
    /// token.
    pub fn from_words(tok: &Tokenizer, positive: &[&str], negative: &[&str]) -> Result<Self> {
        let ids = |ws: &[&str]| -> Result<Vec<TokenId>> { ws.iter().map(|w| single_token(tok, w)).collect() };
        Self::new(ids(positive)?, ids(negative)?)
    }

    pub fn len(&self) -> usize {
        self.positive_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive_ids.is_empty()
    }
}

fn single_token(tok: &Tokenizer, word: &str) -> Result<TokenId> {
    match tok.encode(&format!(" {word}"))[..] {
        [id] => Ok(id),
        ref ids => Err(Error::Dataset(format!(
            "answer \" {word}\" is {} tokens, expected 1",
            ids.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub clean: PromptInstance,
    pub corrupted: PromptInstance,
    pub answers: AnswerSpec,
}

impl PromptPair {
    /// Checks equal length, identical slot maps and opposite labels.
    pub fn new(clean: PromptInstance, corrupted: PromptInstance, answers: AnswerSpec) -> Result<Self> {
        if clean.tokens.len() != corrupted.tokens.len() {
            return Err(Error::Dataset(format!(
                "pair lengths differ: {:?} ({}) vs {:?} ({})",
                clean.text,
                clean.tokens.len(),
                corrupted.text,
                corrupted.tokens.len()
            )));
        }
        if clean.slots != corrupted.slots {
            return Err(Error::Dataset(format!("pair slot maps differ: {:?}", clean.text)));
        }
        if clean.label == corrupted.label {
            return Err(Error::Dataset(format!("pair labels agree: {:?}", clean.text)));
        }
        Ok(Self {
            clean,
            corrupted,
            answers,
        })
    }

    /// The same pair with clean and corrupted exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            clean: self.corrupted.clone(),
            corrupted: self.clean.clone(),
            answers: self.answers.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.clean.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.tokens.is_empty()
    }
}

/// Text pieces concatenated into a prompt; a named piece marks the token
/// holding its last byte.
pub(crate) fn compose(tok: &Tokenizer, pieces: &[(&str, Option<&str>)], label: Sentiment) -> Result<PromptInstance> {
    let text: String = pieces.iter().map(|(s, _)| *s).collect();
    let tokens = tok.encode(&text);
    if tokens.is_empty() {
        return Err(Error::Dataset("empty prompt".into()));
    }
    let ends = tok.token_end_offsets(&tokens)?;
    let mut slots = BTreeMap::new();
    let mut offset = 0;
    for (s, name) in pieces {
        offset += s.len();
        if let Some(name) = name {
            if s.is_empty() {
                return Err(Error::Dataset(format!("slot {name} marks an empty piece")));
            }
            let idx = ends.partition_point(|&e| e < offset);
            if slots.insert(name.to_string(), idx).is_some() {
                return Err(Error::Dataset(format!("slot {name} defined twice")));
            }
        }
    }
    slots.insert(END.to_string(), tokens.len() - 1);
    Ok(PromptInstance {
        text,
        tokens,
        slots,
        label,
    })
}
