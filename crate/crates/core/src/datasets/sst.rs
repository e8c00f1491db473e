// SPDX-License-Identifier: MIT OR Apache-2.0

//! Labeled phrase ingestion and equal-length pairing.
//!
//! Input is one JSON object per line with a `text` string and a `label`
//! that is `"Positive"`/`"Negative"` (any case) or `1`/`0`. Blank lines are
//! skipped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compose, AnswerSpec, PromptInstance, PromptPair, Sentiment};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SstScaffold {
    /// `Review Text: TEXT, Review Sentiment:` answered by `Positive`/`Negative`.
    ReviewSentiment,
    /// `TEXT Overall the movie was very` answered by `good`/`bad`.
    OverallMovie,
}

impl SstScaffold {
    pub fn wrap(self, text: &str) -> String {
        match self {
            Self::ReviewSentiment => format!("Review Text: {text}, Review Sentiment:"),
            Self::OverallMovie => format!("{text} Overall the movie was very"),
        }
    }

    pub fn answer_words(self) -> (&'static str, &'static str) {
        match self {
            Self::ReviewSentiment => ("Positive", "Negative"),
            Self::OverallMovie => ("good", "bad"),
        }
    }
}

impl std::str::FromStr for SstScaffold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "review_sentiment" => Ok(Self::ReviewSentiment),
            "overall_movie" => Ok(Self::OverallMovie),
            _ => Err(Error::Dataset(format!("unknown scaffold {s:?}"))),
        }
    }
}

/// Phrases left without an equal-length partner of the opposite label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SstReport {
    pub records: usize,
    pub pairs: usize,
    /// 1-based line numbers of unpaired phrases.
    pub excluded_lines: Vec<usize>,
}

impl SstReport {
    pub fn excluded(&self) -> usize {
        self.excluded_lines.len()
    }
}

#[derive(Debug, Clone)]
pub struct SstPairs {
    pub pairs: Vec<PromptPair>,
    pub report: SstReport,
}

#[derive(Deserialize)]
struct Record {
    text: String,
    label: serde_json::Value,
}

fn parse_label(v: &serde_json::Value) -> Option<Sentiment> {
    match v {
        serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "positive" => Some(Sentiment::Positive),
            "negative" => Some(Sentiment::Negative),
            _ => None,
        },
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(1) => Some(Sentiment::Positive),
            Some(0) => Some(Sentiment::Negative),
            _ => None,
        },
        serde_json::Value::Bool(b) => Some(if *b { Sentiment::Positive } else { Sentiment::Negative }),
        _ => None,
    }
}

pub fn load_sst_pairs(path: impl AsRef<Path>, tok: &Tokenizer, scaffold: SstScaffold) -> Result<SstPairs> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    sst_pairs_from_str(&src, tok, scaffold)
}

/// Pairs phrases by scaffolded token count. Within a length group the k-th
/// positive (file order) is paired with the k-th negative; the positive one
/// is clean.
pub fn sst_pairs_from_str(src: &str, tok: &Tokenizer, scaffold: SstScaffold) -> Result<SstPairs> {
    let (pw, nw) = scaffold.answer_words();
    let answers = AnswerSpec::from_words(tok, &[pw], &[nw])?;
    let mut groups: BTreeMap<usize, (Vec<(usize, PromptInstance)>, Vec<(usize, PromptInstance)>)> = BTreeMap::new();
    let mut records = 0;
    for (i, line) in src.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::Dataset(format!("line {line_no}: malformed record: {e}")))?;
        let label = parse_label(&rec.label)
            .ok_or_else(|| Error::Dataset(format!("line {line_no}: bad label {}", rec.label)))?;
        let text = rec.text.trim();
        if text.is_empty() {
            return Err(Error::Dataset(format!("line {line_no}: empty text")));
        }
        records += 1;
        let p = compose(tok, &[(&scaffold.wrap(text), None)], label)?;
        let g = groups.entry(p.tokens.len()).or_default();
        match label {
            Sentiment::Positive => g.0.push((line_no, p)),
            Sentiment::Negative => g.1.push((line_no, p)),
        }
    }
    let mut pairs = Vec::new();
    let mut excluded_lines = Vec::new();
    for (pos, neg) in groups.into_values() {
        let k = pos.len().min(neg.len());
        excluded_lines.extend(pos[k..].iter().chain(&neg[k..]).map(|(l, _)| *l));
        for ((_, c), (_, x)) in pos.into_iter().zip(neg).take(k) {
            pairs.push(PromptPair::new(c, x, answers.clone())?);
        }
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no pairable phrases among {records} records")));
    }
    excluded_lines.sort_unstable();
    let report = SstReport {
        records,
        pairs: pairs.len(),
        excluded_lines,
    };
    Ok(SstPairs { pairs, report })
}
