// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::quantile;
use crate::error::{Error, Result};

/// Hand-labeled token lexicon shipped with the crate.
pub const LABELS_FIXTURE: &str = include_str!("../../data/sentiment_labels.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenLabel {
    Positive,
    Neutral,
    Negative,
}

impl FromStr for TokenLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(TokenLabel::Positive),
            "neutral" => Ok(TokenLabel::Neutral),
            "negative" => Ok(TokenLabel::Negative),
            _ => Err(Error::Analysis(format!("unknown token label {s:?}"))),
        }
    }
}

/// Token text to label; lookups ignore surrounding whitespace and case.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelLexicon {
    labels: BTreeMap<String, TokenLabel>,
}

fn key(token: &str) -> String {
    token.trim().to_lowercase()
}

impl LabelLexicon {
    /// Parses `token,label` rows with a header line.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut labels = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Analysis(format!("label row needs 2 fields: {rec:?}")));
            }
            let k = key(&rec[0]);
            let l: TokenLabel = rec[1].parse()?;
            if labels.insert(k.clone(), l).is_some_and(|old| old != l) {
                return Err(Error::Analysis(format!("conflicting labels for {k:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn fixture() -> Result<Self> {
        Self::from_csv(LABELS_FIXTURE)
    }

    pub fn get(&self, token: &str) -> Option<TokenLabel> {
        self.labels.get(&key(token)).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TokenLabel)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub lower: f32,
    pub upper: f32,
    pub predicted_positive: usize,
    pub predicted_negative: usize,
    pub correct: usize,
    pub accuracy: f32,
}

/// Predicts Positive at or above the `1 − q` quantile and Negative at or
/// below the `q` quantile; accuracy counts thresholded tokens only. A token
/// on both sides (degenerate data) is skipped.
pub fn threshold_classify(samples: &[(String, f32)], labels: &LabelLexicon, q: f64) -> Result<ThresholdReport> {
    if !(0.0..0.5).contains(&q) {
        return Err(Error::Analysis(format!("threshold quantile {q} outside [0, 0.5)")));
    }
    let acts: Vec<f32> = samples.iter().map(|s| s.1).collect();
    let lower = quantile(&acts, q)?;
    let upper = quantile(&acts, 1.0 - q)?;
    let (mut pp, mut pn, mut correct) = (0, 0, 0);
    for (token, a) in samples {
        let pred = match (*a >= upper, *a <= lower) {
            (true, false) => TokenLabel::Positive,
            (false, true) => TokenLabel::Negative,
            _ => continue,
        };
        let got = labels
            .get(token)
            .ok_or_else(|| Error::Analysis(format!("no label for token {token:?}")))?;
        if pred == TokenLabel::Positive {
            pp += 1;
        } else {
            pn += 1;
        }
        if got == pred {
            correct += 1;
        }
    }
    let n = pp + pn;
    if n == 0 {
        return Err(Error::Analysis("no tokens crossed either threshold".into()));
    }
    Ok(ThresholdReport {
        lower,
        upper,
        predicted_positive: pp,
        predicted_negative: pn,
        correct,
        accuracy: correct as f32 / n as f32,
    })
}
