// SPDX-License-Identifier: MIT OR Apache-2.0

//! Negation examples with the negated word annotated as slot `NEGATED`.
//!
//! Records are JSON lines with `text`, `negated` (the valenced word) and
//! `valence` (the word's own sentiment). The prompt label is the opposite of
//! `valence`.

use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::{compose, PromptInstance, Sentiment};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const NEGATION_FIXTURE: &str = include_str!("../../data/negation.jsonl");

pub const NEGATED: &str = "NEGATED";

#[derive(Deserialize)]
struct Record {
    text: String,
    negated: String,
    valence: Sentiment,
}

fn negator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:not|never|no)\b|n't\b").expect("negator pattern"))
}

/// The shipped fixture.
pub fn load_negation_fixture(tok: &Tokenizer) -> Result<Vec<PromptInstance>> {
    negation_fixture_from_str(NEGATION_FIXTURE, tok)
}

/// Parses fixture lines. The slot marks the first whole-word occurrence of
/// `negated` after the first negator.
pub fn negation_fixture_from_str(src: &str, tok: &Tokenizer) -> Result<Vec<PromptInstance>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Dataset(format!("negation line {}: {m}", i + 1));
        let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let neg = negator()
            .find(&rec.text)
            .ok_or_else(|| bad(format!("no negator in {:?}", rec.text)))?;
        let word = Regex::new(&format!(r"\b{}\b", regex::escape(&rec.negated))).map_err(|e| bad(e.to_string()))?;
        let m = word
            .find_at(&rec.text, neg.end())
            .ok_or_else(|| bad(format!("{:?} does not follow a negator", rec.negated)))?;
        out.push(compose(
            tok,
            &[(&rec.text[..m.end()], Some(NEGATED)), (&rec.text[m.end()..], None)],
            rec.valence.opposite(),
        )?);
    }
    Ok(out)
}
