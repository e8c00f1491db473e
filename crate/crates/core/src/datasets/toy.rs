// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toy movie reviews and multi-subject mood stories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::words::*;
use super::{compose, AnswerSpec, PromptInstance, PromptPair, Sentiment};
use crate::error::Result;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(crate::error::Error::Dataset(format!("unknown split {s:?}"))),
        }
    }
}

/// Irrelevant sentences of 10, 18 and 22 tokens for distance experiments.
pub const FILLERS: [(usize, &str); 3] = [
    (10, " The theater was small and the seats were red."),
    (
        18,
        " We parked near the old library and walked past the bakery on the corner to the theater.",
    ),
    (
        22,
        " My friend and I arrived early and waited in the lobby for the doors to open. The bus was late.",
    ),
];

/// The filler with the given token count.
pub fn filler(tokens: usize) -> Result<&'static str> {
    FILLERS
        .iter()
        .find(|f| f.0 == tokens)
        .map(|f| f.1)
        .ok_or_else(|| crate::error::Error::Dataset(format!("no filler of {tokens} tokens")))
}

fn review(tok: &Tokenizer, adj: &str, verb: &str, filler: &str, label: Sentiment) -> Result<PromptInstance> {
    let adj = format!(" {adj}");
    let verb = format!(" {verb}");
    compose(
        tok,
        &[
            ("I thought this movie was", None),
            (&adj, Some("ADJ")),
            (",", None),
            (" I", None),
            (&verb, Some("VRB")),
            (" it.", None),
            (filler, None),
            ("\nConclusion: This", None),
            (" movie", Some("SUM")),
            (" is", None),
        ],
        label,
    )
}

/// Answer tokens shared by every movie-review prompt.
pub fn toy_movie_answers(tok: &Tokenizer) -> Result<AnswerSpec> {
    AnswerSpec::from_words(tok, &POSITIVE_ANSWERS, &NEGATIVE_ANSWERS)
}

/// One review per adjective, positives first. Verbs cycle through the
/// matching-sentiment list by adjective index.
pub fn gen_toy_movie_review(split: Split, tok: &Tokenizer) -> Result<Vec<PromptInstance>> {
    gen_toy_movie_review_with_filler(split, tok, "")
}

/// Reviews with `filler` inserted between the review and its conclusion.
pub fn gen_toy_movie_review_with_filler(split: Split, tok: &Tokenizer, filler: &str) -> Result<Vec<PromptInstance>> {
    let (pos, neg): (&[&str], &[&str]) = match split {
        Split::Train => (&POSITIVE_ADJECTIVES_TRAIN, &NEGATIVE_ADJECTIVES_TRAIN),
        Split::Test => (&POSITIVE_ADJECTIVES_TEST, &NEGATIVE_ADJECTIVES_TEST),
    };
    let mut out = Vec::with_capacity(pos.len() + neg.len());
    for (i, adj) in pos.iter().enumerate() {
        out.push(review(
            tok,
            adj,
            POSITIVE_VERBS[i % POSITIVE_VERBS.len()],
            filler,
            Sentiment::Positive,
        )?);
    }
    for (i, adj) in neg.iter().enumerate() {
        out.push(review(
            tok,
            adj,
            NEGATIVE_VERBS[i % NEGATIVE_VERBS.len()],
            filler,
            Sentiment::Negative,
        )?);
    }
    Ok(out)
}

/// Positive review `i` paired with negative review `i` among prompts of the
/// same token count, cycling the shorter side. Clean prompts are positive.
pub fn toy_movie_review_pairs(split: Split, tok: &Tokenizer) -> Result<Vec<PromptPair>> {
    toy_movie_review_pairs_with_filler(split, tok, "")
}

/// [`toy_movie_review_pairs`] over [`gen_toy_movie_review_with_filler`].
pub fn toy_movie_review_pairs_with_filler(split: Split, tok: &Tokenizer, filler: &str) -> Result<Vec<PromptPair>> {
    let answers = toy_movie_answers(tok)?;
    let mut groups: BTreeMap<usize, (Vec<PromptInstance>, Vec<PromptInstance>)> = BTreeMap::new();
    for p in gen_toy_movie_review_with_filler(split, tok, filler)? {
        let g = groups.entry(p.tokens.len()).or_default();
        match p.label {
            Sentiment::Positive => g.0.push(p),
            Sentiment::Negative => g.1.push(p),
        }
    }
    let mut out = Vec::new();
    for (pos, neg) in groups.values() {
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        for k in 0..pos.len().max(neg.len()) {
            out.push(PromptPair::new(
                pos[k % pos.len()].clone(),
                neg[k % neg.len()].clone(),
                answers.clone(),
            )?);
        }
    }
    Ok(out)
}

fn story(tok: &Tokenizer, n1: &str, n2: &str, first_positive: bool, query_first: bool) -> Result<PromptInstance> {
    let (v1, v2) = if first_positive {
        MOOD_POSITIVE_VERBS
    } else {
        MOOD_NEGATIVE_VERBS
    };
    let (v3, v4) = if first_positive {
        MOOD_NEGATIVE_VERBS
    } else {
        MOOD_POSITIVE_VERBS
    };
    let (v1, v2, v3, v4) = (format!(" {v1}"), format!(" {v2}"), format!(" {v3}"), format!(" {v4}"));
    let n2s = format!(" {n2}");
    let q = format!(" {}", if query_first { n1 } else { n2 });
    let label = if first_positive == query_first {
        Sentiment::Positive
    } else {
        Sentiment::Negative
    };
    compose(
        tok,
        &[
            (n1, Some("NAME1")),
            (&v1, Some("VRB1")),
            (" parties", None),
            (",", Some("COMMASUM1")),
            (" and", None),
            (&v2, Some("VRB2")),
            (" them whenever possible", None),
            (".", Some("PERIOD1")),
            (&n2s, Some("NAME2")),
            (&v3, Some("VRB3")),
            (" parties", None),
            (",", Some("COMMASUM2")),
            (" and", None),
            (&v4, Some("VRB4")),
            (" them whenever possible", None),
            (".", Some("PERIOD2")),
            (" One day, they were invited to a grand gala.", None),
            (&q, Some("RNAME")),
            (" feels", Some("FEEL")),
            (" very", None),
        ],
        label,
    )
}

/// Every ordered pair of distinct names, each queried on the first and then
/// the second subject. In the clean story the first subject hates parties;
/// the corrupted story swaps the two verb pairs.
pub fn gen_toy_mood_story(tok: &Tokenizer) -> Result<Vec<PromptPair>> {
    let (pos, neg) = MOOD_ANSWERS;
    let answers = AnswerSpec::from_words(tok, &[pos], &[neg])?;
    let mut out = Vec::with_capacity(NAMES.len() * (NAMES.len() - 1) * 2);
    for n1 in NAMES {
        for n2 in NAMES {
            if n1 == n2 {
                continue;
            }
            for query_first in [true, false] {
                out.push(PromptPair::new(
                    story(tok, n1, n2, false, query_first)?,
                    story(tok, n1, n2, true, query_first)?,
                    answers.clone(),
                )?);
            }
        }
    }
    Ok(out)
}
