// SPDX-License-Identifier: MIT OR Apache-2.0

//! Golden forward-pass fixtures.
//!
//! A fixture is a [`Container`] with magic `SLGOLDEN`. Metadata carries
//! `prompts` (texts), `logit_columns` and a `model` description; arrays per
//! prompt `i` are:
//!
//! - `prompt.{i}.tokens`: `u32 [n]`
//! - `prompt.{i}.logits_last`: `f32 [vocab]`, logits at the last position
//! - `prompt.{i}.logits_cols`: `f32 [n, logit_columns]`, leading vocabulary
//!   columns at every position
//! - `prompt.{i}.resid_post.{L}`: `f32 [n, d_model]`, optional per layer

use std::collections::BTreeMap;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;
use crate::transformer::{HookSite, Transformer};

pub const FIXTURE_MAGIC: &[u8; 8] = b"SLGOLDEN";

#[derive(Debug, Clone)]
pub struct GoldenPrompt {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub logits_last: Tensor,
    pub logits_cols: Tensor,
    pub resid_post: BTreeMap<usize, Tensor>,
}

#[derive(Debug, Clone)]
pub struct GoldenFixture {
    pub meta: serde_json::Value,
    pub prompts: Vec<GoldenPrompt>,
}

/// Largest absolute deviations from a fixture.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParityReport {
    pub prompts: usize,
    pub max_logit_diff: f32,
    pub max_resid_diff: f32,
}

impl GoldenFixture {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::read(path, FIXTURE_MAGIC)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::from_bytes(bytes, FIXTURE_MAGIC)?)
    }

    fn from_container(c: Container) -> Result<Self> {
        let texts: Vec<String> = serde_json::from_value(c.meta["prompts"].clone())
            .map_err(|e| Error::Bundle(format!("fixture prompts: {e}")))?;
        let mut prompts = Vec::with_capacity(texts.len());
        for (i, text) in texts.into_iter().enumerate() {
            let p = |s: &str| format!("prompt.{i}.{s}");
            let tokens = c.u32(&p("tokens"))?.to_vec();
            let logits_cols = c.f32(&p("logits_cols"))?.clone();
            if logits_cols.rows() != tokens.len() {
                return Err(Error::Bundle(format!("prompt {i}: logits_cols rows != tokens")));
            }
            let prefix = p("resid_post.");
            let mut resid_post = BTreeMap::new();
            for (name, _) in c.arrays.range(prefix.clone()..) {
                let Some(rest) = name.strip_prefix(&prefix) else { break };
                let layer: usize = rest
                    .parse()
                    .map_err(|_| Error::Bundle(format!("bad fixture array {name}")))?;
                resid_post.insert(layer, c.f32(name)?.clone());
            }
            prompts.push(GoldenPrompt {
                text,
                tokens,
                logits_last: c.f32(&p("logits_last"))?.clone(),
                logits_cols,
                resid_post,
            });
        }
        Ok(Self { meta: c.meta, prompts })
    }

    /// Runs every prompt and measures deviation from the stored values.
    pub fn compare(&self, model: &Transformer) -> Result<ParityReport> {
        let mut rep = ParityReport {
            prompts: self.prompts.len(),
            ..Default::default()
        };
        for gp in &self.prompts {
            let capture: Vec<HookSite> = gp.resid_post.keys().map(|&l| HookSite::resid_post(l)).collect();
            let out = model.forward(&gp.tokens, &capture)?;
            let n = gp.tokens.len();
            let last = Tensor::vector(out.logits.row(n - 1).to_vec());
            rep.max_logit_diff = rep.max_logit_diff.max(last.max_abs_diff(&gp.logits_last));
            let cols = gp.logits_cols.cols();
            for r in 0..n {
                for (a, b) in out.logits.row(r)[..cols].iter().zip(gp.logits_cols.row(r)) {
                    rep.max_logit_diff = rep.max_logit_diff.max((a - b).abs());
                }
            }
            for (&l, want) in &gp.resid_post {
                let got = out.cache.get(&HookSite::resid_post(l))?;
                rep.max_resid_diff = rep.max_resid_diff.max(got.max_abs_diff(want));
            }
        }
        Ok(rep)
    }
}
