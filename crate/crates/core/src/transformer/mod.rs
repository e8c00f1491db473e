// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-LN GPT-2 forward pass with hook sites, a reverse pass to any site and
//! token generation.
//!
//! Per block:
//!
//! ```text
//! resid_mid  = resid_pre + Attn(LN1(resid_pre))
//! resid_post = resid_mid + MLP(LN2(resid_mid))
//! ```
//!
//! Hooks at a site run in list order on the freshly computed value, before
//! any consumer reads it. Captures record the value after hooks. Hooks on
//! `resid_post.L` run before hooks on `resid_pre.(L+1)`.

mod backward;
mod forward;
mod generate;
mod hooks;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

pub use generate::Sampler;
pub use hooks::{Hook, HookAction, HookPoint, HookSite, Positions, ProjectTarget, RowFn};

use crate::bundle::{ModelBundle, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;

/// Captured activations of one pass.
#[derive(Debug, Clone, Default)]
pub struct ActivationCache {
    pub tokens: Vec<TokenId>,
    /// Final layer-norm scale `1/sqrt(var + eps)` per position, as used.
    pub final_ln_scale: Vec<f32>,
    sites: BTreeMap<HookSite, Tensor>,
}

impl ActivationCache {
    pub fn get(&self, site: &HookSite) -> Result<&Tensor> {
        self.sites
            .get(site)
            .ok_or_else(|| Error::Model(format!("{site} was not captured")))
    }

    pub fn contains(&self, site: &HookSite) -> bool {
        self.sites.contains_key(site)
    }

    pub fn insert(&mut self, site: HookSite, t: Tensor) {
        self.sites.insert(site, t);
    }

    pub fn sites(&self) -> impl Iterator<Item = (&HookSite, &Tensor)> {
        self.sites.iter()
    }

    /// Shared handle to a captured tensor, for use as a hook source.
    pub fn shared(&self, site: &HookSite) -> Result<Arc<Tensor>> {
        self.get(site).map(|t| Arc::new(t.clone()))
    }
}

/// Which rows of the logits to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitRows {
    #[default]
    All,
    /// Only the final position; logits have shape `[1, vocab]`.
    Last,
}

/// Resume a pass from a given `resid_pre` of a layer; earlier layers are
/// skipped.
#[derive(Debug, Clone)]
pub struct StartAt {
    pub layer: usize,
    pub resid_pre: Arc<Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub capture: BTreeSet<HookSite>,
    pub hooks: Vec<Hook>,
    pub logits: LogitRows,
    pub start: Option<StartAt>,
}

impl RunOptions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capture(mut self, sites: impl IntoIterator<Item = HookSite>) -> Self {
        self.capture.extend(sites);
        self
    }

    pub fn hooks(mut self, hooks: impl IntoIterator<Item = Hook>) -> Self {
        self.hooks.extend(hooks);
        self
    }

    pub fn hook(mut self, hook: Hook) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn last_logits(mut self) -> Self {
        self.logits = LogitRows::Last;
        self
    }

    pub fn start_at(mut self, layer: usize, resid_pre: Arc<Tensor>) -> Self {
        self.start = Some(StartAt { layer, resid_pre });
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logits: Tensor,
    pub cache: ActivationCache,
}

/// Every site of one point across all layers (and heads, when per-head).
pub fn sites_of(config: &ModelConfig, point: HookPoint) -> Vec<HookSite> {
    if point.is_final() {
        return vec![HookSite::new(0, point)];
    }
    let mut out = Vec::new();
    for l in 0..config.n_layers {
        if point.per_head() {
            out.extend((0..config.n_heads).map(|h| HookSite::head(l, point, h)));
        } else {
            out.push(HookSite::new(l, point));
        }
    }
    out
}

/// Every site in the model.
pub fn all_sites(config: &ModelConfig) -> Vec<HookSite> {
    HookPoint::ALL.into_iter().flat_map(|p| sites_of(config, p)).collect()
}

pub(crate) struct LayerWeights<'a> {
    ln1_w: &'a Tensor,
    ln1_b: &'a Tensor,
    w_q: &'a Tensor,
    w_k: &'a Tensor,
    w_v: &'a Tensor,
    b_q: &'a Tensor,
    b_k: &'a Tensor,
    b_v: &'a Tensor,
    w_o: &'a Tensor,
    b_o: &'a Tensor,
    ln2_w: &'a Tensor,
    ln2_b: &'a Tensor,
    w_in: &'a Tensor,
    b_in: &'a Tensor,
    w_out: &'a Tensor,
    b_out: &'a Tensor,
}

/// Borrowing executor over a validated bundle.
pub struct Transformer<'a> {
    bundle: &'a ModelBundle,
    layers: Vec<LayerWeights<'a>>,
    w_e: &'a Tensor,
    w_pos: &'a Tensor,
    lnf_w: &'a Tensor,
    lnf_b: &'a Tensor,
    w_u: Option<&'a Tensor>,
}

impl<'a> Transformer<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Result<Self> {
        let violations = bundle.validate();
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::Model(format!("invalid bundle: {}", list.join("; "))));
        }
        let g = |n: String| bundle.get(&n);
        let mut layers = Vec::with_capacity(bundle.config.n_layers);
        for i in 0..bundle.config.n_layers {
            let p = |s: &str| format!("blocks.{i}.{s}");
            layers.push(LayerWeights {
                ln1_w: g(p("ln1.w"))?,
                ln1_b: g(p("ln1.b"))?,
                w_q: g(p("attn.W_Q"))?,
                w_k: g(p("attn.W_K"))?,
                w_v: g(p("attn.W_V"))?,
                b_q: g(p("attn.b_Q"))?,
                b_k: g(p("attn.b_K"))?,
                b_v: g(p("attn.b_V"))?,
                w_o: g(p("attn.W_O"))?,
                b_o: g(p("attn.b_O"))?,
                ln2_w: g(p("ln2.w"))?,
                ln2_b: g(p("ln2.b"))?,
                w_in: g(p("mlp.W_in"))?,
                b_in: g(p("mlp.b_in"))?,
                w_out: g(p("mlp.W_out"))?,
                b_out: g(p("mlp.b_out"))?,
            });
        }
        Ok(Self {
            bundle,
            layers,
            w_e: g("embed.W_E".into())?,
            w_pos: g("pos.W_pos".into())?,
            lnf_w: g("ln_f.w".into())?,
            lnf_b: g("ln_f.b".into())?,
            w_u: if bundle.tied_unembed {
                None
            } else {
                Some(g("unembed.W_U".into())?)
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.bundle.config
    }

    pub fn bundle(&self) -> &ModelBundle {
        self.bundle
    }

    /// Plain forward pass capturing the requested sites.
    pub fn forward(&self, tokens: &[TokenId], capture: &[HookSite]) -> Result<RunOutput> {
        self.run(tokens, &RunOptions::new().capture(capture.iter().copied()))
    }

    /// Forward pass with hooks and captures.
    pub fn run(&self, tokens: &[TokenId], opts: &RunOptions) -> Result<RunOutput> {
        let (out, _) = self.execute(tokens, opts, false)?;
        Ok(out)
    }

    /// Runs several prompts independently (in parallel under rayon); results
    /// are returned in input order.
    pub fn run_batch(&self, prompts: &[Vec<TokenId>], opts: &RunOptions) -> Result<Vec<RunOutput>> {
        use rayon::prelude::*;
        prompts.par_iter().map(|p| self.run(p, opts)).collect()
    }

    /// Unembedding column for one token as a `[d_model]` vector.
    pub fn unembed_column(&self, token: TokenId) -> Result<Vec<f32>> {
        let v = token as usize;
        let cfg = self.config();
        if v >= cfg.vocab_size {
            return Err(Error::Model(format!("token id {token} out of vocabulary")));
        }
        Ok(match self.w_u {
            Some(w_u) => (0..cfg.d_model).map(|j| w_u.data()[j * cfg.vocab_size + v]).collect(),
            None => self.w_e.row(v).to_vec(),
        })
    }
}
