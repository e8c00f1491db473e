// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use super::{ActivationCache, Hook, HookPoint, HookSite, LogitRows, RunOptions, RunOutput, Transformer};
use crate::error::{Error, Result};
use crate::numerics::ops::{gelu_scalar, gemm, gemm_bt, norm_affine, norm_parts, softmax_row_in_place, NormParts};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;

/// Values kept for the reverse pass of one attention head.
pub(super) struct HeadTape {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub pattern_nat: Tensor,
    pub pattern: Tensor,
}

pub(super) struct LayerTape {
    pub ln1: NormParts,
    pub heads: Vec<HeadTape>,
    pub ln2: NormParts,
    pub mlp_pre: Tensor,
}

pub(super) struct FinalTape {
    pub centered: Tensor,
    pub scale_nat: Vec<f32>,
    pub scale: Vec<f32>,
    pub last_only: bool,
}

pub(super) struct Tape {
    pub first_layer: usize,
    pub layers: Vec<LayerTape>,
    pub fin: Option<FinalTape>,
}

/// Hooks grouped by site, keeping list order within a site.
pub(super) struct HookTable<'h> {
    by_site: BTreeMap<HookSite, Vec<&'h Hook>>,
}

impl<'h> HookTable<'h> {
    pub fn new(hooks: &'h [Hook], n_layers: usize, n_heads: usize) -> Result<Self> {
        let mut by_site: BTreeMap<HookSite, Vec<&Hook>> = BTreeMap::new();
        for h in hooks {
            h.site.check(n_layers, n_heads)?;
            by_site.entry(h.site).or_default().push(h);
        }
        Ok(Self { by_site })
    }

    pub fn at(&self, site: &HookSite) -> &[&'h Hook] {
        self.by_site.get(site).map_or(&[], Vec::as_slice)
    }

    pub fn earliest(&self) -> Option<&HookSite> {
        self.by_site.keys().min_by_key(|s| s.order_key())
    }
}

struct Pass<'p> {
    hooks: HookTable<'p>,
    opts: &'p RunOptions,
    cache: ActivationCache,
}

impl Pass<'_> {
    fn site(&mut self, site: HookSite, x: &mut Tensor) -> Result<()> {
        for h in self.hooks.at(&site) {
            h.apply(x)?;
        }
        if self.opts.capture.contains(&site) {
            self.cache.insert(site, x.clone());
        }
        Ok(())
    }
}

fn linear(x: &Tensor, w: &[f32], b: &[f32], k: usize, n: usize) -> Tensor {
    let m = x.rows();
    let mut out = vec![0.0; m * n];
    gemm(x.data(), w, &mut out, m, k, n);
    for row in out.chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Tensor::new(vec![m, n], out).expect("linear output shape")
}

impl Transformer<'_> {
    fn embed(&self, tokens: &[TokenId]) -> Result<Tensor> {
        let cfg = self.config();
        let n = tokens.len();
        let d = cfg.d_model;
        let mut x = vec![0.0f32; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let e = self.w_e.row(t as usize);
            let p = self.w_pos.row(i);
            for j in 0..d {
                x[i * d + j] = e[j] + p[j];
            }
        }
        Tensor::new(vec![n, d], x)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let cfg = self.config();
        if tokens.is_empty() {
            return Err(Error::Model("empty token sequence".into()));
        }
        if tokens.len() > cfg.n_ctx {
            return Err(Error::Model(format!(
                "context overflow: {} tokens > n_ctx {}",
                tokens.len(),
                cfg.n_ctx
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Model(format!("unknown token id {bad}")));
        }
        Ok(())
    }

    /// Core pass. With `record`, keeps what the reverse pass needs.
    pub(super) fn execute(
        &self,
        tokens: &[TokenId],
        opts: &RunOptions,
        record: bool,
    ) -> Result<(RunOutput, Option<Tape>)> {
        self.check_tokens(tokens)?;
        let cfg = self.config().clone();
        let (n, d, nh, dh, m) = (tokens.len(), cfg.d_model, cfg.n_heads, cfg.d_head, cfg.d_mlp);
        for s in &opts.capture {
            s.check(cfg.n_layers, nh)?;
        }
        let mut pass = Pass {
            hooks: HookTable::new(&opts.hooks, cfg.n_layers, nh)?,
            opts,
            cache: ActivationCache {
                tokens: tokens.to_vec(),
                ..Default::default()
            },
        };
        if opts.logits == LogitRows::Last && !pass.hooks.at(&HookSite::logits()).is_empty() {
            return Err(Error::Model("logit hooks need all logit rows".into()));
        }

        let (first_layer, mut x) = match &opts.start {
            None => (0, self.embed(tokens)?),
            Some(s) => {
                if s.layer >= cfg.n_layers {
                    return Err(Error::Model(format!("start layer {} out of range", s.layer)));
                }
                if s.resid_pre.shape() != [n, d] {
                    return Err(Error::Model(format!(
                        "start residual {:?}, expected [{n}, {d}]",
                        s.resid_pre.shape()
                    )));
                }
                if let Some(early) = pass.hooks.earliest() {
                    if !early.point.is_final() && early.layer < s.layer {
                        return Err(Error::Model(format!("{early}: hook precedes start layer {}", s.layer)));
                    }
                }
                (s.layer, (*s.resid_pre).clone())
            }
        };

        let scale = 1.0 / (dh as f32).sqrt();
        let mut tape = Tape {
            first_layer,
            layers: Vec::new(),
            fin: None,
        };

        for l in first_layer..cfg.n_layers {
            let w = &self.layers[l];
            pass.site(HookSite::resid_pre(l), &mut x)?;
            let resid_pre = x;

            let ln1 = norm_parts(&resid_pre, cfg.ln_eps);
            let mut ln1_out = norm_affine(&ln1, w.ln1_w.data(), w.ln1_b.data());
            pass.site(HookSite::new(l, HookPoint::Ln1Out), &mut ln1_out)?;

            let mut attn_out = vec![0.0f32; n * d];
            let mut head_tapes = Vec::with_capacity(if record { nh } else { 0 });
            for h in 0..nh {
                let q = linear(&ln1_out, w.w_q.slice0_data(h), w.b_q.row(h), d, dh);
                let k = linear(&ln1_out, w.w_k.slice0_data(h), w.b_k.row(h), d, dh);
                let mut v = linear(&ln1_out, w.w_v.slice0_data(h), w.b_v.row(h), d, dh);
                pass.site(HookSite::head(l, HookPoint::AttnV, h), &mut v)?;

                let mut s = vec![0.0f32; n * n];
                gemm_bt(q.data(), k.data(), &mut s, n, dh, n);
                for i in 0..n {
                    for j in 0..n {
                        s[i * n + j] = if j <= i { s[i * n + j] * scale } else { 0.0 };
                    }
                }
                let mut scores = Tensor::new(vec![n, n], s)?;
                pass.site(HookSite::head(l, HookPoint::AttnScores, h), &mut scores)?;

                let mut pattern = scores;
                for i in 0..n {
                    softmax_row_in_place(pattern.row_mut(i), i + 1);
                }
                pattern.check_finite("attention pattern")?;
                let pattern_nat = if record { Some(pattern.clone()) } else { None };
                pass.site(HookSite::head(l, HookPoint::AttnPattern, h), &mut pattern)?;

                let mut zd = vec![0.0f32; n * dh];
                gemm(pattern.data(), v.data(), &mut zd, n, n, dh);
                let mut z = Tensor::new(vec![n, dh], zd)?;
                pass.site(HookSite::head(l, HookPoint::AttnZ, h), &mut z)?;

                let mut contrib = vec![0.0f32; n * d];
                gemm(z.data(), w.w_o.slice0_data(h), &mut contrib, n, dh, d);
                for (a, c) in attn_out.iter_mut().zip(&contrib) {
                    *a += c;
                }
                if record {
                    head_tapes.push(HeadTape {
                        q,
                        k,
                        v,
                        pattern_nat: pattern_nat.unwrap(),
                        pattern,
                    });
                }
            }
            for row in attn_out.chunks_mut(d) {
                for (a, &b) in row.iter_mut().zip(w.b_o.data()) {
                    *a += b;
                }
            }
            let mut attn_out = Tensor::new(vec![n, d], attn_out)?;
            pass.site(HookSite::new(l, HookPoint::AttnOut), &mut attn_out)?;

            let mut resid_mid = resid_pre.add(&attn_out)?;
            pass.site(HookSite::resid_mid(l), &mut resid_mid)?;

            let ln2 = norm_parts(&resid_mid, cfg.ln_eps);
            let ln2_out = norm_affine(&ln2, w.ln2_w.data(), w.ln2_b.data());
            let mut mlp_pre = linear(&ln2_out, w.w_in.data(), w.b_in.data(), d, m);
            pass.site(HookSite::new(l, HookPoint::MlpPre), &mut mlp_pre)?;
            let mut mlp_post = mlp_pre.map(gelu_scalar);
            pass.site(HookSite::new(l, HookPoint::MlpPost), &mut mlp_post)?;
            let mut mlp_out = linear(&mlp_post, w.w_out.data(), w.b_out.data(), m, d);
            pass.site(HookSite::new(l, HookPoint::MlpOut), &mut mlp_out)?;

            let mut resid_post = resid_mid.add(&mlp_out)?;
            pass.site(HookSite::resid_post(l), &mut resid_post)?;
            resid_post.check_finite("residual stream")?;
            x = resid_post;

            if record {
                tape.layers.push(LayerTape {
                    ln1,
                    heads: head_tapes,
                    ln2,
                    mlp_pre,
                });
            }
        }

        let parts = norm_parts(&x, cfg.ln_eps);
        let mut scale_t = Tensor::new(vec![n, 1], parts.scale.clone())?;
        pass.site(HookSite::final_ln_scale(), &mut scale_t)?;
        let used = NormParts {
            centered: parts.centered,
            scale: scale_t.into_data(),
        };
        pass.cache.final_ln_scale = used.scale.clone();
        let last_only = opts.logits == LogitRows::Last;
        let normed = norm_affine(&used, self.lnf_w.data(), self.lnf_b.data());
        let normed = if last_only {
            normed.select_rows(&[n - 1])?
        } else {
            normed
        };
        let mut logits = self.unembed(&normed)?;
        if !last_only {
            pass.site(HookSite::logits(), &mut logits)?;
        } else if opts.capture.contains(&HookSite::logits()) {
            pass.cache.insert(HookSite::logits(), logits.clone());
        }
        logits.check_finite("logits")?;

        if record {
            tape.fin = Some(FinalTape {
                centered: used.centered,
                scale_nat: parts.scale,
                scale: used.scale,
                last_only,
            });
        }
        let out = RunOutput {
            logits,
            cache: pass.cache,
        };
        Ok((out, record.then_some(tape)))
    }

    /// `normed · W_U` for rows of a `[rows, d_model]` tensor.
    pub(super) fn unembed(&self, normed: &Tensor) -> Result<Tensor> {
        let cfg = self.config();
        let (r, d, v) = (normed.rows(), cfg.d_model, cfg.vocab_size);
        let mut out = vec![0.0f32; r * v];
        match self.w_u {
            Some(w_u) => gemm(normed.data(), w_u.data(), &mut out, r, d, v),
            None => gemm_bt(normed.data(), self.w_e.data(), &mut out, r, d, v),
        }
        Tensor::new(vec![r, v], out)
    }
}
