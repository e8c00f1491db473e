// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::{AblateMode, SiteMeans, TokenFilter};
use crate::bundle::ModelBundle;
use crate::datasets::{AnswerSpec, PromptPair};
use crate::directions::Direction;
use crate::error::{Error, Result};
use crate::metrics::{logit_diff_last, MetricResult};
use crate::numerics::ops::{dot, norm};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;
use crate::transformer::{
    sites_of, Hook, HookAction, HookPoint, HookSite, Positions, ProjectTarget, RunOptions, Sampler, Transformer,
};

/// A path-patching sender: a site and the rows taken from the clean run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sender {
    pub site: HookSite,
    pub positions: Positions,
}

impl Sender {
    pub fn new(site: HookSite, positions: Positions) -> Self {
        Self { site, positions }
    }
}

fn check_sites(model: &Transformer<'_>, sites: &[HookSite]) -> Result<()> {
    let c = model.config();
    sites.iter().try_for_each(|s| s.check(c.n_layers, c.n_heads))
}

fn ld(model: &Transformer<'_>, tokens: &[TokenId], opts: RunOptions, answers: &AnswerSpec) -> Result<f32> {
    logit_diff_last(&model.run(tokens, &opts.last_logits())?.logits, answers)
}

fn check_pair(pair: &PromptPair) -> Result<()> {
    if pair.clean.tokens.len() != pair.corrupted.tokens.len() {
        return Err(Error::Intervention(format!(
            "pair lengths differ: {} vs {}",
            pair.clean.tokens.len(),
            pair.corrupted.tokens.len()
        )));
    }
    Ok(())
}

/// Clean and corrupted runs capturing `sites`, with their logit differences.
fn pair_runs(
    model: &Transformer<'_>,
    pair: &PromptPair,
    sites: impl IntoIterator<Item = HookSite> + Clone,
) -> Result<(crate::transformer::RunOutput, crate::transformer::RunOutput, f32, f32)> {
    check_pair(pair)?;
    let clean = model.run(
        &pair.clean.tokens,
        &RunOptions::new().capture(sites.clone()).last_logits(),
    )?;
    let corrupted = model.run(&pair.corrupted.tokens, &RunOptions::new().capture(sites).last_logits())?;
    let lc = logit_diff_last(&clean.logits, &pair.answers)?;
    let lx = logit_diff_last(&corrupted.logits, &pair.answers)?;
    Ok((clean, corrupted, lc, lx))
}

/// Runs the corrupted prompt with `sites` replaced from the clean run at
/// `positions`.
pub fn activation_patch(
    model: &Transformer<'_>,
    pair: &PromptPair,
    sites: &[HookSite],
    positions: &Positions,
) -> Result<MetricResult> {
    check_sites(model, sites)?;
    let (clean, _, lc, lx) = pair_runs(model, pair, sites.iter().copied())?;
    let hooks = sites
        .iter()
        .map(|s| Ok(Hook::replace(*s, positions.clone(), clean.cache.shared(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let lp = ld(
        model,
        &pair.corrupted.tokens,
        RunOptions::new().hooks(hooks),
        &pair.answers,
    )?;
    Ok(MetricResult::paired(lc, lx, lp))
}

fn check_width(model: &Transformer<'_>, dir: &Direction, site: &HookSite) -> Result<()> {
    check_sites(model, std::slice::from_ref(site))?;
    let c = model.config();
    let width = match site.point {
        HookPoint::ResidPre | HookPoint::ResidMid | HookPoint::ResidPost | HookPoint::AttnOut | HookPoint::MlpOut => {
            c.d_model
        }
        HookPoint::Ln1Out => c.d_model,
        HookPoint::AttnV | HookPoint::AttnZ => c.d_head,
        HookPoint::MlpPre | HookPoint::MlpPost => c.d_mlp,
        _ => {
            return Err(Error::Intervention(format!(
                "{site} has no fixed width for a direction"
            )));
        }
    };
    if dir.d_model() != width {
        return Err(Error::Intervention(format!(
            "direction of width {} does not fit {site} (width {width})",
            dir.d_model()
        )));
    }
    Ok(())
}

/// Corrupted run with the projection onto the direction basis replaced by
/// the clean run's projection at `positions` of the direction's site.
pub fn directional_patch(
    model: &Transformer<'_>,
    pair: &PromptPair,
    dir: &Direction,
    positions: &Positions,
) -> Result<MetricResult> {
    directional_patch_many(model, pair, std::slice::from_ref(dir), positions)
}

/// Directional patching at several sites at once, one direction per site.
pub fn directional_patch_many(
    model: &Transformer<'_>,
    pair: &PromptPair,
    dirs: &[Direction],
    positions: &Positions,
) -> Result<MetricResult> {
    if dirs.is_empty() {
        return Err(Error::Intervention("no directions to patch".into()));
    }
    let sites: BTreeSet<HookSite> = dirs.iter().map(|d| d.site).collect();
    if sites.len() != dirs.len() {
        return Err(Error::Intervention("one direction per site".into()));
    }
    check_sites(model, &sites.iter().copied().collect::<Vec<_>>())?;
    for d in dirs {
        check_width(model, d, &d.site)?;
    }
    let (clean, _, lc, lx) = pair_runs(model, pair, sites.iter().copied())?;
    let hooks = dirs
        .iter()
        .map(|d| {
            Ok(Hook::project(
                d.site,
                positions.clone(),
                Arc::new(d.basis.clone()),
                ProjectTarget::Source(clean.cache.shared(&d.site)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let lp = ld(
        model,
        &pair.corrupted.tokens,
        RunOptions::new().hooks(hooks),
        &pair.answers,
    )?;
    Ok(MetricResult::paired(lc, lx, lp))
}

/// Pulls a one-dimensional residual direction `θ` back to the `attn_z` site
/// of one head as `W_O θ / ‖W_O θ‖`. Patching `z` along it sets `⟨z W_O, θ⟩`
/// to the source value with the smallest change to `z`.
pub fn head_direction(bundle: &ModelBundle, dir: &Direction, layer: usize, head: usize) -> Result<Direction> {
    let c = &bundle.config;
    let site = HookSite::head(layer, HookPoint::AttnZ, head);
    site.check(c.n_layers, c.n_heads)?;
    if dir.d_model() != c.d_model {
        return Err(Error::Intervention(format!(
            "direction width {} is not d_model {}",
            dir.d_model(),
            c.d_model
        )));
    }
    let theta = dir.vector().map_err(|e| Error::Intervention(e.to_string()))?;
    let w_o = bundle.get(&format!("blocks.{layer}.attn.W_O"))?.slice0_data(head);
    let w: Vec<f32> = w_o.chunks(c.d_model).map(|row| dot(row, &theta)).collect();
    if norm(&w) == 0.0 {
        return Err(Error::Intervention(format!(
            "{site}: W_O maps nothing onto the direction"
        )));
    }
    Direction::from_vector(&w, site, dir.method)
}

/// Sets the projection onto the direction basis to zero or to the mean
/// projection at every site in `sites` (the direction's own site when
/// empty).
pub fn directional_ablate(
    model: &Transformer<'_>,
    tokens: &[TokenId],
    answers: &AnswerSpec,
    dir: &Direction,
    sites: &[HookSite],
    positions: &Positions,
    mode: AblateMode,
    means: Option<&SiteMeans>,
) -> Result<MetricResult> {
    let sites: Vec<HookSite> = if sites.is_empty() {
        vec![dir.site]
    } else {
        sites.to_vec()
    };
    let basis = Arc::new(dir.basis.clone());
    let mut hooks = Vec::with_capacity(sites.len());
    for site in &sites {
        check_width(model, dir, site)?;
        let target = match mode {
            AblateMode::ZeroProjection => ProjectTarget::Zero,
            AblateMode::MeanProjection => {
                let means = means.ok_or_else(|| Error::Intervention("mean_projection needs site means".into()))?;
                let m = means.get(site)?;
                if m.len() != dir.d_model() {
                    return Err(Error::Intervention(format!("mean for {site} has width {}", m.len())));
                }
                let coords = (0..dir.k())
                    .map(|j| dir.column(j).iter().zip(m).map(|(a, b)| a * b).sum())
                    .collect();
                ProjectTarget::Constant(coords)
            }
        };
        hooks.push(Hook::project(*site, positions.clone(), basis.clone(), target));
    }
    let base = ld(model, tokens, RunOptions::new(), answers)?;
    let patched = ld(model, tokens, RunOptions::new().hooks(hooks), answers)?;
    Ok(MetricResult::single(base, patched))
}

fn fill_hook(site: HookSite, positions: &Positions, value: Vec<f32>) -> Hook {
    let value = Arc::new(value);
    Hook::new(
        site,
        positions.clone(),
        HookAction::Transform(Arc::new(move |_, row: &mut [f32]| row.copy_from_slice(&value))),
    )
}

/// Replaces whole activation rows by their site means.
pub fn mean_ablate(
    model: &Transformer<'_>,
    tokens: &[TokenId],
    answers: &AnswerSpec,
    sites: &[HookSite],
    positions: &Positions,
    means: &SiteMeans,
) -> Result<MetricResult> {
    check_sites(model, sites)?;
    let probe = model.run(tokens, &RunOptions::new().capture(sites.iter().copied()).last_logits())?;
    let mut hooks = Vec::with_capacity(sites.len());
    for site in sites {
        let m = means.get(site)?;
        let width = probe.cache.get(site)?.cols();
        if m.len() != width {
            return Err(Error::Intervention(format!(
                "mean for {site} has width {}, site has {width}",
                m.len()
            )));
        }
        hooks.push(fill_hook(*site, positions, m.to_vec()));
    }
    let base = logit_diff_last(&probe.logits, answers)?;
    let patched = ld(model, tokens, RunOptions::new().hooks(hooks), answers)?;
    Ok(MetricResult::single(base, patched))
}

/// Replaces whole activation rows by zero.
pub fn zero_ablate(
    model: &Transformer<'_>,
    tokens: &[TokenId],
    answers: &AnswerSpec,
    sites: &[HookSite],
    positions: &Positions,
) -> Result<MetricResult> {
    check_sites(model, sites)?;
    let zero: crate::transformer::RowFn = Arc::new(|_, row: &mut [f32]| row.fill(0.0));
    let hooks = sites
        .iter()
        .map(|s| Hook::new(*s, positions.clone(), HookAction::Transform(zero.clone())));
    let base = ld(model, tokens, RunOptions::new(), answers)?;
    let patched = ld(model, tokens, RunOptions::new().hooks(hooks), answers)?;
    Ok(MetricResult::single(base, patched))
}

/// Mean row per site over a corpus, optionally restricted to a token class.
/// Sums are accumulated per document in `f64` and combined in corpus order.
pub fn compute_site_means(
    model: &Transformer<'_>,
    corpus: &[Vec<TokenId>],
    sites: &[HookSite],
    filter: Option<&TokenFilter>,
) -> Result<SiteMeans> {
    if corpus.is_empty() {
        return Err(Error::Intervention("empty corpus".into()));
    }
    if sites.is_empty() {
        return Err(Error::Intervention("no sites to average".into()));
    }
    check_sites(model, sites)?;
    if let Some(s) = sites
        .iter()
        .find(|s| matches!(s.point, HookPoint::AttnScores | HookPoint::AttnPattern))
    {
        return Err(Error::Intervention(format!("{s} has a length-dependent width")));
    }
    let opts = RunOptions::new().capture(sites.iter().copied()).last_logits();
    let partial: Vec<(Vec<Vec<f64>>, usize)> = corpus
        .par_iter()
        .map(|doc| {
            let out = model.run(doc, &opts)?;
            let rows: Vec<usize> = match filter {
                Some(f) => f.positions(doc),
                None => (0..doc.len()).collect(),
            };
            let sums = sites
                .iter()
                .map(|s| {
                    let t = out.cache.get(s)?;
                    let mut acc = vec![0.0f64; t.cols()];
                    for &r in &rows {
                        for (a, &v) in acc.iter_mut().zip(t.row(r)) {
                            *a += v as f64;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((sums, rows.len()))
        })
        .collect::<Result<_>>()?;
    let count: usize = partial.iter().map(|(_, c)| c).sum();
    if count == 0 {
        let what = filter.map_or("tokens".to_string(), |f| format!("{} tokens", f.class));
        return Err(Error::Intervention(format!("no matching {what} in corpus")));
    }
    let mut means = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (i, site) in sites.iter().enumerate() {
        let mut acc = vec![0.0f64; partial[0].0[i].len()];
        for (sums, _) in &partial {
            for (a, v) in acc.iter_mut().zip(&sums[i]) {
                *a += v;
            }
        }
        means.insert(*site, acc.iter().map(|v| (v / count as f64) as f32).collect());
        counts.insert(*site, count);
    }
    Ok(SiteMeans {
        means,
        counts,
        token_class: filter.map(|f| f.class),
    })
}

/// Corrupted run with every attention pattern frozen to the corrupted run's
/// own patterns and `attn_v` rows at `value_positions` taken from the clean
/// run, in every head of every layer.
pub fn freeze_and_patch_values(
    model: &Transformer<'_>,
    pair: &PromptPair,
    value_positions: &[usize],
) -> Result<MetricResult> {
    let c = model.config();
    let patterns = sites_of(c, HookPoint::AttnPattern);
    let values = sites_of(c, HookPoint::AttnV);
    check_pair(pair)?;
    let clean = model.run(
        &pair.clean.tokens,
        &RunOptions::new().capture(values.clone()).last_logits(),
    )?;
    let corrupted = model.run(
        &pair.corrupted.tokens,
        &RunOptions::new().capture(patterns.clone()).last_logits(),
    )?;
    let lc = logit_diff_last(&clean.logits, &pair.answers)?;
    let lx = logit_diff_last(&corrupted.logits, &pair.answers)?;
    let mut hooks = Vec::with_capacity(patterns.len() + values.len());
    for s in &patterns {
        hooks.push(Hook::replace(*s, Positions::All, corrupted.cache.shared(s)?));
    }
    if !value_positions.is_empty() {
        let pos = Positions::Indices(value_positions.to_vec());
        for s in &values {
            hooks.push(Hook::replace(*s, pos.clone(), clean.cache.shared(s)?));
        }
    }
    let lp = ld(
        model,
        &pair.corrupted.tokens,
        RunOptions::new().hooks(hooks),
        &pair.answers,
    )?;
    Ok(MetricResult::paired(lc, lx, lp))
}

/// Three-pass path patching. Pass 2 runs the corrupted prompt with the
/// senders taken from the clean run and every other head output (`attn_z`)
/// and MLP output frozen to corrupted values, recording the receivers. Pass
/// 3 runs the corrupted prompt with the receivers set from pass 2.
pub fn path_patch(
    model: &Transformer<'_>,
    pair: &PromptPair,
    senders: &[Sender],
    receivers: &[HookSite],
) -> Result<MetricResult> {
    if senders.is_empty() || receivers.is_empty() {
        return Err(Error::Intervention("path patching needs senders and receivers".into()));
    }
    let sender_sites: BTreeSet<HookSite> = senders.iter().map(|s| s.site).collect();
    check_sites(model, &sender_sites.iter().copied().collect::<Vec<_>>())?;
    check_sites(model, receivers)?;
    for r in receivers {
        for s in &sender_sites {
            if r.order_key() <= s.order_key() {
                return Err(Error::Intervention(format!(
                    "receiver {r} is not downstream of sender {s}"
                )));
            }
        }
    }
    let c = model.config();
    let frozen: Vec<HookSite> = sites_of(c, HookPoint::AttnZ)
        .into_iter()
        .chain(sites_of(c, HookPoint::MlpOut))
        .filter(|s| !sender_sites.contains(s))
        .collect();
    let (clean, corrupted, lc, lx) =
        pair_runs(model, pair, sender_sites.iter().copied().chain(frozen.iter().copied()))?;

    let mut hooks = Vec::with_capacity(frozen.len() + senders.len());
    for s in &frozen {
        hooks.push(Hook::replace(*s, Positions::All, corrupted.cache.shared(s)?));
    }
    for s in senders {
        hooks.push(Hook::replace(s.site, s.positions.clone(), clean.cache.shared(&s.site)?));
    }
    let pass2 = model.run(
        &pair.corrupted.tokens,
        &RunOptions::new()
            .hooks(hooks)
            .capture(receivers.iter().copied())
            .last_logits(),
    )?;
    let hooks = receivers
        .iter()
        .map(|r| Ok(Hook::replace(*r, Positions::All, pass2.cache.shared(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let lp = if receivers.iter().any(|r| r.point == HookPoint::Logits) {
        logit_diff_last(&pass2.logits, &pair.answers)?
    } else {
        ld(
            model,
            &pair.corrupted.tokens,
            RunOptions::new().hooks(hooks),
            &pair.answers,
        )?
    };
    Ok(MetricResult::paired(lc, lx, lp))
}

/// Hook adding `coefficient · θ` at every position of the direction's site.
pub fn steering_hook(dir: &Direction, coefficient: f32) -> Result<Hook> {
    if !coefficient.is_finite() {
        return Err(Error::Intervention(format!(
            "steering coefficient {coefficient} is not finite"
        )));
    }
    let theta = dir.vector().map_err(|e| Error::Intervention(e.to_string()))?;
    let delta = Tensor::vector(theta.iter().map(|v| v * coefficient).collect());
    Ok(Hook::add(dir.site, Positions::All, Arc::new(delta)))
}

/// Generates with a steering hook active at every step.
pub fn steer_generate(
    model: &Transformer<'_>,
    prompt: &[TokenId],
    dir: &Direction,
    coefficient: f32,
    n_new: usize,
    sampler: &Sampler,
) -> Result<Vec<TokenId>> {
    check_width(model, dir, &dir.site)?;
    model.generate(prompt, n_new, sampler, &[steering_hook(dir, coefficient)?])
}
