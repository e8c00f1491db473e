// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::datasets::{PromptInstance, PromptPair};
use crate::directions::{
    collect_activations, das_objective, fit_das, fit_kmeans, fit_logistic, fit_mean_diff, fit_pca, DasConfig,
    DasProblem, Direction, FitReport, LabeledActivations, LogisticConfig, Method,
};
use crate::error::{Error, Result};
use crate::interventions::{activation_patch, directional_patch, par_map, PositionSelector};
use crate::metrics::{summarize, Summary};
use crate::transformer::{sites_of, HookPoint, HookSite, Transformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Slots whose activations train the direction.
    pub slots: Vec<String>,
    pub das: DasConfig,
    pub das_dim: usize,
    pub logistic: LogisticConfig,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            slots: vec!["ADJ".into()],
            das: DasConfig::default(),
            das_dim: 1,
            logistic: LogisticConfig::default(),
            seed: 0,
        }
    }
}

/// Fits one direction at `site` from clean and corrupted prompts of the
/// training pairs (DAS uses the pairs directly).
pub fn fit_direction(
    model: &Transformer<'_>,
    train: &[PromptPair],
    site: HookSite,
    method: Method,
    opts: &FitOptions,
) -> Result<(Direction, FitReport)> {
    if train.is_empty() {
        return Err(Error::Analysis("no training pairs".into()));
    }
    if opts.slots.is_empty() {
        return Err(Error::Analysis("no training slots".into()));
    }
    let slots: Vec<&str> = opts.slots.iter().map(String::as_str).collect();
    if method == Method::Das {
        return fit_das(model, train, site, &slots, opts.das_dim, &opts.das);
    }
    if method == Method::Random {
        let d = model.run(
            &train[0].clean.tokens,
            &crate::transformer::RunOptions::new().capture([site]),
        )?;
        let width = d.cache.get(&site)?.cols();
        let dir = Direction::random(width, 1, site, opts.seed)?;
        return Ok((
            dir,
            FitReport {
                seed: Some(opts.seed),
                ..FitReport::default()
            },
        ));
    }
    let prompts: Vec<PromptInstance> = train
        .iter()
        .flat_map(|p| [p.clean.clone(), p.corrupted.clone()])
        .collect();
    let parts = slots
        .iter()
        .map(|s| collect_activations(model, &prompts, site, s))
        .collect::<Result<Vec<_>>>()?;
    let data = LabeledActivations::concat(&parts)?;
    match method {
        Method::MeanDiff => fit_mean_diff(&data),
        Method::KMeans => fit_kmeans(&data, opts.seed),
        Method::Pca => fit_pca(&data),
        Method::Logistic => fit_logistic(&data, &opts.logistic),
        Method::Das | Method::Random => unreachable!(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerRow {
    pub site: HookSite,
    pub summary: Summary,
    pub fit: FitReport,
}

/// Fits a direction per site on `train` and directionally patches `eval`
/// at the positions `patch` selects.
pub fn layer_sweep(
    model: &Transformer<'_>,
    train: &[PromptPair],
    eval: &[PromptPair],
    method: Method,
    sites: &[HookSite],
    opts: &FitOptions,
    patch: &PositionSelector,
) -> Result<Vec<LayerRow>> {
    if eval.is_empty() {
        return Err(Error::Analysis("no evaluation pairs".into()));
    }
    sites
        .iter()
        .map(|&site| {
            let (dir, fit) = fit_direction(model, train, site, method, opts)?;
            let results = par_map(eval, |p| {
                let pos = patch.resolve(&p.corrupted, None)?;
                directional_patch(model, p, &dir, &pos)
            })?;
            Ok(LayerRow {
                site,
                summary: summarize(&results)?,
                fit,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimRow {
    pub dim: usize,
    pub train_objective: f64,
    pub val_objective: f64,
}

/// DAS at each subspace dimension, scored on the training and held-out
/// pairs.
pub fn das_dim_sweep(
    model: &Transformer<'_>,
    train: &[PromptPair],
    val: &[PromptPair],
    site: HookSite,
    slots: &[&str],
    dims: &[usize],
    cfg: &DasConfig,
) -> Result<Vec<DimRow>> {
    let vp = DasProblem::new(model, val, site, slots)?;
    let tp = DasProblem::new(model, train, site, slots)?;
    dims.iter()
        .map(|&k| {
            let (dir, _) = fit_das(model, train, site, slots, k, cfg)?;
            Ok(DimRow {
                dim: k,
                train_objective: das_objective(&tp, &dir.basis)?,
                val_objective: das_objective(&vp, &dir.basis)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadDamage {
    pub layer: usize,
    pub head: usize,
    /// `Σ sign(b)(b − p) / Σ|b|` over clean baselines `b`.
    pub damage: f32,
}

/// Runs each clean prompt with one head's output taken from its corrupted
/// prompt at the selected positions; returns heads whose `|damage|` reaches
/// `threshold`, largest first.
pub fn head_attribution_sweep(
    model: &Transformer<'_>,
    pairs: &[PromptPair],
    positions: &PositionSelector,
    threshold: f32,
) -> Result<Vec<HeadDamage>> {
    if pairs.is_empty() {
        return Err(Error::Analysis("no pairs".into()));
    }
    let swapped: Vec<PromptPair> = pairs.iter().map(PromptPair::swapped).collect();
    let mut out = Vec::new();
    for site in sites_of(model.config(), HookPoint::AttnZ) {
        let results = par_map(&swapped, |p| {
            let pos = positions.resolve(&p.corrupted, None)?;
            activation_patch(model, p, &[site], &pos)
        })?;
        let damage = summarize(&results)?
            .drop_of_sums
            .ok_or_else(|| Error::Analysis("every clean logit difference is zero".into()))?;
        if damage.abs() >= threshold {
            out.push(HeadDamage {
                layer: site.layer,
                head: site.head.unwrap_or(0),
                damage,
            });
        }
    }
    out.sort_by(|a, b| b.damage.abs().total_cmp(&a.damage.abs()));
    Ok(out)
}
