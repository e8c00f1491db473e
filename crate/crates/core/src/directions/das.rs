// SPDX-License-Identifier: MIT OR Apache-2.0

//! Distributed alignment search: gradient ascent on the directional-patching
//! objective over an orthonormal basis.
//!
//! For a basis `B` each corrupted prompt is run with
//! `x ← x + B Bᵀ (x_clean − x)` at the fitting site and slot positions, and
//! scored by the logit difference toward the clean prompt's label. The
//! objective is the mean score over pairs.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{orient, Direction, FitReport, LabeledActivations, Method};
use crate::datasets::{AnswerSpec, PromptPair};
use crate::error::{Error, Result};
use crate::numerics::ops::orthonormalize_columns;
use crate::numerics::{SeededRng, Tensor};
use crate::tokenizer::TokenId;
use crate::transformer::{Hook, HookPoint, HookSite, Positions, ProjectTarget, RunOptions, Transformer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DasConfig {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DasConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 250,
            seed: 0,
        }
    }
}

struct Item {
    tokens: Vec<TokenId>,
    clean: Arc<Tensor>,
    corrupted: Tensor,
    positions: Vec<usize>,
    answers: AnswerSpec,
    sign: f32,
}

/// Cached clean and corrupted activations for repeated objective
/// evaluation.
pub struct DasProblem<'m> {
    model: &'m Transformer<'m>,
    site: HookSite,
    /// Layer to resume from when the site is a residual stream.
    resume: Option<usize>,
    items: Vec<Item>,
}

impl<'m> DasProblem<'m> {
    pub fn new(model: &'m Transformer<'m>, pairs: &[PromptPair], site: HookSite, slots: &[&str]) -> Result<Self> {
        let cfg = model.config();
        site.check(cfg.n_layers, cfg.n_heads)?;
        if pairs.is_empty() || slots.is_empty() {
            return Err(Error::Fit("DAS needs pairs and slots".into()));
        }
        let resume = match site.point {
            HookPoint::ResidPre => Some(site.layer),
            HookPoint::ResidPost if site.layer + 1 < cfg.n_layers => Some(site.layer + 1),
            _ => None,
        };
        let opts = RunOptions::new().capture([site]).last_logits();
        let items = pairs
            .par_iter()
            .map(|p| {
                let mut positions: Vec<usize> = slots.iter().map(|s| p.clean.slot(s)).collect::<Result<_>>()?;
                positions.sort_unstable();
                positions.dedup();
                let clean = model.run(&p.clean.tokens, &opts)?.cache.get(&site)?.clone();
                let corrupted = model.run(&p.corrupted.tokens, &opts)?.cache.get(&site)?.clone();
                Ok(Item {
                    tokens: p.corrupted.tokens.clone(),
                    clean: Arc::new(clean),
                    corrupted,
                    positions,
                    answers: p.answers.clone(),
                    sign: p.clean.label.sign(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            site,
            resume,
            items,
        })
    }

    /// Width of the activation at the site.
    pub fn width(&self) -> usize {
        self.items[0].corrupted.cols()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Clean and corrupted slot activations, labeled, for orientation.
    fn labeled(&self, pairs: &[PromptPair]) -> Result<LabeledActivations> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (it, p) in self.items.iter().zip(pairs) {
            for &r in &it.positions {
                rows.push(it.clean.row(r).to_vec());
                labels.push(p.clean.label);
                rows.push(it.corrupted.row(r).to_vec());
                labels.push(p.corrupted.label);
            }
        }
        LabeledActivations::new(Tensor::from_rows(&rows)?, labels, self.site, "DAS")
    }

    fn check_basis(&self, basis: &Tensor) -> Result<()> {
        if basis.rank() != 2 || basis.rows() != self.width() {
            return Err(Error::Fit(format!(
                "basis {:?} does not fit site width {}",
                basis.shape(),
                self.width()
            )));
        }
        Ok(())
    }

    fn hook(&self, it: &Item, basis: &Arc<Tensor>) -> Hook {
        Hook::project(
            self.site,
            Positions::Indices(it.positions.clone()),
            basis.clone(),
            ProjectTarget::Source(it.clean.clone()),
        )
    }

    /// Run options and the site whose gradient equals the gradient at the
    /// patched value.
    fn plan(&self, it: &Item, basis: &Arc<Tensor>) -> Result<(RunOptions, HookSite)> {
        let hook = self.hook(it, basis);
        Ok(match self.resume {
            Some(layer) => {
                let mut x = it.corrupted.clone();
                hook.apply(&mut x)?;
                (
                    RunOptions::new().last_logits().start_at(layer, Arc::new(x)),
                    HookSite::resid_pre(layer),
                )
            }
            None => (RunOptions::new().last_logits().hook(hook), self.site),
        })
    }
}

fn score(logits: &Tensor, answers: &AnswerSpec, sign: f32) -> f64 {
    let row = logits.row(logits.rows() - 1);
    let s: f64 = answers
        .positive_ids
        .iter()
        .zip(&answers.negative_ids)
        .map(|(&p, &n)| row[p as usize] as f64 - row[n as usize] as f64)
        .sum();
    sign as f64 * s / answers.len() as f64
}

/// Mean signed logit difference of the corrupted prompts patched along
/// `basis`.
pub fn das_objective(problem: &DasProblem, basis: &Tensor) -> Result<f64> {
    problem.check_basis(basis)?;
    let basis = Arc::new(basis.clone());
    let scores = problem
        .items
        .par_iter()
        .map(|it| {
            let (opts, _) = problem.plan(it, &basis)?;
            let out = problem.model.run(&it.tokens, &opts)?;
            Ok(score(&out.logits, &it.answers, it.sign))
        })
        .collect::<Result<Vec<f64>>>()?;
    let obj = scores.iter().sum::<f64>() / scores.len() as f64;
    if !obj.is_finite() {
        return Err(Error::Fit("non-finite DAS objective".into()));
    }
    Ok(obj)
}

/// Objective and its gradient with respect to every entry of `basis`. The
/// basis is not assumed orthonormal.
pub fn das_objective_and_grad(problem: &DasProblem, basis: &Tensor) -> Result<(f64, Tensor)> {
    problem.check_basis(basis)?;
    let (d, k) = (basis.rows(), basis.cols());
    let shared = Arc::new(basis.clone());
    let parts = problem
        .items
        .par_iter()
        .map(|it| {
            let (opts, target) = problem.plan(it, &shared)?;
            let (out, g) = problem.model.forward_and_vjp(&it.tokens, &opts, target, |logits| {
                let mut g = Tensor::zeros(logits.shape());
                let last = logits.rows() - 1;
                let w = it.sign / it.answers.len() as f32;
                let row = g.row_mut(last);
                for (&p, &n) in it.answers.positive_ids.iter().zip(&it.answers.negative_ids) {
                    row[p as usize] += w;
                    row[n as usize] -= w;
                }
                Ok(g)
            })?;
            let mut grad = vec![0.0f64; d * k];
            for &r in &it.positions {
                let gr = g.row(r);
                let delta: Vec<f64> = it
                    .clean
                    .row(r)
                    .iter()
                    .zip(it.corrupted.row(r))
                    .map(|(&s, &x)| s as f64 - x as f64)
                    .collect();
                let mut gb = vec![0.0f64; k];
                let mut db = vec![0.0f64; k];
                for i in 0..d {
                    let brow = basis.row(i);
                    for j in 0..k {
                        gb[j] += gr[i] as f64 * brow[j] as f64;
                        db[j] += delta[i] * brow[j] as f64;
                    }
                }
                for i in 0..d {
                    for j in 0..k {
                        grad[i * k + j] += delta[i] * gb[j] + gr[i] as f64 * db[j];
                    }
                }
            }
            Ok((score(&out.logits, &it.answers, it.sign), grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut obj = 0.0;
    let mut grad = vec![0.0f64; d * k];
    for (s, g) in &parts {
        obj += s;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    obj /= n;
    if !obj.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite DAS objective".into()));
    }
    let grad = Tensor::new(vec![d, k], grad.into_iter().map(|v| (v / n) as f32).collect())?;
    Ok((obj, grad))
}

/// Gradient ascent from a seeded random orthonormal basis, re-orthonormalized
/// after every step. A step that lowers the objective is rejected and
/// retried at half the step size; the step size returns to `lr` after an
/// accepted step. The trace holds the objective at every accepted basis.
pub fn fit_das(
    model: &Transformer,
    pairs: &[PromptPair],
    site: HookSite,
    slots: &[&str],
    k: usize,
    cfg: &DasConfig,
) -> Result<(Direction, FitReport)> {
    let problem = DasProblem::new(model, pairs, site, slots)?;
    let d = problem.width();
    if k == 0 || k >= d {
        return Err(Error::Fit(format!("DAS dimension {k} must be in 1..{d}")));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let init = Tensor::new(vec![d, k], (0..d * k).map(|_| rng.normal() as f32).collect())?;
    let mut basis = orthonormalize_columns(&init)?;
    let (mut obj, mut grad) = das_objective_and_grad(&problem, &basis)?;
    let mut trace = vec![obj];
    let mut lr = cfg.lr;
    for _ in 0..cfg.steps {
        let step = grad.scale(lr as f32);
        let cand = match orthonormalize_columns(&basis.add(&step)?) {
            Ok(c) => c,
            Err(_) => {
                lr *= 0.5;
                continue;
            }
        };
        let (o2, g2) = das_objective_and_grad(&problem, &cand)?;
        if o2 >= obj {
            basis = cand;
            obj = o2;
            grad = g2;
            trace.push(obj);
            lr = cfg.lr;
        } else {
            lr *= 0.5;
        }
    }
    let dir = Direction::new(basis, site, Method::Das)?;
    let labeled = problem.labeled(pairs)?;
    let dir = if labeled.require_both().is_ok() {
        orient(&dir, &labeled)?
    } else {
        dir
    };
    let report = FitReport {
        method: Some(Method::Das),
        iterations: cfg.steps,
        seed: Some(cfg.seed),
        converged: true,
        trace,
        ..Default::default()
    };
    Ok((dir, report))
}
