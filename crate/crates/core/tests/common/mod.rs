// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

pub mod reference;

use sentlens::bundle::{ModelBundle, ModelConfig};

pub const PARITY_SEED: u64 = 20240901;

pub fn toy_config() -> ModelConfig {
    ModelConfig::toy(2, 16, 4, 50, 32)
}

pub fn toy_bundle(seed: u64) -> ModelBundle {
    ModelBundle::random(toy_config(), false, seed).unwrap()
}

/// Configuration reproduced by `tools/parity_fixture.py`.
pub fn parity_bundle() -> ModelBundle {
    let mut cfg = ModelConfig::toy(2, 16, 4, 50257, 64);
    cfg.d_mlp = 64;
    ModelBundle::random(cfg, true, PARITY_SEED).unwrap()
}

pub fn parity_fixture_bytes() -> &'static [u8] {
    include_bytes!("../fixtures/toy_parity.slg")
}

use std::collections::BTreeMap;

use reference::{RefEdit, RefModel};
use sentlens::datasets::{AnswerSpec, PromptInstance, PromptPair, Sentiment};
use sentlens::directions::{das_objective_and_grad, DasProblem};
use sentlens::transformer::{HookSite, RunOptions, Transformer};
use sentlens::{SeededRng, Tensor};

pub fn toy_answers() -> AnswerSpec {
    AnswerSpec::new(vec![3, 11], vec![7, 2]).unwrap()
}

fn instance(tokens: Vec<u32>, adj: usize, label: Sentiment) -> PromptInstance {
    let mut slots = BTreeMap::new();
    slots.insert("ADJ".to_string(), adj);
    slots.insert("END".to_string(), tokens.len() - 1);
    PromptInstance {
        text: format!("{tokens:?}"),
        tokens,
        slots,
        label,
    }
}

/// Random token pairs over the toy vocabulary differing only at `ADJ`
/// (index 2); clean labels alternate.
pub fn toy_pairs(count: usize, len: usize, seed: u64) -> Vec<PromptPair> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|i| {
            let base: Vec<u32> = (0..len).map(|_| rng.gen_range(50) as u32).collect();
            let mut other = base.clone();
            other[2] = (base[2] + 1 + rng.gen_range(49) as u32) % 50;
            let label = if i % 2 == 0 {
                Sentiment::Positive
            } else {
                Sentiment::Negative
            };
            PromptPair::new(
                instance(base, 2, label),
                instance(other, 2, label.opposite()),
                toy_answers(),
            )
            .unwrap()
        })
        .collect()
}

/// Largest relative error between the analytic DAS gradient and central
/// differences (step `h`) of the `f64` reference objective, over `count`
/// basis coordinates drawn from those with at least a tenth of the largest
/// gradient magnitude.
pub fn das_fd_check(
    model: &Transformer,
    pairs: &[PromptPair],
    site: HookSite,
    basis: &Tensor,
    h: f64,
    count: usize,
    rng: &mut SeededRng,
) -> f64 {
    let problem = DasProblem::new(model, pairs, site, &["ADJ"]).unwrap();
    let (_, grad) = das_objective_and_grad(&problem, basis).unwrap();
    let opts = RunOptions::new().capture([site]);
    let clean: Vec<Tensor> = pairs
        .iter()
        .map(|p| {
            model
                .run(&p.clean.tokens, &opts)
                .unwrap()
                .cache
                .get(&site)
                .unwrap()
                .clone()
        })
        .collect();
    let reference = RefModel::new(model.bundle());
    let vocab = model.config().vocab_size;
    let objective = |b: &Tensor| -> f64 {
        let mut total = 0.0;
        for (p, src) in pairs.iter().zip(&clean) {
            let rows = vec![p.clean.slot("ADJ").unwrap()];
            let edits = [RefEdit::Project {
                site,
                rows,
                basis: b.clone(),
                source: src.clone(),
            }];
            let logits = reference.logits(&p.corrupted.tokens, &edits);
            let last = &logits[(p.corrupted.tokens.len() - 1) * vocab..];
            let a = &p.answers;
            let ld: f64 = a
                .positive_ids
                .iter()
                .zip(&a.negative_ids)
                .map(|(&x, &y)| last[x as usize] - last[y as usize])
                .sum::<f64>()
                / a.len() as f64;
            total += p.clean.label.sign() as f64 * ld;
        }
        total / pairs.len() as f64
    };
    let gmax = grad.data().iter().fold(0.0f32, |a, &b| a.max(b.abs()));
    assert!(gmax > 0.0, "{site}: zero DAS gradient");
    let candidates: Vec<usize> = (0..grad.len())
        .filter(|&i| grad.data()[i].abs() >= 0.1 * gmax)
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..count {
        let idx = candidates[rng.gen_range(candidates.len() as u64) as usize];
        let bump = |delta: f64| {
            let mut b = basis.clone();
            b.data_mut()[idx] = (b.data()[idx] as f64 + delta) as f32;
            let actual = b.data()[idx] as f64 - basis.data()[idx] as f64;
            (objective(&b), actual)
        };
        let (fp, dp) = bump(h);
        let (fm, dm) = bump(-h);
        let fd = (fp - fm) / (dp - dm);
        let an = grad.data()[idx] as f64;
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
    }
    worst
}
