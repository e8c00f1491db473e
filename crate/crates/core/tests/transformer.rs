// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::sync::Arc;

use common::reference::{RefEdit, RefModel};
use common::{parity_bundle, parity_fixture_bytes, toy_bundle};
use sentlens::fixture::GoldenFixture;
use sentlens::numerics::ops::{norm_affine, norm_parts};
use sentlens::transformer::{
    all_sites, sites_of, Hook, HookPoint, HookSite, Positions, ProjectTarget, RunOptions, Sampler,
};
use sentlens::{SeededRng, Tensor, Tokenizer, Transformer};

const PROMPT: [u32; 8] = [3, 17, 42, 8, 8, 29, 1, 11];
const OTHER: [u32; 8] = [5, 9, 13, 21, 34, 2, 7, 40];

#[test]
fn matches_reference_implementation_fixture() {
    let fx = GoldenFixture::from_bytes(parity_fixture_bytes()).unwrap();
    assert_eq!(fx.prompts.len(), 5);
    let tok = Tokenizer::gpt2().unwrap();
    for p in &fx.prompts {
        assert_eq!(tok.encode(&p.text), p.tokens);
    }
    let bundle = parity_bundle();
    let model = Transformer::new(&bundle).unwrap();
    let rep = fx.compare(&model).unwrap();
    assert!(rep.max_logit_diff < 1e-3, "{rep:?}");
    assert!(rep.max_resid_diff < 1e-4, "{rep:?}");
}

#[test]
fn zero_blocks_reduce_to_embedding_path() {
    let bundle = toy_bundle(1).with_zeroed_blocks();
    let model = Transformer::new(&bundle).unwrap();
    let out = model.forward(&PROMPT, &[]).unwrap();
    let d = bundle.config.d_model;
    let w_e = bundle.get("embed.W_E").unwrap();
    let w_pos = bundle.get("pos.W_pos").unwrap();
    let rows: Vec<Vec<f32>> = PROMPT
        .iter()
        .enumerate()
        .map(|(i, &t)| (0..d).map(|j| w_e.row(t as usize)[j] + w_pos.row(i)[j]).collect())
        .collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let normed = norm_affine(
        &norm_parts(&x, 1e-5),
        bundle.get("ln_f.w").unwrap().data(),
        bundle.get("ln_f.b").unwrap().data(),
    );
    let w_u = bundle.get("unembed.W_U").unwrap();
    let want = sentlens::numerics::matmul(&normed, w_u).unwrap();
    assert!(out.logits.max_abs_diff(&want) < 1e-5);
}

#[test]
fn batch_order_does_not_matter() {
    let bundle = toy_bundle(2);
    let model = Transformer::new(&bundle).unwrap();
    let a = model
        .run_batch(&[PROMPT.to_vec(), OTHER.to_vec()], &RunOptions::new())
        .unwrap();
    let b = model
        .run_batch(&[OTHER.to_vec(), PROMPT.to_vec()], &RunOptions::new())
        .unwrap();
    assert_eq!(a[0].logits, b[1].logits);
    assert_eq!(a[1].logits, b[0].logits);
}

#[test]
fn empty_hooks_are_bitwise_identical() {
    let bundle = toy_bundle(3);
    let model = Transformer::new(&bundle).unwrap();
    let plain = model.forward(&PROMPT, &[]).unwrap();
    let hooked = model.run(&PROMPT, &RunOptions::new().hooks(Vec::new())).unwrap();
    assert_eq!(plain.logits, hooked.logits);
    assert_eq!(plain.logits, model.forward(&PROMPT, &[]).unwrap().logits);
}

#[test]
fn self_patch_and_cross_patch() {
    let bundle = toy_bundle(4);
    let model = Transformer::new(&bundle).unwrap();
    let site = HookSite::resid_pre(0);
    let own = model.forward(&PROMPT, &[site]).unwrap();
    let other = model.forward(&OTHER, &[site]).unwrap();

    let opts = RunOptions::new().hook(Hook::replace(site, Positions::All, own.cache.shared(&site).unwrap()));
    assert_eq!(model.run(&PROMPT, &opts).unwrap().logits, own.logits);

    let opts = RunOptions::new().hook(Hook::replace(site, Positions::All, other.cache.shared(&site).unwrap()));
    let patched = model.run(&PROMPT, &opts).unwrap();
    assert!(patched.logits.max_abs_diff(&other.logits) < 1e-5);
}

#[test]
fn structural_invariants() {
    let bundle = toy_bundle(5);
    let cfg = bundle.config.clone();
    let model = Transformer::new(&bundle).unwrap();
    let out = model.forward(&PROMPT, &all_sites(&cfg)).unwrap();
    let c = &out.cache;
    let n = PROMPT.len();
    for l in 0..cfg.n_layers {
        let pre = c.get(&HookSite::resid_pre(l)).unwrap();
        let mid = c.get(&HookSite::resid_mid(l)).unwrap();
        let post = c.get(&HookSite::resid_post(l)).unwrap();
        let attn = c.get(&HookSite::new(l, HookPoint::AttnOut)).unwrap();
        let mlp = c.get(&HookSite::new(l, HookPoint::MlpOut)).unwrap();
        assert!(pre.add(attn).unwrap().max_abs_diff(mid) < 1e-5);
        assert!(mid.add(mlp).unwrap().max_abs_diff(post) < 1e-5);

        let w_o = bundle.get(&format!("blocks.{l}.attn.W_O")).unwrap();
        let b_o = bundle.get(&format!("blocks.{l}.attn.b_O")).unwrap();
        let mut sum = Tensor::zeros(&[n, cfg.d_model]);
        for row in 0..n {
            sum.row_mut(row).copy_from_slice(b_o.data());
        }
        for h in 0..cfg.n_heads {
            let z = c.get(&HookSite::head(l, HookPoint::AttnZ, h)).unwrap();
            let proj = sentlens::numerics::matmul(z, &w_o.slice0(h).unwrap()).unwrap();
            sum.add_assign(&proj).unwrap();

            let pat = c.get(&HookSite::head(l, HookPoint::AttnPattern, h)).unwrap();
            for i in 0..n {
                let row = pat.row(i);
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
        assert!(sum.max_abs_diff(attn) < 1e-5);
        if l + 1 < cfg.n_layers {
            assert_eq!(post, c.get(&HookSite::resid_pre(l + 1)).unwrap());
        }
    }
    assert_eq!(c.final_ln_scale.len(), n);
    assert_eq!(c.get(&HookSite::logits()).unwrap(), &out.logits);
}

#[test]
fn input_errors() {
    let bundle = toy_bundle(6);
    let model = Transformer::new(&bundle).unwrap();
    assert!(model.forward(&[], &[]).is_err());
    assert!(model.forward(&[50], &[]).is_err());
    assert!(model.forward(&[1; 33], &[]).is_err());
    let bad = RunOptions::new().hook(Hook::add(
        HookSite::resid_pre(0),
        Positions::Indices(vec![40]),
        Arc::new(Tensor::zeros(&[16])),
    ));
    assert!(model.run(&PROMPT, &bad).is_err());
    let bad = RunOptions::new().capture([HookSite::new(0, HookPoint::AttnZ)]);
    assert!(model.run(&PROMPT, &bad).is_err());
}

fn logit_diff_grad(rows: usize, vocab: usize) -> Tensor {
    let mut g = Tensor::zeros(&[rows, vocab]);
    let last = g.row_mut(rows - 1);
    for (p, q) in [(3, 7), (11, 2), (19, 23)] {
        last[p] += 1.0 / 3.0;
        last[q] -= 1.0 / 3.0;
    }
    g
}

fn objective(logits: &[f64], g: &Tensor) -> f64 {
    logits.iter().zip(g.data()).map(|(&a, &b)| a * b as f64).sum()
}

/// Central-difference check of `vjp_to_site` against the `f64` reference
/// forward, on sampled coordinates whose analytic gradient is within a factor
/// 10 of the site's largest entry.
fn fd_check(
    model: &Transformer,
    opts: &RunOptions,
    base: &dyn Fn() -> Vec<RefEdit>,
    site: HookSite,
    rng: &mut SeededRng,
    count: usize,
) -> f64 {
    let n = PROMPT.len();
    let g_logits = logit_diff_grad(n, model.config().vocab_size);
    let grad = model.vjp_to_site(&PROMPT, &g_logits, site, opts).unwrap();
    let shape = model
        .run(&PROMPT, &opts.clone().capture([site]))
        .unwrap()
        .cache
        .get(&site)
        .unwrap()
        .shape()
        .to_vec();
    assert_eq!(grad.shape(), shape.as_slice(), "{site}");
    let gmax = grad.data().iter().fold(0.0f32, |a, &b| a.max(b.abs()));
    assert!(gmax > 0.0, "{site}: zero gradient");
    let candidates: Vec<usize> = (0..grad.len())
        .filter(|&i| grad.data()[i].abs() >= 0.1 * gmax)
        .collect();
    let reference = RefModel::new(model.bundle());
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..count {
        let index = candidates[rng.gen_range(candidates.len() as u64) as usize];
        let eval = |delta: f64| {
            let mut edits = base();
            edits.insert(0, RefEdit::Bump { site, index, delta });
            objective(&reference.logits(&PROMPT, &edits), &g_logits)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let an = grad.data()[index] as f64;
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
    }
    worst
}

#[test]
fn reference_forward_agrees() {
    let bundle = toy_bundle(11);
    let model = Transformer::new(&bundle).unwrap();
    let got = model.forward(&PROMPT, &[]).unwrap().logits;
    let want = RefModel::new(&bundle).logits(&PROMPT, &[]);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

#[test]
fn vjp_trivial_cases() {
    let bundle = toy_bundle(7);
    let model = Transformer::new(&bundle).unwrap();
    let zero = Tensor::zeros(&[PROMPT.len(), 50]);
    let g = model
        .vjp_to_site(&PROMPT, &zero, HookSite::resid_pre(0), &RunOptions::new())
        .unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
    let lg = logit_diff_grad(PROMPT.len(), 50);
    let g = model
        .vjp_to_site(&PROMPT, &lg, HookSite::logits(), &RunOptions::new())
        .unwrap();
    assert_eq!(g, lg);
    let last = RunOptions::new().last_logits();
    let g1 = Tensor::new(vec![1, 50], lg.row(PROMPT.len() - 1).to_vec()).unwrap();
    let a = model.vjp_to_site(&PROMPT, &g1, HookSite::resid_pre(0), &last).unwrap();
    let b = model
        .vjp_to_site(&PROMPT, &lg, HookSite::resid_pre(0), &RunOptions::new())
        .unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn vjp_matches_finite_differences_at_every_point() {
    let bundle = toy_bundle(8);
    let cfg = bundle.config.clone();
    let model = Transformer::new(&bundle).unwrap();
    let mut rng = SeededRng::new(99);
    let opts = RunOptions::new();
    for point in HookPoint::ALL {
        if point == HookPoint::Logits {
            continue;
        }
        for site in sites_of(&cfg, point).into_iter().filter(|s| s.head.unwrap_or(1) == 1) {
            let err = fd_check(&model, &opts, &Vec::new, site, &mut rng, 4);
            assert!(err < 1e-3, "{site}: relative error {err}");
        }
    }
}

#[test]
fn vjp_respects_downstream_hooks() {
    let bundle = toy_bundle(9);
    let model = Transformer::new(&bundle).unwrap();
    let mut rng = SeededRng::new(5);
    let src = model.forward(&OTHER, &[HookSite::resid_post(1)]).unwrap();
    let src_resid = src.cache.get(&HookSite::resid_post(1)).unwrap().clone();
    let basis = sentlens::numerics::orthonormalize_columns(
        &Tensor::new(vec![16, 2], (0..32).map(|i| ((i * 7) % 11) as f32 - 5.0).collect()).unwrap(),
    )
    .unwrap();
    let zeros = Tensor::zeros(&[8, 16]);
    let opts = RunOptions::new()
        .hook(Hook::project(
            HookSite::resid_post(1),
            Positions::Indices(vec![2, 7]),
            Arc::new(basis.clone()),
            ProjectTarget::Source(Arc::new(src_resid.clone())),
        ))
        .hook(Hook::replace(
            HookSite::new(0, HookPoint::AttnOut),
            Positions::Indices(vec![3]),
            Arc::new(zeros.clone()),
        ));
    let base = || {
        vec![
            RefEdit::Project {
                site: HookSite::resid_post(1),
                rows: vec![2, 7],
                basis: basis.clone(),
                source: src_resid.clone(),
            },
            RefEdit::Replace {
                site: HookSite::new(0, HookPoint::AttnOut),
                rows: vec![3],
                source: zeros.clone(),
            },
        ]
    };
    for site in [
        HookSite::resid_pre(0),
        HookSite::new(0, HookPoint::Ln1Out),
        HookSite::resid_mid(1),
    ] {
        let err = fd_check(&model, &opts, &base, site, &mut rng, 6);
        assert!(err < 1e-3, "{site}: relative error {err}");
    }

    let scale = Tensor::new(vec![8, 1], src.cache.final_ln_scale.clone()).unwrap();
    let frozen = RunOptions::new().hook(Hook::replace(
        HookSite::final_ln_scale(),
        Positions::All,
        Arc::new(scale.clone()),
    ));
    let base = || {
        vec![RefEdit::Replace {
            site: HookSite::final_ln_scale(),
            rows: (0..8).collect(),
            source: scale.clone(),
        }]
    };
    let err = fd_check(&model, &frozen, &base, HookSite::resid_pre(1), &mut rng, 6);
    assert!(err < 1e-3, "frozen scale: relative error {err}");
}

#[test]
fn generation_rules() {
    let bundle = toy_bundle(10);
    let model = Transformer::new(&bundle).unwrap();
    let p = &PROMPT[..3];
    assert_eq!(model.generate(p, 0, &Sampler::Greedy, &[]).unwrap(), p);
    let a = model.generate(p, 5, &Sampler::Greedy, &[]).unwrap();
    assert_eq!(a.len(), 8);
    assert_eq!(a, model.generate(p, 5, &Sampler::Greedy, &[]).unwrap());
    let zero = Hook::add(HookSite::resid_pre(0), Positions::All, Arc::new(Tensor::zeros(&[16])));
    assert_eq!(a, model.generate(p, 5, &Sampler::Greedy, &[zero]).unwrap());
    let s = Sampler::TopK {
        k: 5,
        temperature: 1.0,
        seed: 3,
    };
    assert_eq!(
        model.generate(p, 6, &s, &[]).unwrap(),
        model.generate(p, 6, &s, &[]).unwrap()
    );
    assert!(model.generate(p, 40, &Sampler::Greedy, &[]).is_err());
    assert!(model.generate(&[], 1, &Sampler::Greedy, &[]).is_err());
}
