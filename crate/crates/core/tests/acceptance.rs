// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria on GPT-2-small read `$SENTLENS_DATA/gpt2-small.slb`, plus
//! `sst.jsonl`, `corpus/` and `gpt2-small.slg` where needed. Without them
//! those criteria print `FAIL (blocked: ...)`. The process exits nonzero when
//! an evaluated criterion fails, and also on blocked ones when
//! `SENTLENS_STRICT=1`.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use sentlens::analysis::{
    das_dim_sweep, direct_logit_attribution, dla_sites, layer_sweep, mean_projection, negation_flip_stats, FitOptions,
    LayerRow,
};
use sentlens::bundle::ModelBundle;
use sentlens::datasets::{
    load_corpus, load_negation_fixture, load_sst_pairs, toy_movie_review_pairs, PromptPair, Sentiment, Split,
    SstScaffold,
};
use sentlens::directions::{
    collect_activations, cosine, fit_das, fit_kmeans, fit_logistic, fit_mean_diff, fit_pca, DasConfig, Direction,
    LabeledActivations, LogisticConfig, Method,
};
use sentlens::fixture::GoldenFixture;
use sentlens::interventions::{
    activation_patch, directional_ablate, directional_patch, directional_patch_many, freeze_and_patch_values,
    head_direction, par_map, steer_generate, steering_hook, AblateMode, PositionSelector,
};
use sentlens::metrics::{logit_diff_last, summarize, MetricResult};
use sentlens::numerics::ops::orthonormalize_columns;
use sentlens::transformer::{all_sites, sites_of, HookPoint, HookSite, Positions, RunOptions, Sampler};
use sentlens::{SeededRng, TokenId, Tokenizer, Transformer};

use common::{das_fd_check, parity_bundle, parity_fixture_bytes, toy_answers, toy_bundle, toy_pairs};

// Pinned tolerances.
const AGREE_MIN_COS: f32 = 0.7;
const KM_MD_MIN_COS: f32 = 0.999;
const CIRCUIT_DIR_FLIP: f32 = 0.48;
const CIRCUIT_DIR_DROP: f32 = 0.45;
const CIRCUIT_FULL_FLIP: f32 = 0.87;
const CIRCUIT_FULL_DROP: f32 = 0.65;
const CIRCUIT_HEADS: [(usize, usize); 9] = [
    (10, 4),
    (9, 2),
    (10, 1),
    (8, 5),
    (7, 1),
    (7, 5),
    (9, 10),
    (11, 9),
    (6, 4),
];
const CIRCUIT_DAS_LAYER: usize = 6;
const FD_STEP: f64 = 1e-3;
const FD_MAX_REL: f64 = 1e-3;
const FD_MIN_COORDS: usize = 30;
const PARITY_LOGITS: f32 = 1e-3;
const NEGATION_LAYERS: (usize, usize) = (1, 10);
const NEGATION_MIN: [(Method, f32); 4] = [
    (Method::KMeans, 0.80),
    (Method::MeanDiff, 0.74),
    (Method::Logistic, 0.85),
    (Method::Pca, 0.63),
];
const DIM_SWEEP: [usize; 4] = [1, 2, 4, 8];
const IDENTITY_TOL: f32 = 1e-5;
const DLA_TOL: f32 = 1e-3;
const RANDOM_MARGIN: f32 = 0.20;
const RANDOM_ABLATION_MAX: f32 = 0.01;
const ABLATION_RATIO: f32 = 5.0;
const SEED: u64 = 0;

type Check = Result<String, String>;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

struct Report {
    failed: usize,
    blocked: usize,
}

impl Report {
    fn line(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let timing = match limit {
            Some(l) => format!("{:.1}s of {}s", took.as_secs_f64(), l.as_secs()),
            None => format!("{:.1}s", took.as_secs_f64()),
        };
        let outcome = match (outcome, limit) {
            (Outcome::Pass(d), Some(l)) if took > l => Outcome::Fail(format!("{d}; over the time limit")),
            (o, _) => o,
        };
        match outcome {
            Outcome::Pass(d) => println!("PASS {name}: {d} [{timing}]"),
            Outcome::Fail(d) => {
                self.failed += 1;
                println!("FAIL {name}: {d} [{timing}]");
            }
            Outcome::Blocked(d) => {
                self.blocked += 1;
                println!("FAIL {name}: (blocked: {d})");
            }
        }
    }
}

fn judge(c: Check) -> Outcome {
    match c {
        Ok(d) => Outcome::Pass(d),
        Err(d) => Outcome::Fail(d),
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

/// GPT-2-small and the optional data files next to it.
struct Gpt2 {
    dir: PathBuf,
    bundle: ModelBundle,
}

impl Gpt2 {
    fn load() -> Result<Self, String> {
        let dir = std::env::var_os("SENTLENS_DATA")
            .map(PathBuf::from)
            .ok_or("SENTLENS_DATA is not set; GPT-2-small weights are required")?;
        let path = dir.join("gpt2-small.slb");
        if !path.exists() {
            return Err(format!("{} not found", path.display()));
        }
        let bundle = ModelBundle::read(&path).map_err(e)?;
        let c = &bundle.config;
        let shape = (
            c.n_layers,
            c.d_model,
            c.n_heads,
            c.d_head,
            c.d_mlp,
            c.n_ctx,
            c.vocab_size,
        );
        if shape != (12, 768, 12, 64, 3072, 1024, 50257) {
            return Err(format!("{} is not GPT-2-small: {shape:?}", path.display()));
        }
        Ok(Self { dir, bundle })
    }

    fn file(&self, name: &str) -> Result<PathBuf, String> {
        let p = self.dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(format!("{} not found", p.display()))
        }
    }
}

struct Shared {
    tok: Tokenizer,
    gpt2: Result<Gpt2, String>,
    /// Layer sweep rows on SST, reused by the random-baseline comparison.
    sweep: Option<(Vec<LayerRow>, Vec<PromptPair>)>,
}

fn toy_split(tok: &Tokenizer, split: Split) -> Result<Vec<PromptPair>, String> {
    toy_movie_review_pairs(split, tok).map_err(e)
}

fn flatten(pairs: &[PromptPair]) -> Vec<sentlens::datasets::PromptInstance> {
    pairs
        .iter()
        .flat_map(|p| [p.clean.clone(), p.corrupted.clone()])
        .collect()
}

fn direction_agreement(s: &Shared, g: &Gpt2) -> Check {
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let train = toy_split(&s.tok, Split::Train)?;
    let data = collect_activations(&model, &flatten(&train), HookSite::resid_post(0), "ADJ").map_err(e)?;
    let (md, _) = fit_mean_diff(&data).map_err(e)?;
    let (km, km_rep) = fit_kmeans(&data, SEED).map_err(e)?;
    let (pca, _) = fit_pca(&data).map_err(e)?;
    let (lr, _) = fit_logistic(&data, &LogisticConfig::default()).map_err(e)?;
    let dirs = [("MD", &md), ("KM", &km), ("PCA", &pca), ("LR", &lr)];
    let mut worst = (1.0f32, "", "");
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = cosine(&dirs[i].1.vector().map_err(e)?, &dirs[j].1.vector().map_err(e)?).abs();
            if c < worst.0 {
                worst = (c, dirs[i].0, dirs[j].0);
            }
        }
    }
    let km_md = cosine(&km.vector().map_err(e)?, &md.vector().map_err(e)?).abs();
    let matches = km_rep
        .assignments
        .as_deref()
        .is_some_and(|a| assignment_matches(a, &data));
    let mut detail = format!(
        "min pairwise |cos| {:.4} ({}-{}), |cos(KM,MD)| {km_md:.5}, KM assignment matches labels: {matches}",
        worst.0, worst.1, worst.2
    );
    let ok = worst.0 >= AGREE_MIN_COS && (!matches || km_md >= KM_MD_MIN_COS);
    if !ok {
        detail.push_str(&format!(
            "; need >= {AGREE_MIN_COS} and KM-MD >= {KM_MD_MIN_COS} when matched"
        ));
        return Err(detail);
    }
    Ok(detail)
}

fn assignment_matches(assign: &[usize], data: &LabeledActivations) -> bool {
    let pos = |l: &Sentiment| usize::from(*l == Sentiment::Positive);
    let same = assign.iter().zip(&data.labels).all(|(a, l)| *a == pos(l));
    let flipped = assign.iter().zip(&data.labels).all(|(a, l)| *a != pos(l));
    same || flipped
}

fn circuit_patching(s: &Shared, g: &Gpt2) -> Check {
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let train = toy_split(&s.tok, Split::Train)?;
    let test = toy_split(&s.tok, Split::Test)?;
    let site = HookSite::resid_post(CIRCUIT_DAS_LAYER);
    let das = DasConfig {
        seed: SEED,
        ..DasConfig::default()
    };
    let (dir, _) = fit_das(&model, &train, site, &["ADJ", "VRB"], 1, &das).map_err(e)?;
    let head_dirs = CIRCUIT_HEADS
        .iter()
        .map(|&(l, h)| head_direction(&g.bundle, &dir, l, h))
        .collect::<sentlens::Result<Vec<_>>>()
        .map_err(e)?;
    let sites: Vec<HookSite> = head_dirs.iter().map(|d| d.site).collect();
    let sel = PositionSelector::Slots(vec!["ADJ".into(), "VRB".into()]);
    let directional = par_map(&test, |p| {
        directional_patch_many(&model, p, &head_dirs, &sel.resolve(&p.corrupted, None)?)
    })
    .map_err(e)?;
    let full = par_map(&test, |p| {
        activation_patch(&model, p, &sites, &sel.resolve(&p.corrupted, None)?)
    })
    .map_err(e)?;
    let (ds, fs) = (summarize(&directional).map_err(e)?, summarize(&full).map_err(e)?);
    let (dd, fd) = (ds.drop_of_sums.unwrap_or(0.0), fs.drop_of_sums.unwrap_or(0.0));
    let detail = format!(
        "directional flip {:.1}% drop {:.1}% (need {:.0}%/{:.0}%), full flip {:.1}% drop {:.1}% (need {:.0}%/{:.0}%) over {} pairs",
        100.0 * ds.flip.rate,
        100.0 * dd,
        100.0 * CIRCUIT_DIR_FLIP,
        100.0 * CIRCUIT_DIR_DROP,
        100.0 * fs.flip.rate,
        100.0 * fd,
        100.0 * CIRCUIT_FULL_FLIP,
        100.0 * CIRCUIT_FULL_DROP,
        test.len()
    );
    let ok = ds.flip.rate >= CIRCUIT_DIR_FLIP
        && dd >= CIRCUIT_DIR_DROP
        && fs.flip.rate >= CIRCUIT_FULL_FLIP
        && fd >= CIRCUIT_FULL_DROP;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn das_gradient() -> Check {
    let bundle = toy_bundle(21);
    let model = Transformer::new(&bundle).map_err(e)?;
    let pairs = toy_pairs(8, 7, 4);
    let mut rng = SeededRng::new(17);
    let sites = [
        (HookSite::resid_pre(0), 16),
        (HookSite::resid_mid(0), 16),
        (HookSite::resid_post(0), 16),
        (HookSite::head(0, HookPoint::AttnZ, 2), 4),
        (HookSite::new(0, HookPoint::MlpPost), 64),
        (HookSite::resid_pre(1), 16),
    ];
    let per_site = FD_MIN_COORDS.div_ceil(sites.len());
    let mut worst = (0.0f64, String::new());
    for (s, width) in sites {
        let b = orthonormalize_columns(&Direction::random(width, 2, s, 8).map_err(e)?.basis).map_err(e)?;
        let err = das_fd_check(&model, &pairs, s, &b, FD_STEP, per_site, &mut rng);
        if err > worst.0 {
            worst = (err, s.to_string());
        }
    }
    let detail = format!(
        "max relative error {:.2e} at {} over {} coordinates at {} sites (attention, MLP, LN paths)",
        worst.0,
        worst.1,
        per_site * sites.len(),
        sites.len()
    );
    if worst.0 < FD_MAX_REL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(serde::Deserialize)]
struct GoldenIds {
    text: String,
    ids: Vec<TokenId>,
}

fn parity(s: &Shared) -> Check {
    let fx = GoldenFixture::from_bytes(parity_fixture_bytes()).map_err(e)?;
    let bundle = parity_bundle();
    let rep = fx.compare(&Transformer::new(&bundle).map_err(e)?).map_err(e)?;
    let golden: Vec<GoldenIds> = include_str!("fixtures/tokenizer_golden.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).map_err(e))
        .collect::<Result<_, _>>()?;
    let mismatched = golden.iter().filter(|g| s.tok.encode(&g.text) != g.ids).count();
    let mut detail = format!(
        "toy-bundle fixture: {} prompts, max logit diff {:.2e}; tokenizer: {}/{} strings exact",
        rep.prompts,
        rep.max_logit_diff,
        golden.len() - mismatched,
        golden.len()
    );
    let mut ok = rep.prompts == 5 && rep.max_logit_diff < PARITY_LOGITS && golden.len() == 50 && mismatched == 0;
    match s
        .gpt2
        .as_ref()
        .map_err(String::clone)
        .and_then(|g| g.file("gpt2-small.slg").map(|p| (g, p)))
    {
        Ok((g, p)) => {
            let fx = GoldenFixture::read(p).map_err(e)?;
            let rep = fx.compare(&Transformer::new(&g.bundle).map_err(e)?).map_err(e)?;
            detail.push_str(&format!(
                "; GPT-2-small fixture: {} prompts, max logit diff {:.2e}",
                rep.prompts, rep.max_logit_diff
            ));
            ok &= rep.prompts == 5 && rep.max_logit_diff < PARITY_LOGITS;
        }
        Err(why) => detail.push_str(&format!("; GPT-2-small fixture not checked ({why})")),
    }
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Reference corpus for centering projections: `corpus/` when present,
/// otherwise every toy training prompt.
fn centering_corpus(s: &Shared, g: &Gpt2) -> Result<(Vec<Vec<TokenId>>, &'static str), String> {
    match g.file("corpus") {
        Ok(dir) => Ok((load_corpus(dir, &s.tok, 20_000, 1024, SEED).map_err(e)?, "corpus/")),
        Err(_) => Ok((
            flatten(&toy_split(&s.tok, Split::Train)?)
                .into_iter()
                .map(|p| p.tokens)
                .collect(),
            "toy training prompts",
        )),
    }
}

fn negation(s: &Shared, g: &Gpt2) -> Check {
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let train = toy_split(&s.tok, Split::Train)?;
    let prompts = load_negation_fixture(&s.tok).map_err(e)?;
    let (corpus, source) = centering_corpus(s, g)?;
    let opts = FitOptions {
        seed: SEED,
        ..FitOptions::default()
    };
    let (lo, hi) = (
        HookSite::resid_post(NEGATION_LAYERS.0),
        HookSite::resid_post(NEGATION_LAYERS.1),
    );
    let mut parts = Vec::new();
    let mut ok = true;
    for (method, min) in NEGATION_MIN {
        let (dl, _) = sentlens::analysis::fit_direction(&model, &train, lo, method, &opts).map_err(e)?;
        let (dh, _) = sentlens::analysis::fit_direction(&model, &train, hi, method, &opts).map_err(e)?;
        let means = (
            mean_projection(&model, &corpus, &dl).map_err(e)?,
            mean_projection(&model, &corpus, &dh).map_err(e)?,
        );
        let st = negation_flip_stats(&model, &prompts, &dl, &dh, means).map_err(e)?;
        ok &= st.flip_fraction >= min;
        parts.push(format!("{method} {:.2} (need {min:.2})", st.flip_fraction));
    }
    let detail = format!(
        "{} over {} prompts, centered on {source}",
        parts.join(", "),
        prompts.len()
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn generalization(s: &mut Shared) -> Outcome {
    let g = match &s.gpt2 {
        Ok(g) => g,
        Err(why) => return Outcome::Blocked(why.clone()),
    };
    let sst = match g.file("sst.jsonl") {
        Ok(p) => p,
        Err(why) => return Outcome::Blocked(why),
    };
    let run = || -> Result<(String, bool, Vec<LayerRow>, Vec<PromptPair>), String> {
        let model = Transformer::new(&g.bundle).map_err(e)?;
        let train = toy_split(&s.tok, Split::Train)?;
        let test = toy_split(&s.tok, Split::Test)?;
        let eval = load_sst_pairs(sst, &s.tok, SstScaffold::ReviewSentiment)
            .map_err(e)?
            .pairs;
        let sites = sites_of(model.config(), HookPoint::ResidPost);
        let opts = FitOptions {
            seed: SEED,
            ..FitOptions::default()
        };
        let rows = layer_sweep(
            &model,
            &train,
            &eval,
            Method::Das,
            &sites,
            &opts,
            &PositionSelector::All,
        )
        .map_err(e)?;
        let best = best_layer(&rows);
        let interior = best > 0 && best + 1 < rows.len();
        let dims = das_dim_sweep(
            &model,
            &train,
            &test,
            HookSite::resid_post(CIRCUIT_DAS_LAYER),
            &["ADJ"],
            &DIM_SWEEP,
            &opts.das,
        )
        .map_err(e)?;
        let (first, last) = (&dims[0], &dims[dims.len() - 1]);
        let val_gain = last.val_objective - first.val_objective;
        let train_gain = last.train_objective - first.train_objective;
        let detail = format!(
            "SST flip rate peaks at layer {best} of {} (rates {}); dim {}->{}: val gain {val_gain:.4} vs train gain {train_gain:.4}",
            rows.len(),
            rows.iter().map(|r| format!("{:.2}", r.summary.flip.rate)).collect::<Vec<_>>().join(" "),
            first.dim,
            last.dim
        );
        Ok((detail, interior && val_gain < train_gain, rows, eval))
    };
    match run() {
        Ok((d, ok, rows, eval)) => {
            s.sweep = Some((rows, eval));
            if ok {
                Outcome::Pass(d)
            } else {
                Outcome::Fail(d)
            }
        }
        Err(d) => Outcome::Fail(d),
    }
}

/// Layer with the highest flip rate; the first on ties.
fn best_layer(rows: &[LayerRow]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.summary.flip.rate > rows[best].summary.flip.rate {
            best = i;
        }
    }
    best
}

fn self_pair(p: &PromptPair) -> PromptPair {
    let mut corrupted = p.clean.clone();
    corrupted.label = p.clean.label.opposite();
    PromptPair::new(p.clean.clone(), corrupted, p.answers.clone()).expect("self pair")
}

fn identities() -> Check {
    let bundle = toy_bundle(3);
    let model = Transformer::new(&bundle).map_err(e)?;
    let answers = toy_answers();
    let pair = self_pair(&toy_pairs(1, 6, 4)[0]);
    let tokens = pair.corrupted.tokens.clone();
    let base = model.run(&tokens, &RunOptions::new().last_logits()).map_err(e)?.logits;
    let base_ld = logit_diff_last(&base, &answers).map_err(e)?;
    let mut worst: Vec<(&str, f32)> = Vec::new();

    let mut w = 0.0f32;
    for site in all_sites(model.config()) {
        if site.point == HookPoint::Logits {
            continue;
        }
        let r = activation_patch(&model, &pair, &[site], &Positions::All).map_err(e)?;
        w = w.max((r.patched_logit_diff - base_ld).abs());
    }
    worst.push(("self-patch", w));

    let dir = Direction::random(16, 1, HookSite::resid_mid(1), 5).map_err(e)?;
    let steered = model
        .run(
            &tokens,
            &RunOptions::new()
                .hook(steering_hook(&dir, 0.0).map_err(e)?)
                .last_logits(),
        )
        .map_err(e)?
        .logits;
    let plain = model.generate(&tokens[..3], 4, &Sampler::Greedy, &[]).map_err(e)?;
    let gen = steer_generate(&model, &tokens[..3], &dir, 0.0, 4, &Sampler::Greedy).map_err(e)?;
    worst.push((
        "zero steering",
        steered.max_abs_diff(&base) + if gen == plain { 0.0 } else { f32::INFINITY },
    ));

    let mut ortho = toy_bundle(8);
    for name in ["embed.W_E", "pos.W_pos"] {
        let t = ortho.tensors.get_mut(name).ok_or("missing embedding")?;
        let d = t.cols();
        t.data_mut().iter_mut().step_by(d).for_each(|v| *v = 0.0);
    }
    let om = Transformer::new(&ortho).map_err(e)?;
    let mut e0 = vec![0.0; 16];
    e0[0] = 1.0;
    let d0 = Direction::from_vector(&e0, HookSite::resid_pre(0), Method::Random).map_err(e)?;
    let r = directional_ablate(
        &om,
        &tokens,
        &answers,
        &d0,
        &[],
        &Positions::All,
        AblateMode::ZeroProjection,
        None,
    )
    .map_err(e)?;
    worst.push(("orthogonal ablation", (r.patched_logit_diff - r.clean_logit_diff).abs()));

    let all: Vec<usize> = (0..tokens.len()).collect();
    let r = freeze_and_patch_values(&model, &pair, &all).map_err(e)?;
    worst.push(("self-freeze", (r.patched_logit_diff - base_ld).abs()));

    let empty = model
        .run(&tokens, &RunOptions::new().hooks(vec![]).last_logits())
        .map_err(e)?
        .logits;
    let fwd = model.forward(&tokens, &[]).map_err(e)?.logits;
    let last = fwd.row(fwd.rows() - 1);
    let empty_diff = empty
        .row(empty.rows() - 1)
        .iter()
        .zip(last)
        .fold(0.0f32, |a, (x, y)| a.max((x - y).abs()));
    worst.push(("empty hooks", empty_diff));

    let mut dla = 0.0f32;
    for b in [toy_bundle(3), parity_bundle()] {
        let m = Transformer::new(&b).map_err(e)?;
        for p in toy_pairs(4, 7, 9) {
            let out = m.forward(&p.clean.tokens, &dla_sites(m.config())).map_err(e)?;
            let ld = logit_diff_last(&out.logits, &answers).map_err(e)?;
            let total: f32 = direct_logit_attribution(&m, &out.cache, &answers)
                .map_err(e)?
                .iter()
                .map(|r| r.contribution)
                .sum();
            dla = dla.max((total - ld).abs());
        }
    }
    let detail = format!(
        "{}; DLA completeness {dla:.2e} (tolerances {IDENTITY_TOL:.0e} / {DLA_TOL:.0e})",
        worst
            .iter()
            .map(|(n, v)| format!("{n} {v:.2e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if worst.iter().all(|(_, v)| *v <= IDENTITY_TOL) && dla <= DLA_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_baseline(s: &Shared, g: &Gpt2) -> Check {
    let (rows, eval) = s.sweep.as_ref().ok_or("needs the layer sweep on SST pairs")?;
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let best = best_layer(rows);
    let site = rows[best].site;
    let random = Direction::random(g.bundle.config.d_model, 1, site, SEED).map_err(e)?;
    let results = par_map(eval, |p| directional_patch(&model, p, &random, &Positions::All)).map_err(e)?;
    let rr = summarize(&results).map_err(e)?.flip.rate;
    let dr = rows[best].summary.flip.rate;
    let detail = format!(
        "at {site}: DAS flip {:.1}% vs random {:.1}% (need margin {:.0} points)",
        100.0 * dr,
        100.0 * rr,
        100.0 * RANDOM_MARGIN
    );
    if dr - rr >= RANDOM_MARGIN {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn freeze_ordering(s: &Shared, g: &Gpt2) -> Check {
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let test = toy_split(&s.tok, Split::Test)?;
    let effect = |slots: &[&str]| -> Result<f32, String> {
        let results: Vec<MetricResult> = par_map(&test, |p| {
            let pos = slots
                .iter()
                .map(|s| p.corrupted.slot(s))
                .collect::<sentlens::Result<Vec<_>>>()?;
            freeze_and_patch_values(&model, p, &pos)
        })
        .map_err(e)?;
        Ok(results
            .iter()
            .map(|r| (r.patched_logit_diff - r.corrupted_logit_diff).abs())
            .sum::<f32>()
            / results.len() as f32)
    };
    let full = effect(&["ADJ", "VRB"])?;
    let adj = effect(&["ADJ"])?;
    let vrb = effect(&["VRB"])?;
    let detail = format!("mean |effect|: ADJ+VRB {full:.4}, ADJ {adj:.4}, VRB {vrb:.4}");
    if full >= adj && full >= vrb {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_contrast(s: &Shared, g: &Gpt2) -> Check {
    let (rows, eval) = s.sweep.as_ref().ok_or("needs the layer sweep on SST pairs")?;
    let model = Transformer::new(&g.bundle).map_err(e)?;
    let train = toy_split(&s.tok, Split::Train)?;
    let site = rows[best_layer(rows)].site;
    let das = DasConfig {
        seed: SEED,
        ..DasConfig::default()
    };
    let (sentiment, _) = fit_das(&model, &train, site, &["ADJ"], 1, &das).map_err(e)?;
    let random = Direction::random(g.bundle.config.d_model, 1, site, SEED).map_err(e)?;
    let layers = sites_of(model.config(), HookPoint::ResidPost);
    let prompts = flatten(eval);
    let answers = &eval[0].answers;
    let mean_change = |d: &Direction| -> Result<f32, String> {
        let results = par_map(&prompts, |p| {
            directional_ablate(
                &model,
                &p.tokens,
                answers,
                d,
                &layers,
                &Positions::All,
                AblateMode::ZeroProjection,
                None,
            )
        })
        .map_err(e)?;
        let changes: Vec<f32> = results.iter().filter_map(|r| r.change.map(f32::abs)).collect();
        Ok(changes.iter().sum::<f32>() / changes.len().max(1) as f32)
    };
    let (rc, sc) = (mean_change(&random)?, mean_change(&sentiment)?);
    let detail = format!(
        "mean |change| random {:.2}% (need < {:.0}%), sentiment {:.2}% (need >= {ABLATION_RATIO}x random) at every resid_post",
        100.0 * rc,
        100.0 * RANDOM_ABLATION_MAX,
        100.0 * sc
    );
    if rc < RANDOM_ABLATION_MAX && sc >= ABLATION_RATIO * rc {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn with_gpt2(s: &Shared, f: impl FnOnce(&Shared, &Gpt2) -> Check) -> Outcome {
    match &s.gpt2 {
        Ok(g) => judge(f(s, g)),
        Err(why) => Outcome::Blocked(why.clone()),
    }
}

fn main() {
    let tok = match Tokenizer::gpt2() {
        Ok(t) => t,
        Err(err) => {
            println!("FAIL setup: {err}");
            std::process::exit(1);
        }
    };
    let mut s = Shared {
        tok,
        gpt2: Gpt2::load(),
        sweep: None,
    };
    let mut r = Report { failed: 0, blocked: 0 };
    let min = |m: u64| Some(Duration::from_secs(60 * m));

    r.line("direction agreement", min(2), || with_gpt2(&s, direction_agreement));
    r.line("circuit directional patching", min(10), || {
        with_gpt2(&s, circuit_patching)
    });
    r.line("DAS gradient", min(1), || judge(das_gradient()));
    r.line("parity", min(1), || judge(parity(&s)));
    r.line("negation flips", min(2), || with_gpt2(&s, negation));
    r.line("generalization shape", None, || generalization(&mut s));
    r.line("intervention identities", None, || judge(identities()));
    r.line("substitute (a) DAS beats random direction", None, || {
        if s.sweep.is_none() && s.gpt2.is_ok() {
            return Outcome::Blocked("layer sweep on SST pairs did not run".into());
        }
        with_gpt2(&s, random_baseline)
    });
    r.line("substitute (b) freeze ordering", None, || {
        with_gpt2(&s, freeze_ordering)
    });
    r.line("substitute (c) ablation contrast", None, || {
        if s.sweep.is_none() && s.gpt2.is_ok() {
            return Outcome::Blocked("layer sweep on SST pairs did not run".into());
        }
        with_gpt2(&s, ablation_contrast)
    });

    println!("acceptance: {} failed, {} blocked", r.failed, r.blocked);
    let strict = std::env::var("SENTLENS_STRICT").is_ok_and(|v| v == "1");
    if r.failed > 0 || (strict && r.blocked > 0) {
        std::process::exit(1);
    }
}
