// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each reads its section of the configuration
//! and writes under the run directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;

use sentlens::analysis::{
    activation_histogram, das_dim_sweep, fit_direction, head_attribution_sweep, layer_sweep, scan_projection,
    threshold_classify, LabelLexicon,
};
use sentlens::datasets::{AnswerSpec, PromptInstance, PromptPair};
use sentlens::directions::{cosine_matrix, Direction, FitReport, Method};
use sentlens::interventions::{
    activation_patch, append_log, compute_site_means, directional_ablate, directional_patch, mean_ablate, par_map,
    path_patch, steer_generate, zero_ablate, AblateMode, InterventionKind, InterventionSpec, LogRecord,
    PositionSelector, Sender, TokenFilter,
};
use sentlens::metrics::{summarize, write_results, MetricResult};
use sentlens::transformer::{sites_of, RunOptions};
use sentlens::{Error, HookPoint, HookSite, Result, Transformer};

use crate::config::{AblateKind, SweepKind};
use crate::run::{Context, RunDir};

fn parse_sites(names: &[String]) -> Result<Vec<HookSite>> {
    names
        .iter()
        .map(|s| s.parse().map_err(|e| Error::Config(format!("site {s:?}: {e}"))))
        .collect()
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse().map_err(|e| Error::Config(format!("{e}")))
}

fn write_json<T: Serialize + ?Sized>(path: PathBuf, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

fn csv_writer(path: PathBuf) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Token filter for a token-class selector.
fn token_filter(ctx: &Context, sel: &PositionSelector) -> Result<Option<TokenFilter>> {
    match sel {
        PositionSelector::TokenClass(c) => Ok(Some(c.filter(&ctx.tok)?)),
        _ => Ok(None),
    }
}

fn path_text(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Per-prompt results, the JSONL intervention log and the summary.
fn write_outcome(run: &RunDir, experiment: &str, spec: &InterventionSpec, results: &[MetricResult]) -> Result<()> {
    write_results(
        File::create(run.path("reports", "results.csv"))?,
        &run.id,
        experiment,
        results,
    )?;
    let records = results
        .iter()
        .enumerate()
        .map(|(i, r)| LogRecord::new(&run.id, experiment, i, spec, r))
        .collect::<Result<Vec<_>>>()?;
    let log = run.path("logs", "interventions.jsonl");
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    append_log(log, &records)?;
    write_json(run.path("reports", "summary.json"), &summarize(results)?)
}

#[derive(Serialize)]
struct FitEntry<'a> {
    site: String,
    method: &'static str,
    file: String,
    report: &'a FitReport,
}

pub fn fit(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let pairs = ctx.pairs(&ctx.cfg.dataset)?;
    let f = &ctx.cfg.fit;
    let methods = f.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Error::Config("fit.methods is empty".into()));
    }
    let opts = f.options(ctx.cfg.seed);
    let mut fits = Vec::new();
    for site in parse_sites(&f.sites)? {
        let mut dirs = Vec::with_capacity(methods.len());
        for &m in &methods {
            let (dir, report) = fit_direction(&model, &pairs, site, m, &opts)?;
            let name = format!("{}_{site}.dir", m.code());
            dir.write(run.path("directions", &name))?;
            dirs.push(dir);
            fits.push((site, m, name, report));
        }
        let cos = cosine_matrix(&dirs)?;
        let mut w = csv_writer(run.path("reports", &format!("cosine_{site}.csv")))?;
        let mut header = vec![String::from("method")];
        header.extend(methods.iter().map(|m| m.code().to_string()));
        w.write_record(&header)?;
        for (i, m) in methods.iter().enumerate() {
            let mut row = vec![m.code().to_string()];
            row.extend(cos.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let entries: Vec<FitEntry> = fits
        .iter()
        .map(|(site, m, name, report)| FitEntry {
            site: site.to_string(),
            method: m.code(),
            file: name.clone(),
            report,
        })
        .collect();
    write_json(run.path("reports", "fit.json"), &entries)
}

pub fn patch(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let pairs = ctx.pairs(&ctx.cfg.dataset)?;
    let p = &ctx.cfg.patch;
    let filter = token_filter(ctx, &p.positions)?;
    let (spec, results) = match &p.direction {
        Some(_) => {
            let dir = ctx.direction(&p.direction, "patch")?;
            let mut spec = InterventionSpec::new(
                InterventionKind::DirectionalReplace,
                vec![dir.site],
                p.positions.clone(),
            );
            spec.direction = path_text(&p.direction);
            let results = par_map(&pairs, |pair| {
                directional_patch(
                    &model,
                    pair,
                    &dir,
                    &p.positions.resolve(&pair.corrupted, filter.as_ref())?,
                )
            })?;
            (spec, results)
        }
        None => {
            let sites = parse_sites(&p.sites)?;
            if sites.is_empty() {
                return Err(Error::Config("patch needs a direction or sites".into()));
            }
            let spec = InterventionSpec::new(InterventionKind::Replace, sites.clone(), p.positions.clone());
            let results = par_map(&pairs, |pair| {
                activation_patch(
                    &model,
                    pair,
                    &sites,
                    &p.positions.resolve(&pair.corrupted, filter.as_ref())?,
                )
            })?;
            (spec, results)
        }
    };
    write_outcome(run, "patch", &spec, &results)
}

/// Both prompts of every pair with their answers.
fn single_prompts(pairs: Vec<PromptPair>) -> Vec<(PromptInstance, AnswerSpec)> {
    pairs
        .into_iter()
        .flat_map(|p| [(p.clean, p.answers.clone()), (p.corrupted, p.answers)])
        .collect()
}

pub fn ablate(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let prompts = single_prompts(ctx.pairs(&ctx.cfg.dataset)?);
    let a = &ctx.cfg.ablate;
    let filter = token_filter(ctx, &a.positions)?;
    let sites = parse_sites(&a.sites)?;
    let means = ctx.means(&a.means)?;
    let (spec, results) = match a.kind {
        AblateKind::Directional => {
            let dir = match (&a.direction, &a.random_site) {
                (Some(_), None) => ctx.direction(&a.direction, "ablate")?,
                (None, Some(s)) => {
                    let site: HookSite = s.parse().map_err(|e| Error::Config(format!("random_site: {e}")))?;
                    let probe = model.run(
                        &prompts
                            .first()
                            .ok_or_else(|| Error::Config("no prompts".into()))?
                            .0
                            .tokens,
                        &RunOptions::new().capture([site]).last_logits(),
                    )?;
                    Direction::random(probe.cache.get(&site)?.cols(), 1, site, ctx.cfg.seed)?
                }
                _ => {
                    return Err(Error::Config(
                        "ablate needs exactly one of direction and random_site".into(),
                    ))
                }
            };
            let mut spec = InterventionSpec::new(
                InterventionKind::DirectionalAblate,
                if sites.is_empty() {
                    vec![dir.site]
                } else {
                    sites.clone()
                },
                a.positions.clone(),
            );
            spec.direction = path_text(&a.direction);
            spec.ablate_mode = Some(a.mode);
            if a.mode == AblateMode::MeanProjection && means.is_none() {
                return Err(Error::Config("mean projection ablation needs a means file".into()));
            }
            let results = par_map(&prompts, |(p, ans)| {
                let pos = a.positions.resolve(p, filter.as_ref())?;
                directional_ablate(&model, &p.tokens, ans, &dir, &sites, &pos, a.mode, means.as_ref())
            })?;
            (spec, results)
        }
        AblateKind::Mean => {
            let means = means.ok_or_else(|| Error::Config("mean ablation needs a means file".into()))?;
            let spec = InterventionSpec::new(InterventionKind::MeanAblate, sites.clone(), a.positions.clone());
            let results = par_map(&prompts, |(p, ans)| {
                mean_ablate(
                    &model,
                    &p.tokens,
                    ans,
                    &sites,
                    &a.positions.resolve(p, filter.as_ref())?,
                    &means,
                )
            })?;
            (spec, results)
        }
        AblateKind::Zero => {
            let spec = InterventionSpec::new(InterventionKind::ZeroAblate, sites.clone(), a.positions.clone());
            let results = par_map(&prompts, |(p, ans)| {
                zero_ablate(
                    &model,
                    &p.tokens,
                    ans,
                    &sites,
                    &a.positions.resolve(p, filter.as_ref())?,
                )
            })?;
            (spec, results)
        }
    };
    write_outcome(run, "ablate", &spec, &results)
}

pub fn steer(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let s = &ctx.cfg.steer;
    let dir = ctx.direction(&s.direction, "steer")?;
    let theta = dir.vector()?;
    let prompt = ctx.tok.encode(&s.prompt);
    if prompt.is_empty() {
        return Err(Error::Config("steer.prompt is empty".into()));
    }
    let mut w = csv_writer(run.path("reports", "steer.csv"))?;
    w.write_record(["coefficient", "text", "mean_activation"])?;
    for &c in &s.coefficients {
        let out = steer_generate(&model, &prompt, &dir, c, s.n_new, &s.sampler)?;
        let generated = &out[prompt.len()..];
        let text = ctx.tok.decode(generated)?;
        // Activation of the generated tokens in an unsteered run.
        let mean = if generated.is_empty() {
            0.0
        } else {
            let r = model.run(&out, &RunOptions::new().capture([dir.site]).last_logits())?;
            let x = r.cache.get(&dir.site)?;
            let total: f64 = (prompt.len()..out.len())
                .map(|i| {
                    x.row(i)
                        .iter()
                        .zip(&theta)
                        .map(|(a, b)| *a as f64 * *b as f64)
                        .sum::<f64>()
                })
                .sum();
            total / generated.len() as f64
        };
        w.write_record([format!("{c}"), text, format!("{mean:.6}")])?;
    }
    Ok(w.flush()?)
}

pub fn scan(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let s = &ctx.cfg.scan;
    let dirs = s
        .directions
        .iter()
        .map(|p| Direction::read(ctx.resolve(p)))
        .collect::<Result<Vec<_>>>()?;
    let result = scan_projection(&model, &ctx.tok, &s.text, &dirs)?;
    std::fs::write(run.path("reports", "scan.html"), result.to_html("sentiment scan"))?;
    Ok(())
}

pub fn circuit(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let pairs = ctx.pairs(&ctx.cfg.dataset)?;
    let c = &ctx.cfg.circuit;
    if c.senders.is_empty() {
        let heads = head_attribution_sweep(&model, &pairs, &c.positions, c.threshold)?;
        let mut w = csv_writer(run.path("reports", "heads.csv"))?;
        w.write_record(["layer", "head", "damage"])?;
        for h in &heads {
            w.write_record([h.layer.to_string(), h.head.to_string(), format!("{:.6}", h.damage)])?;
        }
        return Ok(w.flush()?);
    }
    let senders = parse_sites(&c.senders)?;
    let filter = token_filter(ctx, &c.sender_positions)?;
    let receivers = parse_sites(&c.receivers)?;
    let mut spec = InterventionSpec::new(InterventionKind::PathPatch, senders.clone(), c.sender_positions.clone());
    spec.receivers = receivers.clone();
    let results = par_map(&pairs, |pair| {
        let pos = c.sender_positions.resolve(&pair.corrupted, filter.as_ref())?;
        let s: Vec<Sender> = senders.iter().map(|&site| Sender::new(site, pos.clone())).collect();
        path_patch(&model, pair, &s, &receivers)
    })?;
    write_outcome(run, "circuit", &spec, &results)
}

pub fn sweep(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let train = ctx.pairs(&ctx.cfg.dataset)?;
    let eval = match &ctx.cfg.eval_dataset {
        Some(d) => ctx.pairs(d)?,
        None => train.clone(),
    };
    let s = &ctx.cfg.sweep;
    let mut sites = parse_sites(&s.sites)?;
    if sites.is_empty() {
        sites = sites_of(model.config(), HookPoint::ResidPost);
    }
    let opts = ctx.cfg.fit.options(ctx.cfg.seed);
    match s.kind {
        SweepKind::Layer => {
            let rows = layer_sweep(
                &model,
                &train,
                &eval,
                parse_method(&s.method)?,
                &sites,
                &opts,
                &s.positions,
            )?;
            let mut w = csv_writer(run.path("reports", "layer_sweep.csv"))?;
            w.write_record([
                "site",
                "count",
                "mean_patched",
                "mean_recovery",
                "flip_rate",
                "mean_drop",
            ])?;
            let opt = |v: Option<f32>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            for r in &rows {
                let m = &r.summary;
                w.write_record([
                    r.site.to_string(),
                    m.count.to_string(),
                    format!("{:.6}", m.mean_patched),
                    opt(m.mean_recovery),
                    format!("{:.6}", m.flip.rate),
                    opt(m.mean_drop),
                ])?;
            }
            w.flush()?;
            write_json(run.path("reports", "layer_sweep.json"), &rows)
        }
        SweepKind::DasDim => {
            let slots: Vec<&str> = opts.slots.iter().map(String::as_str).collect();
            let rows = das_dim_sweep(&model, &train, &eval, sites[0], &slots, &s.dims, &opts.das)?;
            let mut w = csv_writer(run.path("reports", "das_dims.csv"))?;
            w.write_record(["dim", "train_objective", "val_objective"])?;
            for r in &rows {
                w.write_record([
                    r.dim.to_string(),
                    format!("{:.6}", r.train_objective),
                    format!("{:.6}", r.val_objective),
                ])?;
            }
            Ok(w.flush()?)
        }
    }
}

pub fn means(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let docs = ctx.docs(&ctx.cfg.dataset, model.config().n_ctx)?;
    let m = &ctx.cfg.means;
    let mut sites = parse_sites(&m.sites)?;
    if sites.is_empty() {
        sites = sites_of(model.config(), HookPoint::ResidPost);
    }
    let filter = m.token_class.map(|c| c.filter(&ctx.tok)).transpose()?;
    compute_site_means(&model, &docs, &sites, filter.as_ref())?.write(run.path("reports", "means.json"))
}

pub fn histogram(ctx: &Context, run: &RunDir) -> Result<()> {
    let bundle = ctx.bundle()?;
    let model = Transformer::new(&bundle)?;
    let h = &ctx.cfg.histogram;
    let dir = ctx.direction(&h.direction, "histogram")?;
    let docs = ctx.docs(&ctx.cfg.dataset, model.config().n_ctx)?;
    let table = activation_histogram(&model, &ctx.tok, &docs, &dir, h.bins, h.per_bin, ctx.cfg.seed)?;
    table.write_csv(File::create(run.path("reports", "histogram.csv"))?)?;
    if let Some(p) = &h.labels {
        let labels = if p.as_os_str() == "builtin" {
            LabelLexicon::fixture()?
        } else {
            LabelLexicon::read(ctx.resolve(p))?
        };
        let samples: Vec<(String, f32)> = table.rows.iter().map(|r| (r.token.clone(), r.activation)).collect();
        write_json(
            run.path("reports", "threshold.json"),
            &threshold_classify(&samples, &labels, h.quantile)?,
        )?;
    }
    Ok(())
}
