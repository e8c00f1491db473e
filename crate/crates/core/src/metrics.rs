// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logit-difference scoring shared by every experiment.
//!
//! A [`MetricResult`] compares an intervened run against the unmodified run
//! of the same prompt (the baseline). For paired interventions the run
//! prompt is the corrupted prompt, so the baseline is
//! `corrupted_logit_diff`; for single-prompt interventions clean and
//! corrupted both hold the baseline and `paired` is false.

use std::io::Write;

use serde::Serialize;

use crate::datasets::AnswerSpec;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;

/// Index-paired mean `logit(p_i) − logit(n_i)` over one logit row.
pub fn logit_diff(row: &[f32], answers: &AnswerSpec) -> Result<f32> {
    if answers.is_empty() || answers.positive_ids.len() != answers.negative_ids.len() {
        return Err(Error::Metric("answer sets must be nonempty and equal length".into()));
    }
    let get = |t: TokenId| {
        row.get(t as usize)
            .map(|&v| v as f64)
            .ok_or_else(|| Error::Metric(format!("answer id {t} outside {} logits", row.len())))
    };
    let mut s = 0.0f64;
    for (&p, &n) in answers.positive_ids.iter().zip(&answers.negative_ids) {
        s += get(p)? - get(n)?;
    }
    Ok((s / answers.len() as f64) as f32)
}

/// Logit difference at the last row of a `[rows, vocab]` tensor.
pub fn logit_diff_last(logits: &Tensor, answers: &AnswerSpec) -> Result<f32> {
    if logits.rank() != 2 || logits.rows() == 0 {
        return Err(Error::Metric(format!("bad logits shape {:?}", logits.shape())));
    }
    logit_diff(logits.row(logits.rows() - 1), answers)
}

fn sign(x: f32) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricResult {
    pub clean_logit_diff: f32,
    pub corrupted_logit_diff: f32,
    pub patched_logit_diff: f32,
    /// Sign of the run prompt's logit difference inverted.
    pub flip: bool,
    /// `(patched − corrupted)/(clean − corrupted)`; paired results only.
    pub recovery: Option<f32>,
    /// `(patched − baseline)/|baseline|`.
    pub change: Option<f32>,
    pub paired: bool,
}

impl MetricResult {
    /// Corrupted prompt run with an intervention sourced from the clean one.
    pub fn paired(clean: f32, corrupted: f32, patched: f32) -> Self {
        let den = clean - corrupted;
        Self {
            clean_logit_diff: clean,
            corrupted_logit_diff: corrupted,
            patched_logit_diff: patched,
            flip: Self::flipped(corrupted, patched),
            recovery: (den != 0.0).then(|| (patched - corrupted) / den),
            change: Self::rel(corrupted, patched),
            paired: true,
        }
    }

    /// One prompt run with and without an intervention.
    pub fn single(baseline: f32, patched: f32) -> Self {
        Self {
            clean_logit_diff: baseline,
            corrupted_logit_diff: baseline,
            patched_logit_diff: patched,
            flip: Self::flipped(baseline, patched),
            recovery: None,
            change: Self::rel(baseline, patched),
            paired: false,
        }
    }

    fn flipped(base: f32, patched: f32) -> bool {
        base != 0.0 && sign(patched) != sign(base)
    }

    fn rel(base: f32, patched: f32) -> Option<f32> {
        (base != 0.0).then(|| (patched - base) / base.abs())
    }

    pub fn baseline(&self) -> f32 {
        self.corrupted_logit_diff
    }

    /// `1 − patched/baseline`: the fraction of the baseline logit difference
    /// removed.
    pub fn drop(&self) -> Option<f32> {
        let b = self.baseline();
        (b != 0.0).then(|| 1.0 - self.patched_logit_diff / b)
    }

    /// Whether the result counts toward flip rates: a nonzero baseline and,
    /// for pairs, clean and corrupted predictions that disagree.
    pub fn counts_for_flip(&self) -> bool {
        self.baseline() != 0.0 && (!self.paired || sign(self.clean_logit_diff) != sign(self.corrupted_logit_diff))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipRate {
    pub rate: f32,
    pub counted: usize,
    pub excluded: usize,
}

/// Fraction of counted results whose prediction flipped. Pairs on which the
/// model fails (clean and corrupted agree in sign) are excluded.
pub fn logit_flip_rate(results: &[MetricResult]) -> Result<FlipRate> {
    if results.is_empty() {
        return Err(Error::Metric("no results".into()));
    }
    let counted: Vec<&MetricResult> = results.iter().filter(|r| r.counts_for_flip()).collect();
    let flips = counted.iter().filter(|r| r.flip).count();
    Ok(FlipRate {
        rate: if counted.is_empty() {
            0.0
        } else {
            flips as f32 / counted.len() as f32
        },
        counted: counted.len(),
        excluded: results.len() - counted.len(),
    })
}

/// Fraction of rows where every correct logit exceeds every incorrect one.
pub fn accuracy(rows: &[&[f32]], correct: &[TokenId], incorrect: &[TokenId]) -> Result<f32> {
    if rows.is_empty() || correct.is_empty() || incorrect.is_empty() {
        return Err(Error::Metric("accuracy needs rows and answer sets".into()));
    }
    let mut hits = 0;
    for row in rows {
        let at = |t: TokenId| {
            row.get(t as usize)
                .copied()
                .ok_or_else(|| Error::Metric(format!("answer id {t} outside {} logits", row.len())))
        };
        let lo = correct
            .iter()
            .map(|&t| at(t))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f32::INFINITY, f32::min);
        let hi = incorrect
            .iter()
            .map(|&t| at(t))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f32::NEG_INFINITY, f32::max);
        if lo > hi {
            hits += 1;
        }
    }
    Ok(hits as f32 / rows.len() as f32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean_clean: f32,
    pub mean_corrupted: f32,
    pub mean_patched: f32,
    /// Mean over results with a defined recovery.
    pub mean_recovery: Option<f32>,
    /// Mean of per-result changes.
    pub mean_change: Option<f32>,
    /// `(mean patched − mean baseline)/|mean baseline|`.
    pub change_of_means: Option<f32>,
    /// Mean of per-result drops.
    pub mean_drop: Option<f32>,
    /// `Σ sign(b)(b − p) / Σ|b|` over baselines `b` and patched `p`.
    pub drop_of_sums: Option<f32>,
    pub flip: FlipRate,
}

fn mean(v: impl Iterator<Item = f32>) -> Option<f32> {
    let (s, n) = v.fold((0.0f64, 0usize), |(s, n), x| (s + x as f64, n + 1));
    (n > 0).then(|| (s / n as f64) as f32)
}

pub fn summarize(results: &[MetricResult]) -> Result<Summary> {
    let flip = logit_flip_rate(results)?;
    let mean_corrupted = mean(results.iter().map(|r| r.corrupted_logit_diff)).unwrap_or(0.0);
    let mean_patched = mean(results.iter().map(|r| r.patched_logit_diff)).unwrap_or(0.0);
    let abs_sum: f64 = results.iter().map(|r| r.baseline().abs() as f64).sum();
    let moved: f64 = results
        .iter()
        .map(|r| r.baseline().signum() as f64 * (r.baseline() - r.patched_logit_diff) as f64)
        .sum();
    Ok(Summary {
        count: results.len(),
        mean_clean: mean(results.iter().map(|r| r.clean_logit_diff)).unwrap_or(0.0),
        mean_corrupted,
        mean_patched,
        mean_recovery: mean(results.iter().filter_map(|r| r.recovery)),
        mean_change: mean(results.iter().filter_map(|r| r.change)),
        change_of_means: (mean_corrupted != 0.0).then(|| (mean_patched - mean_corrupted) / mean_corrupted.abs()),
        mean_drop: mean(results.iter().filter_map(MetricResult::drop)),
        drop_of_sums: (abs_sum > 0.0).then(|| (moved / abs_sum) as f32),
        flip,
    })
}

#[derive(Serialize)]
struct ResultRow<'a> {
    run_id: &'a str,
    experiment: &'a str,
    pair_id: usize,
    clean_logit_diff: f32,
    corrupted_logit_diff: f32,
    patched_logit_diff: f32,
    flip: bool,
}

pub const RESULT_COLUMNS: [&str; 7] = [
    "run_id",
    "experiment",
    "pair_id",
    "clean_logit_diff",
    "corrupted_logit_diff",
    "patched_logit_diff",
    "flip",
];

/// Writes the results log: header row then one row per result in order;
/// `pair_id` is the index in `results`.
pub fn write_results<W: Write>(out: W, run_id: &str, experiment: &str, results: &[MetricResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, r) in results.iter().enumerate() {
        w.serialize(ResultRow {
            run_id,
            experiment,
            pair_id: i,
            clean_logit_diff: r.clean_logit_diff,
            corrupted_logit_diff: r.corrupted_logit_diff,
            patched_logit_diff: r.patched_logit_diff,
            flip: r.flip,
        })?;
    }
    if results.is_empty() {
        w.write_record(RESULT_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}
