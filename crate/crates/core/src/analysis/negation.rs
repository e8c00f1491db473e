// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use super::median;
use crate::datasets::{PromptInstance, NEGATED};
use crate::directions::Direction;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;
use crate::transformer::{RunOptions, Transformer};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegationStats {
    pub count: usize,
    pub flip_fraction: f32,
    /// Median of `|c_hi − c_lo| / median |c_lo|`.
    pub median_size: f32,
    pub flipped: Vec<bool>,
}

/// Flip statistics of centered projections at a low and a high layer.
pub fn flip_stats(lo: &[f32], hi: &[f32]) -> Result<NegationStats> {
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(Error::Analysis("flip statistics need equal nonempty inputs".into()));
    }
    let flipped: Vec<bool> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (*a > 0.0 && *b < 0.0) || (*a < 0.0 && *b > 0.0))
        .collect();
    let den = median(&lo.iter().map(|v| v.abs()).collect::<Vec<_>>())?;
    if den == 0.0 {
        return Err(Error::Analysis("median low-layer magnitude is zero".into()));
    }
    let sizes: Vec<f32> = lo.iter().zip(hi).map(|(a, b)| (b - a).abs() / den).collect();
    Ok(NegationStats {
        count: lo.len(),
        flip_fraction: flipped.iter().filter(|f| **f).count() as f32 / lo.len() as f32,
        median_size: median(&sizes)?,
        flipped,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum::<f64>() as f32
}

/// Mean projection onto `dir` over every token of a corpus.
pub fn mean_projection(model: &Transformer<'_>, corpus: &[Vec<TokenId>], dir: &Direction) -> Result<f32> {
    let theta = dir.vector().map_err(|e| Error::Analysis(e.to_string()))?;
    let opts = RunOptions::new().capture([dir.site]).last_logits();
    let (mut s, mut n) = (0.0f64, 0usize);
    for out in model.run_batch(corpus, &opts)? {
        let x = out.cache.get(&dir.site)?;
        for r in 0..x.rows() {
            s += dot(x.row(r), &theta) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Analysis("empty corpus".into()));
    }
    Ok((s / n as f64) as f32)
}

/// Projections at each prompt's negated token on `lo` and `hi`, centered by
/// the given corpus means, then [`flip_stats`].
pub fn negation_flip_stats(
    model: &Transformer<'_>,
    prompts: &[PromptInstance],
    lo: &Direction,
    hi: &Direction,
    corpus_means: (f32, f32),
) -> Result<NegationStats> {
    if prompts.is_empty() {
        return Err(Error::Analysis("empty negation fixture".into()));
    }
    let (tl, th) = (
        lo.vector().map_err(|e| Error::Analysis(e.to_string()))?,
        hi.vector().map_err(|e| Error::Analysis(e.to_string()))?,
    );
    let opts = RunOptions::new().capture([lo.site, hi.site]).last_logits();
    let seqs: Vec<Vec<TokenId>> = prompts.iter().map(|p| p.tokens.clone()).collect();
    let outs = model.run_batch(&seqs, &opts)?;
    let mut a = Vec::with_capacity(prompts.len());
    let mut b = Vec::with_capacity(prompts.len());
    for (p, out) in prompts.iter().zip(&outs) {
        let i = p.slot(NEGATED)?;
        a.push(dot(out.cache.get(&lo.site)?.row(i), &tl) - corpus_means.0);
        b.push(dot(out.cache.get(&hi.site)?.row(i), &th) - corpus_means.1);
    }
    flip_stats(&a, &b)
}
