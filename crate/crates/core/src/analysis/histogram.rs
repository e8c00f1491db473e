// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;

use serde::Serialize;

use crate::directions::Direction;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::tokenizer::{TokenId, Tokenizer};
use crate::transformer::{RunOptions, Transformer};

/// Tokens of context per sampled row, ending at the sampled token.
pub const CONTEXT_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin: usize,
    pub doc: usize,
    pub position: usize,
    pub token: String,
    pub context: String,
    pub activation: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramTable {
    /// `bins + 1` edges from the minimum to the maximum activation.
    pub edges: Vec<f32>,
    /// Tokens per bin before sampling.
    pub counts: Vec<usize>,
    pub rows: Vec<HistogramRow>,
}

impl HistogramTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["bin", "doc", "position", "token", "context", "activation"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projects every corpus token onto `dir`, splits the observed range into
/// `bins` equal-width buckets and samples up to `per_bin` tokens from each
/// with a seeded shuffle.
pub fn activation_histogram(
    model: &Transformer<'_>,
    tok: &Tokenizer,
    corpus: &[Vec<TokenId>],
    dir: &Direction,
    bins: usize,
    per_bin: usize,
    seed: u64,
) -> Result<HistogramTable> {
    if bins == 0 {
        return Err(Error::Analysis("need at least one bin".into()));
    }
    let theta = dir.vector().map_err(|e| Error::Analysis(e.to_string()))?;
    let opts = RunOptions::new().capture([dir.site]).last_logits();
    let mut acts: Vec<(usize, usize, f32)> = Vec::new();
    for (d, out) in model.run_batch(corpus, &opts)?.iter().enumerate() {
        let x = out.cache.get(&dir.site)?;
        for i in 0..x.rows() {
            let p: f64 = x.row(i).iter().zip(&theta).map(|(a, b)| *a as f64 * *b as f64).sum();
            acts.push((d, i, p as f32));
        }
    }
    if acts.is_empty() {
        return Err(Error::Analysis("empty corpus".into()));
    }
    let lo = acts.iter().map(|a| a.2).fold(f32::INFINITY, f32::min);
    let hi = acts.iter().map(|a| a.2).fold(f32::NEG_INFINITY, f32::max);
    let width = (hi - lo) as f64;
    let mut edges: Vec<f32> = (0..=bins)
        .map(|i| (lo as f64 + width * i as f64 / bins as f64) as f32)
        .collect();
    edges[0] = lo;
    edges[bins] = hi;
    let bin_of = |v: f32| {
        if width == 0.0 {
            0
        } else {
            (((v - lo) as f64 / width * bins as f64) as usize).min(bins - 1)
        }
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (k, a) in acts.iter().enumerate() {
        members[bin_of(a.2)].push(k);
    }
    let counts = members.iter().map(Vec::len).collect();
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::new();
    for (b, m) in members.iter_mut().enumerate() {
        rng.shuffle(m);
        for &k in m.iter().take(per_bin) {
            let (d, i, v) = acts[k];
            let doc = &corpus[d];
            let start = (i + 1).saturating_sub(CONTEXT_WINDOW);
            rows.push(HistogramRow {
                bin: b,
                doc: d,
                position: i,
                token: tok.decode(&doc[i..=i])?,
                context: tok.decode(&doc[start..=i])?,
                activation: v,
            });
        }
    }
    Ok(HistogramTable { edges, counts, rows })
}
