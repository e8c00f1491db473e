// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{Hook, RunOptions, Transformer};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::tokenizer::TokenId;

/// Next-token selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Highest logit; ties go to the lowest id.
    Greedy,
    /// Sample from the `k` highest logits after dividing by `temperature`.
    TopK { k: usize, temperature: f32, seed: u64 },
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Transformer<'_> {
    /// Appends `n_new` tokens. The full prefix is recomputed at every step so
    /// the hooks see (and modify) every position each time.
    pub fn generate(
        &self,
        prompt: &[TokenId],
        n_new: usize,
        sampler: &Sampler,
        hooks: &[Hook],
    ) -> Result<Vec<TokenId>> {
        if prompt.is_empty() {
            return Err(Error::Model("generation needs a nonempty prompt".into()));
        }
        let n_ctx = self.config().n_ctx;
        if prompt.len() + n_new > n_ctx {
            return Err(Error::Model(format!(
                "context overflow: {} + {n_new} tokens > n_ctx {n_ctx}",
                prompt.len()
            )));
        }
        let mut rng = match sampler {
            Sampler::TopK { k, temperature, seed } => {
                if *k == 0 || !(temperature.is_finite() && *temperature > 0.0) {
                    return Err(Error::Model("top-k needs k > 0 and a positive temperature".into()));
                }
                Some(SeededRng::new(*seed))
            }
            Sampler::Greedy => None,
        };
        let opts = RunOptions::new().hooks(hooks.iter().cloned()).last_logits();
        let mut tokens = prompt.to_vec();
        for _ in 0..n_new {
            let out = self.run(&tokens, &opts)?;
            let row = out.logits.row(0);
            let next = match (sampler, rng.as_mut()) {
                (Sampler::TopK { k, temperature, .. }, Some(rng)) => {
                    let mut idx: Vec<usize> = (0..row.len()).collect();
                    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
                    idx.truncate((*k).min(row.len()));
                    let t = *temperature as f64;
                    let top = row[idx[0]] as f64 / t;
                    let w: Vec<f64> = idx.iter().map(|&i| (row[i] as f64 / t - top).exp()).collect();
                    let total: f64 = w.iter().sum();
                    let mut u = rng.uniform() * total;
                    let mut pick = idx[idx.len() - 1];
                    for (&i, &wi) in idx.iter().zip(&w) {
                        if u < wi {
                            pick = i;
                            break;
                        }
                        u -= wi;
                    }
                    pick
                }
                _ => argmax(row),
            };
            tokens.push(next as TokenId);
        }
        Ok(tokens)
    }
}
