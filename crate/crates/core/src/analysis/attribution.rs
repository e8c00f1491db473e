// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::ops::Range;

use serde::Serialize;

use crate::bundle::{ModelBundle, ModelConfig};
use crate::datasets::AnswerSpec;
use crate::directions::{cosine, Direction};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::transformer::{sites_of, ActivationCache, HookPoint, HookSite, Transformer};

/// `pattern(i, j) · ‖v_j‖` for one head.
pub fn value_weighted_attention(cache: &ActivationCache, layer: usize, head: usize) -> Result<Tensor> {
    let pat = cache.get(&HookSite::head(layer, HookPoint::AttnPattern, head))?;
    let v = cache.get(&HookSite::head(layer, HookPoint::AttnV, head))?;
    let n = pat.rows();
    if pat.cols() != n || v.rows() != n {
        return Err(Error::Analysis(format!(
            "pattern {:?} and values {:?} disagree",
            pat.shape(),
            v.shape()
        )));
    }
    let norms: Vec<f32> = (0..n)
        .map(|j| v.row(j).iter().map(|x| x * x).sum::<f32>().sqrt())
        .collect();
    let mut out = pat.clone();
    for i in 0..n {
        for (o, nj) in out.row_mut(i).iter_mut().zip(&norms) {
            *o *= nj;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Embed,
    Head { layer: usize, head: usize },
    AttnBias { layer: usize },
    Mlp { layer: usize },
    FinalBias,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Embed => f.write_str("embed"),
            Component::Head { layer, head } => write!(f, "head {layer}.{head}"),
            Component::AttnBias { layer } => write!(f, "attn_bias {layer}"),
            Component::Mlp { layer } => write!(f, "mlp {layer}"),
            Component::FinalBias => f.write_str("ln_final_bias"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionRow {
    pub component: Component,
    pub contribution: f32,
}

/// Sites a cache needs for [`direct_logit_attribution`].
pub fn dla_sites(config: &ModelConfig) -> Vec<HookSite> {
    let mut s = vec![HookSite::resid_pre(0)];
    s.extend(sites_of(config, HookPoint::AttnZ));
    s.extend(sites_of(config, HookPoint::MlpOut));
    s
}

/// Contribution of every residual-stream writer at the last position to the
/// logit difference, through the final layer norm with its scale frozen to
/// the cached value. Rows sum to the logit difference of the cached run.
pub fn direct_logit_attribution(
    model: &Transformer<'_>,
    cache: &ActivationCache,
    answers: &AnswerSpec,
) -> Result<Vec<AttributionRow>> {
    let b = model.bundle();
    let c = &b.config;
    let (d, dh) = (c.d_model, c.d_head);
    let embed = cache.get(&HookSite::resid_pre(0))?;
    let last = embed.rows() - 1;
    let scale = *cache
        .final_ln_scale
        .get(last)
        .ok_or_else(|| Error::Analysis("cache has no final layer-norm scale".into()))? as f64;
    if answers.is_empty() {
        return Err(Error::Analysis("empty answer set".into()));
    }
    let mut u = vec![0.0f64; d];
    for (&p, &n) in answers.positive_ids.iter().zip(&answers.negative_ids) {
        let (cp, cn) = (model.unembed_column(p)?, model.unembed_column(n)?);
        for j in 0..d {
            u[j] += (cp[j] as f64 - cn[j] as f64) / answers.len() as f64;
        }
    }
    let g = b.get("ln_f.w")?.data();
    let lb = b.get("ln_f.b")?.data();
    let mut w: Vec<f64> = (0..d).map(|j| g[j] as f64 * u[j]).collect();
    let wm = w.iter().sum::<f64>() / d as f64;
    w.iter_mut().for_each(|v| *v -= wm);
    let through = |x: &[f64]| scale * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let as64 = |x: &[f32]| x.iter().map(|&v| v as f64).collect::<Vec<f64>>();

    let mut rows = vec![AttributionRow {
        component: Component::Embed,
        contribution: through(&as64(embed.row(last))) as f32,
    }];
    for l in 0..c.n_layers {
        let w_o = b.get(&format!("blocks.{l}.attn.W_O"))?.data();
        for h in 0..c.n_heads {
            let z = cache.get(&HookSite::head(l, HookPoint::AttnZ, h))?.row(last);
            let mut out = vec![0.0f64; d];
            for (t, &zt) in z.iter().enumerate() {
                let wrow = &w_o[(h * dh + t) * d..(h * dh + t + 1) * d];
                for (o, &wv) in out.iter_mut().zip(wrow) {
                    *o += zt as f64 * wv as f64;
                }
            }
            rows.push(AttributionRow {
                component: Component::Head { layer: l, head: h },
                contribution: through(&out) as f32,
            });
        }
        rows.push(AttributionRow {
            component: Component::AttnBias { layer: l },
            contribution: through(&as64(b.get(&format!("blocks.{l}.attn.b_O"))?.data())) as f32,
        });
        rows.push(AttributionRow {
            component: Component::Mlp { layer: l },
            contribution: through(&as64(cache.get(&HookSite::new(l, HookPoint::MlpOut))?.row(last))) as f32,
        });
    }
    rows.push(AttributionRow {
        component: Component::FinalBias,
        contribution: lb.iter().zip(&u).map(|(a, b)| *a as f64 * b).sum::<f64>() as f32,
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronScore {
    pub layer: usize,
    pub neuron: usize,
    pub cosine: f32,
}

/// Cosine of every MLP output row in `layers` with a one-dimensional
/// direction, sorted by `|cosine|` descending.
pub fn neuron_alignment(bundle: &ModelBundle, dir: &Direction, layers: Range<usize>) -> Result<Vec<NeuronScore>> {
    let theta = dir.vector().map_err(|e| Error::Analysis(e.to_string()))?;
    let c = &bundle.config;
    if layers.end > c.n_layers {
        return Err(Error::Analysis(format!("layers {layers:?} exceed {}", c.n_layers)));
    }
    if theta.len() != c.d_model {
        return Err(Error::Analysis(format!(
            "direction width {} is not d_model",
            theta.len()
        )));
    }
    let mut out = Vec::new();
    for l in layers {
        let w = bundle.get(&format!("blocks.{l}.mlp.W_out"))?;
        for n in 0..w.rows() {
            out.push(NeuronScore {
                layer: l,
                neuron: n,
                cosine: cosine(w.row(n), &theta),
            });
        }
    }
    out.sort_by(|a, b| {
        b.cosine
            .abs()
            .total_cmp(&a.cosine.abs())
            .then((a.layer, a.neuron).cmp(&(b.layer, b.neuron)))
    });
    Ok(out)
}

/// `m4 / m2² − 3`; zero for constant or fewer than two values.
pub fn excess_kurtosis(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), &v| {
        let d = v as f64 - mean;
        (a + d * d / n, b + d.powi(4) / n)
    });
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}
