// SPDX-License-Identifier: MIT OR Apache-2.0

//! Straight-line `f64` GPT-2 forward used as an oracle. Supports additive
//! perturbations, row replacement and projection edits at any site.

use sentlens::bundle::ModelBundle;
use sentlens::transformer::{HookPoint, HookSite};
use sentlens::Tensor;

pub enum RefEdit {
    /// Add `delta` to flat element `index` of the site tensor.
    Bump { site: HookSite, index: usize, delta: f64 },
    /// Replace the listed rows with rows of `source`.
    Replace {
        site: HookSite,
        rows: Vec<usize>,
        source: Tensor,
    },
    /// `x ← x + B(Bᵀs − Bᵀx)` on the listed rows.
    Project {
        site: HookSite,
        rows: Vec<usize>,
        basis: Tensor,
        source: Tensor,
    },
}

pub struct RefModel<'a> {
    b: &'a ModelBundle,
}

fn w(b: &ModelBundle, name: &str) -> Vec<f64> {
    b.get(name).unwrap().data().iter().map(|&v| v as f64).collect()
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            o[j] = (row[j] - mean) * s * g[j] + bias[j];
        }
    }
    out
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

impl<'a> RefModel<'a> {
    pub fn new(b: &'a ModelBundle) -> Self {
        Self { b }
    }

    fn edit(&self, edits: &[RefEdit], site: HookSite, x: &mut [f64], cols: usize) {
        for e in edits {
            match e {
                RefEdit::Bump { site: s, index, delta } if *s == site => x[*index] += delta,
                RefEdit::Replace { site: s, rows, source } if *s == site => {
                    for &r in rows {
                        for j in 0..cols {
                            x[r * cols + j] = source.row(r)[j] as f64;
                        }
                    }
                }
                RefEdit::Project {
                    site: s,
                    rows,
                    basis,
                    source,
                } if *s == site => {
                    let k = basis.cols();
                    for &r in rows {
                        let mut coef = vec![0.0; k];
                        for (c, co) in coef.iter_mut().enumerate() {
                            for i in 0..cols {
                                let bv = basis.row(i)[c] as f64;
                                *co += bv * (source.row(r)[i] as f64 - x[r * cols + i]);
                            }
                        }
                        for i in 0..cols {
                            for (c, co) in coef.iter().enumerate() {
                                x[r * cols + i] += basis.row(i)[c] as f64 * co;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Logits `[n * vocab]` in `f64`.
    pub fn logits(&self, tokens: &[u32], edits: &[RefEdit]) -> Vec<f64> {
        let b = self.b;
        let c = &b.config;
        let (n, d, nh, dh, m, v) = (tokens.len(), c.d_model, c.n_heads, c.d_head, c.d_mlp, c.vocab_size);
        let eps = c.ln_eps as f64;
        let w_e = w(b, "embed.W_E");
        let w_pos = w(b, "pos.W_pos");
        let mut x = vec![0.0; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            for j in 0..d {
                x[i * d + j] = w_e[t as usize * d + j] + w_pos[i * d + j];
            }
        }
        for l in 0..c.n_layers {
            let p = |s: &str| w(b, &format!("blocks.{l}.{s}"));
            self.edit(edits, HookSite::resid_pre(l), &mut x, d);
            let mut ln1 = layer_norm(&x, d, &p("ln1.w"), &p("ln1.b"), eps);
            self.edit(edits, HookSite::new(l, HookPoint::Ln1Out), &mut ln1, d);
            let (wq, wk, wv, wo) = (p("attn.W_Q"), p("attn.W_K"), p("attn.W_V"), p("attn.W_O"));
            let (bq, bk, bv, bo) = (p("attn.b_Q"), p("attn.b_K"), p("attn.b_V"), p("attn.b_O"));
            let mut attn = vec![0.0; n * d];
            for h in 0..nh {
                let proj = |wm: &[f64], bm: &[f64]| {
                    let mut o = matmul(&ln1, &wm[h * d * dh..(h + 1) * d * dh], n, d, dh);
                    for i in 0..n {
                        for j in 0..dh {
                            o[i * dh + j] += bm[h * dh + j];
                        }
                    }
                    o
                };
                let q = proj(&wq, &bq);
                let k = proj(&wk, &bk);
                let mut vv = proj(&wv, &bv);
                self.edit(edits, HookSite::head(l, HookPoint::AttnV, h), &mut vv, dh);
                let mut s = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        s[i * n + j] = (0..dh).map(|t| q[i * dh + t] * k[j * dh + t]).sum::<f64>() / (dh as f64).sqrt();
                    }
                }
                self.edit(edits, HookSite::head(l, HookPoint::AttnScores, h), &mut s, n);
                let mut pat = vec![0.0; n * n];
                for i in 0..n {
                    let mx = (0..=i).map(|j| s[i * n + j]).fold(f64::MIN, f64::max);
                    let tot: f64 = (0..=i).map(|j| (s[i * n + j] - mx).exp()).sum();
                    for j in 0..=i {
                        pat[i * n + j] = (s[i * n + j] - mx).exp() / tot;
                    }
                }
                self.edit(edits, HookSite::head(l, HookPoint::AttnPattern, h), &mut pat, n);
                let mut z = matmul(&pat, &vv, n, n, dh);
                self.edit(edits, HookSite::head(l, HookPoint::AttnZ, h), &mut z, dh);
                let o = matmul(&z, &wo[h * dh * d..(h + 1) * dh * d], n, dh, d);
                attn.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            }
            for i in 0..n {
                for j in 0..d {
                    attn[i * d + j] += bo[j];
                }
            }
            self.edit(edits, HookSite::new(l, HookPoint::AttnOut), &mut attn, d);
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);
            self.edit(edits, HookSite::resid_mid(l), &mut x, d);
            let ln2 = layer_norm(&x, d, &p("ln2.w"), &p("ln2.b"), eps);
            let mut pre = matmul(&ln2, &p("mlp.W_in"), n, d, m);
            let b_in = p("mlp.b_in");
            for i in 0..n {
                for j in 0..m {
                    pre[i * m + j] += b_in[j];
                }
            }
            self.edit(edits, HookSite::new(l, HookPoint::MlpPre), &mut pre, m);
            let mut post: Vec<f64> = pre.iter().map(|&u| gelu(u)).collect();
            self.edit(edits, HookSite::new(l, HookPoint::MlpPost), &mut post, m);
            let mut out = matmul(&post, &p("mlp.W_out"), n, m, d);
            let b_out = p("mlp.b_out");
            for i in 0..n {
                for j in 0..d {
                    out[i * d + j] += b_out[j];
                }
            }
            self.edit(edits, HookSite::new(l, HookPoint::MlpOut), &mut out, d);
            x.iter_mut().zip(&out).for_each(|(a, b)| *a += b);
            self.edit(edits, HookSite::resid_post(l), &mut x, d);
        }
        let (g, bb) = (w(b, "ln_f.w"), w(b, "ln_f.b"));
        let mut scale = vec![0.0; n];
        let mut centered = vec![0.0; n * d];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            scale[i] = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                centered[i * d + j] = row[j] - mean;
            }
        }
        self.edit(edits, HookSite::final_ln_scale(), &mut scale, 1);
        let mut normed = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                normed[i * d + j] = centered[i * d + j] * scale[i] * g[j] + bb[j];
            }
        }
        let mut logits = if b.tied_unembed {
            let mut o = vec![0.0; n * v];
            for i in 0..n {
                for t in 0..v {
                    o[i * v + t] = (0..d).map(|j| normed[i * d + j] * w_e[t * d + j]).sum();
                }
            }
            o
        } else {
            matmul(&normed, &w(b, "unembed.W_U"), n, d, v)
        };
        self.edit(edits, HookSite::logits(), &mut logits, v);
        logits
    }
}
