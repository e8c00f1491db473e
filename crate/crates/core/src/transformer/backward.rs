// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse pass: vector-Jacobian products of every block type with weights
//! held fixed.

use super::forward::{HookTable, Tape};
use super::{HookPoint, HookSite, RunOptions, RunOutput, Transformer};
use crate::error::{Error, Result};
use crate::numerics::ops::{gelu_grad_scalar, gemm, gemm_at_acc, gemm_bt, NormParts};
use crate::numerics::Tensor;
use crate::tokenizer::TokenId;

/// Gradient through `centered * scale * w` with `scale` recomputed from the
/// input, followed by the mean-centering.
fn ln_backward(g_out: &Tensor, parts: &NormParts, w: &[f32]) -> Tensor {
    let d = g_out.cols();
    let mut g = Tensor::zeros(g_out.shape());
    for i in 0..g_out.rows() {
        let s = parts.scale[i];
        let c = parts.centered.row(i);
        let go = g_out.row(i);
        let mut g_scale = 0.0f32;
        for j in 0..d {
            g_scale += go[j] * w[j] * c[j];
        }
        let k = -g_scale * s * s * s / d as f32;
        let row = g.row_mut(i);
        let mut mean = 0.0f32;
        for j in 0..d {
            row[j] = go[j] * w[j] * s + k * c[j];
            mean += row[j];
        }
        mean /= d as f32;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    g
}

fn through(hooks: &HookTable, site: &HookSite, g: &mut Tensor) -> Result<()> {
    for h in hooks.at(site).iter().rev() {
        h.vjp(g)?;
    }
    Ok(())
}

fn mat(rows: usize, cols: usize, data: Vec<f32>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("gradient shape")
}

impl Transformer<'_> {
    /// Gradient of `⟨logit_grad, logits⟩` with respect to the value at `site`
    /// as seen by its consumers (after any hooks at `site`). Hooks downstream
    /// of `site` are differentiated through.
    pub fn vjp_to_site(
        &self,
        tokens: &[TokenId],
        logit_grad: &Tensor,
        site: HookSite,
        opts: &RunOptions,
    ) -> Result<Tensor> {
        let g = logit_grad.clone();
        self.forward_and_vjp(tokens, opts, site, move |_| Ok(g)).map(|(_, g)| g)
    }

    /// Runs forward, derives the logit gradient from the logits with
    /// `grad_fn`, and returns both the run and the gradient at `site`.
    pub fn forward_and_vjp(
        &self,
        tokens: &[TokenId],
        opts: &RunOptions,
        site: HookSite,
        grad_fn: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<(RunOutput, Tensor)> {
        let cfg = self.config();
        site.check(cfg.n_layers, cfg.n_heads)?;
        let (out, tape) = self.execute(tokens, opts, true)?;
        let tape = tape.expect("recorded tape");
        if !site.point.is_final() && site.layer < tape.first_layer {
            return Err(Error::Model(format!("{site} is not on the gradient path")));
        }
        let g_logits = grad_fn(&out.logits)?;
        if g_logits.shape() != out.logits.shape() {
            return Err(Error::Model(format!(
                "logit gradient {:?} does not match logits {:?}",
                g_logits.shape(),
                out.logits.shape()
            )));
        }
        let hooks = HookTable::new(&opts.hooks, cfg.n_layers, cfg.n_heads)?;
        let g = self.reverse(&tape, &hooks, site, g_logits, tokens.len())?;
        Ok((out, g))
    }

    fn reverse(&self, tape: &Tape, hooks: &HookTable, target: HookSite, mut g: Tensor, n: usize) -> Result<Tensor> {
        let cfg = self.config();
        let (d, dh, m, v) = (cfg.d_model, cfg.d_head, cfg.d_mlp, cfg.vocab_size);

        let logits_site = HookSite::logits();
        if target == logits_site {
            return Ok(g);
        }
        through(hooks, &logits_site, &mut g)?;

        let fin = tape.fin.as_ref().expect("final tape");
        let mut g_normed = Tensor::zeros(&[n, d]);
        for r in 0..g.rows() {
            let gr = g.row(r);
            if gr.iter().all(|&x| x == 0.0) {
                continue;
            }
            let dest = if fin.last_only { n - 1 } else { r };
            let out = g_normed.row_mut(dest);
            match self.w_u {
                Some(w_u) => {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = crate::numerics::ops::dot(&w_u.data()[j * v..(j + 1) * v], gr);
                    }
                }
                None => {
                    for (t, &gv) in gr.iter().enumerate() {
                        if gv != 0.0 {
                            for (o, &e) in out.iter_mut().zip(self.w_e.row(t)) {
                                *o += gv * e;
                            }
                        }
                    }
                }
            }
        }

        let w = self.lnf_w.data();
        let mut g_scale = vec![0.0f32; n];
        let mut g_cent = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let c = fin.centered.row(i);
            let go = g_normed.row(i);
            let row = g_cent.row_mut(i);
            for j in 0..d {
                g_scale[i] += go[j] * w[j] * c[j];
                row[j] = go[j] * w[j] * fin.scale[i];
            }
        }
        let scale_site = HookSite::final_ln_scale();
        let mut g_scale = mat(n, 1, g_scale);
        if target == scale_site {
            return Ok(g_scale);
        }
        through(hooks, &scale_site, &mut g_scale)?;
        for i in 0..n {
            let s = fin.scale_nat[i];
            let k = -g_scale.data()[i] * s * s * s / d as f32;
            let c = fin.centered.row(i).to_vec();
            let row = g_cent.row_mut(i);
            let mut mean = 0.0f32;
            for j in 0..d {
                row[j] += k * c[j];
                mean += row[j];
            }
            mean /= d as f32;
            row.iter_mut().for_each(|x| *x -= mean);
        }
        let mut g = g_cent;

        let att_scale = 1.0 / (dh as f32).sqrt();
        for (li, lt) in tape.layers.iter().enumerate().rev() {
            let l = tape.first_layer + li;
            let w = &self.layers[l];
            let ret = |s: HookSite| s == target;

            let site = HookSite::resid_post(l);
            if ret(site) {
                return Ok(g);
            }
            through(hooks, &site, &mut g)?;
            let mut g_mid = g.clone();
            let mut g_mo = g;

            let site = HookSite::new(l, HookPoint::MlpOut);
            if ret(site) {
                return Ok(g_mo);
            }
            through(hooks, &site, &mut g_mo)?;
            let mut buf = vec![0.0f32; n * m];
            gemm_bt(g_mo.data(), w.w_out.data(), &mut buf, n, d, m);
            let mut g_mpost = mat(n, m, buf);

            let site = HookSite::new(l, HookPoint::MlpPost);
            if ret(site) {
                return Ok(g_mpost);
            }
            through(hooks, &site, &mut g_mpost)?;
            for (gv, &x) in g_mpost.data_mut().iter_mut().zip(lt.mlp_pre.data()) {
                *gv *= gelu_grad_scalar(x);
            }
            let mut g_mpre = g_mpost;

            let site = HookSite::new(l, HookPoint::MlpPre);
            if ret(site) {
                return Ok(g_mpre);
            }
            through(hooks, &site, &mut g_mpre)?;
            let mut buf = vec![0.0f32; n * d];
            gemm_bt(g_mpre.data(), w.w_in.data(), &mut buf, n, m, d);
            g_mid.add_assign(&ln_backward(&mat(n, d, buf), &lt.ln2, w.ln2_w.data()))?;

            let site = HookSite::resid_mid(l);
            if ret(site) {
                return Ok(g_mid);
            }
            through(hooks, &site, &mut g_mid)?;
            let mut g_pre = g_mid.clone();
            let mut g_ao = g_mid;

            let site = HookSite::new(l, HookPoint::AttnOut);
            if ret(site) {
                return Ok(g_ao);
            }
            through(hooks, &site, &mut g_ao)?;

            let mut g_ln1 = Tensor::zeros(&[n, d]);
            for (h, ht) in lt.heads.iter().enumerate() {
                let mut buf = vec![0.0f32; n * dh];
                gemm_bt(g_ao.data(), w.w_o.slice0_data(h), &mut buf, n, d, dh);
                let mut g_z = mat(n, dh, buf);
                let site = HookSite::head(l, HookPoint::AttnZ, h);
                if ret(site) {
                    return Ok(g_z);
                }
                through(hooks, &site, &mut g_z)?;

                let mut buf = vec![0.0f32; n * n];
                gemm_bt(g_z.data(), ht.v.data(), &mut buf, n, dh, n);
                let mut g_pat = mat(n, n, buf);
                let mut buf = vec![0.0f32; n * dh];
                gemm_at_acc(ht.pattern.data(), g_z.data(), &mut buf, n, n, dh);
                let mut g_v = mat(n, dh, buf);

                let site = HookSite::head(l, HookPoint::AttnV, h);
                if ret(site) {
                    return Ok(g_v);
                }
                through(hooks, &site, &mut g_v)?;

                let site = HookSite::head(l, HookPoint::AttnPattern, h);
                if ret(site) {
                    return Ok(g_pat);
                }
                through(hooks, &site, &mut g_pat)?;

                let mut g_s = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    let p = ht.pattern_nat.row(i);
                    let gp = g_pat.row(i);
                    let mut dotp = 0.0f32;
                    for j in 0..=i {
                        dotp += p[j] * gp[j];
                    }
                    let row = g_s.row_mut(i);
                    for j in 0..=i {
                        row[j] = p[j] * (gp[j] - dotp);
                    }
                }
                let site = HookSite::head(l, HookPoint::AttnScores, h);
                if ret(site) {
                    return Ok(g_s);
                }
                through(hooks, &site, &mut g_s)?;
                for i in 0..n {
                    let row = g_s.row_mut(i);
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if j <= i { *x * att_scale } else { 0.0 };
                    }
                }

                let mut g_q = vec![0.0f32; n * dh];
                gemm(g_s.data(), ht.k.data(), &mut g_q, n, n, dh);
                let mut g_k = vec![0.0f32; n * dh];
                gemm_at_acc(g_s.data(), ht.q.data(), &mut g_k, n, n, dh);

                let mut buf = vec![0.0f32; n * d];
                for (gx, wx) in [(&g_q, w.w_q), (&g_k, w.w_k), (&g_v.data().to_vec(), w.w_v)] {
                    gemm_bt(gx, wx.slice0_data(h), &mut buf, n, dh, d);
                    for (a, b) in g_ln1.data_mut().iter_mut().zip(&buf) {
                        *a += b;
                    }
                }
            }

            let site = HookSite::new(l, HookPoint::Ln1Out);
            if ret(site) {
                return Ok(g_ln1);
            }
            through(hooks, &site, &mut g_ln1)?;
            g_pre.add_assign(&ln_backward(&g_ln1, &lt.ln1, w.ln1_w.data()))?;

            let site = HookSite::resid_pre(l);
            if ret(site) {
                return Ok(g_pre);
            }
            through(hooks, &site, &mut g_pre)?;
            g = g_pre;
        }
        Err(Error::Model(format!("{target} is not on the gradient path")))
    }
}
