// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model weights and architecture configuration.
//!
//! A bundle is a [`Container`] with magic `SLBUNDLE` whose metadata holds
//! `{"config": ModelConfig, "tied_unembed": bool}`. Tensor names and shapes:
//!
//! | name                         | shape                      |
//! |------------------------------|----------------------------|
//! | `embed.W_E`                  | `[vocab_size, d_model]`    |
//! | `pos.W_pos`                  | `[n_ctx, d_model]`         |
//! | `blocks.{i}.ln1.{w,b}`       | `[d_model]`                |
//! | `blocks.{i}.attn.W_{Q,K,V}`  | `[n_heads, d_model, d_head]` |
//! | `blocks.{i}.attn.b_{Q,K,V}`  | `[n_heads, d_head]`        |
//! | `blocks.{i}.attn.W_O`        | `[n_heads, d_head, d_model]` |
//! | `blocks.{i}.attn.b_O`        | `[d_model]`                |
//! | `blocks.{i}.ln2.{w,b}`       | `[d_model]`                |
//! | `blocks.{i}.mlp.W_in`        | `[d_model, d_mlp]`         |
//! | `blocks.{i}.mlp.b_in`        | `[d_mlp]`                  |
//! | `blocks.{i}.mlp.W_out`       | `[d_mlp, d_model]`         |
//! | `blocks.{i}.mlp.b_out`       | `[d_model]`                |
//! | `ln_f.{w,b}`                 | `[d_model]`                |
//! | `unembed.W_U`                | `[d_model, vocab_size]`, absent when tied |
//!
//! With a tied unembedding the logits are `ln_f(x) · W_Eᵀ`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

/// Magic bytes of a bundle file.
pub const BUNDLE_MAGIC: &[u8; 8] = b"SLBUNDLE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    GeluTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub n_ctx: usize,
    pub vocab_size: usize,
    pub ln_eps: f32,
    pub positional: Positional,
    pub activation: Activation,
}

impl ModelConfig {
    /// GPT-2 small dimensions.
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            d_model: 768,
            n_heads: 12,
            d_head: 64,
            d_mlp: 3072,
            n_ctx: 1024,
            vocab_size: 50257,
            ln_eps: 1e-5,
            positional: Positional::Learned,
            activation: Activation::GeluTanh,
        }
    }

    /// Small configuration used by tests and fixtures.
    pub fn toy(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize, n_ctx: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_head: d_model / n_heads.max(1),
            d_mlp: 4 * d_model,
            n_ctx,
            vocab_size,
            ln_eps: 1e-5,
            positional: Positional::Learned,
            activation: Activation::GeluTanh,
        }
    }

    /// Config-level invariant violations.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("n_ctx", self.n_ctx),
            ("vocab_size", self.vocab_size),
        ] {
            if val == 0 {
                v.push(format!("config: {name} must be positive"));
            }
        }
        if self.d_model != self.n_heads * self.d_head {
            v.push(format!(
                "config: d_model {} != n_heads {} x d_head {}",
                self.d_model, self.n_heads, self.d_head
            ));
        }
        if !(self.ln_eps.is_finite() && self.ln_eps > 0.0) {
            v.push("config: ln_eps must be positive and finite".into());
        }
        v
    }

    /// Every tensor name with its expected shape, in sorted order.
    pub fn expected_tensors(&self, tied_unembed: bool) -> BTreeMap<String, Vec<usize>> {
        let (d, h, dh, m) = (self.d_model, self.n_heads, self.d_head, self.d_mlp);
        let mut out = BTreeMap::new();
        out.insert("embed.W_E".into(), vec![self.vocab_size, d]);
        out.insert("pos.W_pos".into(), vec![self.n_ctx, d]);
        for i in 0..self.n_layers {
            let p = |s: &str| format!("blocks.{i}.{s}");
            for ln in ["ln1", "ln2"] {
                out.insert(p(&format!("{ln}.w")), vec![d]);
                out.insert(p(&format!("{ln}.b")), vec![d]);
            }
            for w in ["W_Q", "W_K", "W_V"] {
                out.insert(p(&format!("attn.{w}")), vec![h, d, dh]);
            }
            for b in ["b_Q", "b_K", "b_V"] {
                out.insert(p(&format!("attn.{b}")), vec![h, dh]);
            }
            out.insert(p("attn.W_O"), vec![h, dh, d]);
            out.insert(p("attn.b_O"), vec![d]);
            out.insert(p("mlp.W_in"), vec![d, m]);
            out.insert(p("mlp.b_in"), vec![m]);
            out.insert(p("mlp.W_out"), vec![m, d]);
            out.insert(p("mlp.b_out"), vec![d]);
        }
        out.insert("ln_f.w".into(), vec![d]);
        out.insert("ln_f.b".into(), vec![d]);
        if !tied_unembed {
            out.insert("unembed.W_U".into(), vec![d, self.vocab_size]);
        }
        out
    }
}

/// One failed bundle invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub tensor: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tensor {
            Some(t) => write!(f, "{t}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    config: ModelConfig,
    tied_unembed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub tied_unembed: bool,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelBundle {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Bundle(format!("missing tensor {name}")))
    }

    /// Empty list iff every naming, shape, config and finiteness invariant holds.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .config
            .violations()
            .into_iter()
            .map(|message| Violation { tensor: None, message })
            .collect();
        let expected = self.config.expected_tensors(self.tied_unembed);
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => out.push(Violation {
                    tensor: Some(name.clone()),
                    message: "missing tensor".into(),
                }),
                Some(t) if t.shape() != shape.as_slice() => out.push(Violation {
                    tensor: Some(name.clone()),
                    message: format!("shape {:?}, expected {:?}", t.shape(), shape),
                }),
                Some(t) if !t.is_finite() => out.push(Violation {
                    tensor: Some(name.clone()),
                    message: "non-finite tensor".into(),
                }),
                Some(_) => {}
            }
        }
        for name in self.tensors.keys() {
            if !expected.contains_key(name) {
                out.push(Violation {
                    tensor: Some(name.clone()),
                    message: "unexpected tensor".into(),
                });
            }
        }
        out
    }

    fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(Error::Bundle(format!("invalid bundle: {}", list.join("; "))))
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        self.ensure_valid()?;
        let meta = serde_json::to_value(BundleMeta {
            config: self.config.clone(),
            tied_unembed: self.tied_unembed,
        })?;
        let mut c = Container::new(meta);
        for (name, t) in &self.tensors {
            c.insert_f32(name.clone(), t.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: BundleMeta =
            serde_json::from_value(c.meta).map_err(|e| Error::Bundle(format!("bundle metadata: {e}")))?;
        let mut tensors = BTreeMap::new();
        for (name, arr) in c.arrays {
            match arr {
                crate::container::Stored::F32(t) => {
                    tensors.insert(name, t);
                }
                _ => return Err(Error::Bundle(format!("{name}: bundle tensors must be f32"))),
            }
        }
        let b = Self {
            config: meta.config,
            tied_unembed: meta.tied_unembed,
            tensors,
        };
        b.ensure_valid()?;
        Ok(b)
    }

    /// Deterministic serialization; refuses invalid bundles.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.to_bytes(BUNDLE_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::from_bytes(bytes, BUNDLE_MAGIC)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Seeded random weights.
    ///
    /// Tensors are filled in sorted-name order from one [`SeededRng`] stream,
    /// each value drawn as `u` uniform in `[0, 1)` and mapped to
    /// `1 + 0.2(2u - 1)` for layer-norm gains, `0.1(2u - 1)` for biases and
    /// `0.4(2u - 1)` for matrices, computed in `f64` and rounded to `f32`.
    pub fn random(config: ModelConfig, tied_unembed: bool, seed: u64) -> Result<Self> {
        let bad = config.violations();
        if !bad.is_empty() {
            return Err(Error::Bundle(bad.join("; ")));
        }
        let mut rng = SeededRng::new(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.expected_tensors(tied_unembed) {
            let n: usize = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or("");
            let data = (0..n)
                .map(|_| {
                    let s = 2.0 * rng.uniform() - 1.0;
                    (match leaf {
                        "w" => 1.0 + 0.2 * s,
                        "b" | "b_Q" | "b_K" | "b_V" | "b_O" | "b_in" | "b_out" => 0.1 * s,
                        _ => 0.4 * s,
                    }) as f32
                })
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            tied_unembed,
            tensors,
        })
    }

    /// Copy with every attention and MLP weight and bias set to zero.
    pub fn with_zeroed_blocks(&self) -> Self {
        let mut b = self.clone();
        for (name, t) in b.tensors.iter_mut() {
            if name.starts_with("blocks.") && (name.contains(".attn.") || name.contains(".mlp.")) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelBundle {
        ModelBundle::random(ModelConfig::toy(2, 8, 2, 40, 16), false, 3).unwrap()
    }

    #[test]
    fn random_bundle_is_valid() {
        assert!(toy().validate().is_empty());
        let tied = ModelBundle::random(ModelConfig::toy(1, 8, 2, 40, 16), true, 3).unwrap();
        assert!(tied.validate().is_empty());
        assert!(!tied.tensors.contains_key("unembed.W_U"));
    }

    #[test]
    fn transposed_w_q_is_one_violation() {
        let mut b = toy();
        let t = b.tensors.get_mut("blocks.0.attn.W_Q").unwrap();
        *t = t.clone().reshape(&[2, 4, 8]).unwrap();
        let v = b.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tensor.as_deref(), Some("blocks.0.attn.W_Q"));
    }

    #[test]
    fn nan_weight_is_reported() {
        let mut b = toy();
        b.tensors.get_mut("ln_f.b").unwrap().data_mut()[0] = f32::NAN;
        let v = b.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "non-finite tensor");
    }

    #[test]
    fn missing_tensor_refuses_to_write() {
        let mut b = toy();
        b.tensors.remove("pos.W_pos");
        assert!(b.to_bytes().is_err());
    }

    #[test]
    fn inconsistent_head_dims_rejected() {
        let mut cfg = ModelConfig::toy(1, 8, 2, 40, 16);
        cfg.d_head = 3;
        assert!(ModelBundle::random(cfg, false, 0).is_err());
    }
}
