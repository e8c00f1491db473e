// SPDX-License-Identifier: MIT OR Apache-2.0

//! Text storage for directions.
//!
//! ```text
//! sentlens-direction 1
//! method MD
//! layer 0
//! site resid_post.0
//! d_model 768
//! k 1
//! oriented true
//! basis
//! 0x1.99999ap-4
//! ...
//! ```
//!
//! `basis` is followed by `d_model` lines of `k` space-separated hex floats.

use std::path::Path;

use hexfloat2::HexFloat32;

use super::{Direction, Method};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::transformer::HookSite;

const HEADER: &str = "sentlens-direction 1";

impl Direction {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        s.push_str(&format!("method {}\n", self.method));
        s.push_str(&format!("layer {}\n", self.layer));
        s.push_str(&format!("site {}\n", self.site));
        s.push_str(&format!("d_model {}\n", self.d_model()));
        s.push_str(&format!("k {}\n", self.k()));
        s.push_str(&format!("oriented {}\n", self.oriented));
        s.push_str("basis\n");
        for i in 0..self.d_model() {
            let row: Vec<String> = self
                .basis
                .row(i)
                .iter()
                .map(|&v| HexFloat32::from(v).to_string())
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses [`Direction::to_text`] output. The basis is taken verbatim.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Fit(format!("direction file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(&format!("expected {name}, found {line:?}")))
        };
        let method: Method = field("method")?.parse()?;
        let num = |s: String, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad {what}")));
        let layer = num(field("layer")?, "layer")?;
        let site: HookSite = field("site")?.parse()?;
        let d = num(field("d_model")?, "d_model")?;
        let k = num(field("k")?, "k")?;
        let oriented = match field("oriented")?.as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(bad("bad oriented flag")),
        };
        if lines.next() != Some("basis") {
            return Err(bad("missing basis"));
        }
        let mut data = Vec::with_capacity(d * k);
        for i in 0..d {
            let line = lines.next().ok_or_else(|| bad(&format!("basis row {i} missing")))?;
            let row: Vec<f32> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<HexFloat32>()
                        .map(|h| *h)
                        .map_err(|_| bad(&format!("bad value {t:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != k {
                return Err(bad(&format!("basis row {i} has {} values, expected {k}", row.len())));
            }
            data.extend(row);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing content"));
        }
        if d == 0 || k == 0 {
            return Err(bad("empty basis"));
        }
        Ok(Self {
            basis: Tensor::new(vec![d, k], data)?,
            layer,
            site,
            method,
            oriented,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
