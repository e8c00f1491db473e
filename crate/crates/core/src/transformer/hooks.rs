// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Named activation inside a layer, listed in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPoint {
    ResidPre,
    Ln1Out,
    AttnV,
    AttnScores,
    AttnPattern,
    AttnZ,
    AttnOut,
    ResidMid,
    MlpPre,
    MlpPost,
    MlpOut,
    ResidPost,
    FinalLnScale,
    Logits,
}

impl HookPoint {
    pub const ALL: [HookPoint; 14] = [
        HookPoint::ResidPre,
        HookPoint::Ln1Out,
        HookPoint::AttnV,
        HookPoint::AttnScores,
        HookPoint::AttnPattern,
        HookPoint::AttnZ,
        HookPoint::AttnOut,
        HookPoint::ResidMid,
        HookPoint::MlpPre,
        HookPoint::MlpPost,
        HookPoint::MlpOut,
        HookPoint::ResidPost,
        HookPoint::FinalLnScale,
        HookPoint::Logits,
    ];

    /// Points that exist once per attention head.
    pub fn per_head(self) -> bool {
        matches!(
            self,
            HookPoint::AttnV | HookPoint::AttnScores | HookPoint::AttnPattern | HookPoint::AttnZ
        )
    }

    /// Points after the last block; their layer index is ignored.
    pub fn is_final(self) -> bool {
        matches!(self, HookPoint::FinalLnScale | HookPoint::Logits)
    }

    pub fn name(self) -> &'static str {
        match self {
            HookPoint::ResidPre => "resid_pre",
            HookPoint::Ln1Out => "ln1_out",
            HookPoint::AttnV => "attn_v",
            HookPoint::AttnScores => "attn_scores",
            HookPoint::AttnPattern => "attn_pattern",
            HookPoint::AttnZ => "attn_z",
            HookPoint::AttnOut => "attn_out",
            HookPoint::ResidMid => "resid_mid",
            HookPoint::MlpPre => "mlp_pre",
            HookPoint::MlpPost => "mlp_post",
            HookPoint::MlpOut => "mlp_out",
            HookPoint::ResidPost => "resid_post",
            HookPoint::FinalLnScale => "final_ln_scale",
            HookPoint::Logits => "logits",
        }
    }
}

impl FromStr for HookPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HookPoint::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Model(format!("unknown hook point {s:?}")))
    }
}

/// A hook location: layer, point and (for per-head points) head.
/// Serialized in its textual form, e.g. `attn_z.10.4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HookSite {
    pub layer: usize,
    pub point: HookPoint,
    pub head: Option<usize>,
}

impl HookSite {
    pub fn new(layer: usize, point: HookPoint) -> Self {
        let layer = if point.is_final() { 0 } else { layer };
        Self {
            layer,
            point,
            head: None,
        }
    }

    pub fn head(layer: usize, point: HookPoint, head: usize) -> Self {
        Self {
            layer,
            point,
            head: Some(head),
        }
    }

    pub fn resid_pre(layer: usize) -> Self {
        Self::new(layer, HookPoint::ResidPre)
    }

    pub fn resid_mid(layer: usize) -> Self {
        Self::new(layer, HookPoint::ResidMid)
    }

    pub fn resid_post(layer: usize) -> Self {
        Self::new(layer, HookPoint::ResidPost)
    }

    pub fn logits() -> Self {
        Self::new(0, HookPoint::Logits)
    }

    pub fn final_ln_scale() -> Self {
        Self::new(0, HookPoint::FinalLnScale)
    }

    /// Position in forward execution order; per-head points share their
    /// stage across heads.
    pub fn order_key(&self) -> (usize, HookPoint) {
        if self.point.is_final() {
            (usize::MAX, self.point)
        } else {
            (self.layer, self.point)
        }
    }

    /// Checks layer and head ranges for a model shape.
    pub fn check(&self, n_layers: usize, n_heads: usize) -> Result<()> {
        if !self.point.is_final() && self.layer >= n_layers {
            return Err(Error::Model(format!(
                "{self}: layer out of range (n_layers {n_layers})"
            )));
        }
        match (self.point.per_head(), self.head) {
            (true, Some(h)) if h < n_heads => Ok(()),
            (true, Some(_)) => Err(Error::Model(format!("{self}: head out of range"))),
            (true, None) => Err(Error::Model(format!("{self}: per-head point needs a head"))),
            (false, Some(_)) => Err(Error::Model(format!("{self}: point takes no head"))),
            (false, None) => Ok(()),
        }
    }
}

impl fmt::Display for HookSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.point.is_final(), self.head) {
            (true, _) => f.write_str(self.point.name()),
            (false, Some(h)) => write!(f, "{}.{}.{}", self.point.name(), self.layer, h),
            (false, None) => write!(f, "{}.{}", self.point.name(), self.layer),
        }
    }
}

impl From<HookSite> for String {
    fn from(s: HookSite) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for HookSite {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for HookSite {
    type Err = Error;

    /// Parses `point`, `point.layer` or `point.layer.head`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('.');
        let point: HookPoint = parts.next().unwrap_or_default().parse()?;
        let num = |p: Option<&str>| -> Result<Option<usize>> {
            p.map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Model(format!("bad index in hook site {s:?}")))
            })
            .transpose()
        };
        let layer = num(parts.next())?;
        let head = num(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Model(format!("bad hook site {s:?}")));
        }
        match (point.is_final(), layer, head) {
            (true, None, None) => Ok(HookSite::new(0, point)),
            (false, Some(l), h) => Ok(HookSite {
                layer: l,
                point,
                head: h,
            }),
            _ => Err(Error::Model(format!("bad hook site {s:?}"))),
        }
    }
}

/// Which rows (sequence positions) a hook touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positions {
    All,
    Indices(Vec<usize>),
}

impl Positions {
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Positions::All => Ok((0..n).collect()),
            Positions::Indices(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                    return Err(Error::Model(format!("position {bad} out of range for length {n}")));
                }
                Ok(idx.clone())
            }
        }
    }
}

/// Target coordinates for a projection hook.
#[derive(Clone)]
pub enum ProjectTarget {
    /// Coordinates of the matching row of a same-shape tensor.
    Source(Arc<Tensor>),
    /// Fixed coordinates, one per basis column.
    Constant(Vec<f32>),
    Zero,
}

/// Row function used by [`HookAction::Transform`]: `(position, row)`.
pub type RowFn = Arc<dyn Fn(usize, &mut [f32]) + Send + Sync>;

#[derive(Clone)]
pub enum HookAction {
    /// Copy the selected rows from a same-shape tensor.
    Replace(Arc<Tensor>),
    /// Add a `[width]` vector to each selected row, or the matching rows of a
    /// same-shape tensor.
    Add(Arc<Tensor>),
    /// `x ← x + B(t − Bᵀx)` with `B` a `[width, k]` orthonormal basis.
    Project { basis: Arc<Tensor>, target: ProjectTarget },
    /// Arbitrary row map. Not differentiable.
    Transform(RowFn),
}

impl fmt::Debug for HookAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HookAction::Replace(t) => write!(f, "Replace({:?})", t.shape()),
            HookAction::Add(t) => write!(f, "Add({:?})", t.shape()),
            HookAction::Project { basis, .. } => write!(f, "Project({:?})", basis.shape()),
            HookAction::Transform(_) => f.write_str("Transform"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hook {
    pub site: HookSite,
    pub positions: Positions,
    pub action: HookAction,
}

fn coords(basis: &Tensor, row: &[f32]) -> Vec<f32> {
    let k = basis.cols();
    let mut c = vec![0.0f32; k];
    for (i, &x) in row.iter().enumerate() {
        let brow = basis.row(i);
        for j in 0..k {
            c[j] += brow[j] * x;
        }
    }
    c
}

fn add_combination(basis: &Tensor, coef: &[f32], row: &mut [f32]) {
    for (i, x) in row.iter_mut().enumerate() {
        let brow = basis.row(i);
        let mut s = 0.0f32;
        for (b, c) in brow.iter().zip(coef) {
            s += b * c;
        }
        *x += s;
    }
}

fn same_shape(a: &Tensor, b: &Tensor, site: &HookSite) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Model(format!(
            "{site}: hook tensor {:?} does not match activation {:?}",
            b.shape(),
            a.shape()
        )))
    }
}

impl Hook {
    pub fn new(site: HookSite, positions: Positions, action: HookAction) -> Self {
        Self {
            site,
            positions,
            action,
        }
    }

    pub fn replace(site: HookSite, positions: Positions, source: Arc<Tensor>) -> Self {
        Self::new(site, positions, HookAction::Replace(source))
    }

    pub fn add(site: HookSite, positions: Positions, delta: Arc<Tensor>) -> Self {
        Self::new(site, positions, HookAction::Add(delta))
    }

    pub fn project(site: HookSite, positions: Positions, basis: Arc<Tensor>, target: ProjectTarget) -> Self {
        Self::new(site, positions, HookAction::Project { basis, target })
    }

    /// Applies the hook in place to the activation at its site.
    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let rows = self.positions.resolve(x.rows())?;
        let site = &self.site;
        match &self.action {
            HookAction::Replace(src) => {
                same_shape(x, src, site)?;
                for &r in &rows {
                    x.row_mut(r).copy_from_slice(src.row(r));
                }
            }
            HookAction::Add(delta) => {
                if delta.rank() == 1 && delta.len() == x.cols() {
                    for &r in &rows {
                        for (a, b) in x.row_mut(r).iter_mut().zip(delta.data()) {
                            *a += b;
                        }
                    }
                } else {
                    same_shape(x, delta, site)?;
                    for &r in &rows {
                        for (a, b) in x.row_mut(r).iter_mut().zip(delta.row(r)) {
                            *a += b;
                        }
                    }
                }
            }
            HookAction::Project { basis, target } => {
                if basis.rank() != 2 || basis.shape()[0] != x.cols() {
                    return Err(Error::Model(format!(
                        "{site}: basis {:?} does not fit width {}",
                        basis.shape(),
                        x.cols()
                    )));
                }
                let k = basis.cols();
                match target {
                    ProjectTarget::Source(src) => same_shape(x, src, site)?,
                    ProjectTarget::Constant(c) if c.len() != k => {
                        return Err(Error::Model(format!(
                            "{site}: {} target coordinates for k={k}",
                            c.len()
                        )))
                    }
                    _ => {}
                }
                for &r in &rows {
                    let cur = coords(basis, x.row(r));
                    let want = match target {
                        ProjectTarget::Source(src) => coords(basis, src.row(r)),
                        ProjectTarget::Constant(c) => c.clone(),
                        ProjectTarget::Zero => vec![0.0; k],
                    };
                    let delta: Vec<f32> = want.iter().zip(&cur).map(|(w, c)| w - c).collect();
                    add_combination(basis, &delta, x.row_mut(r));
                }
            }
            HookAction::Transform(f) => {
                for &r in &rows {
                    f(r, x.row_mut(r));
                }
            }
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("activation after hook at {site}")));
        }
        Ok(())
    }

    /// Maps a gradient with respect to the hooked value to one with respect
    /// to the value before the hook.
    pub fn vjp(&self, g: &mut Tensor) -> Result<()> {
        let rows = self.positions.resolve(g.rows())?;
        match &self.action {
            HookAction::Replace(_) => {
                for &r in &rows {
                    g.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
            }
            HookAction::Add(_) => {}
            HookAction::Project { basis, .. } => {
                for &r in &rows {
                    let c: Vec<f32> = coords(basis, g.row(r)).into_iter().map(|v| -v).collect();
                    add_combination(basis, &c, g.row_mut(r));
                }
            }
            HookAction::Transform(_) => {
                return Err(Error::Model(format!(
                    "{}: transform hooks are not differentiable",
                    self.site
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_text_round_trip() {
        for s in ["resid_post.3", "attn_z.2.5", "logits", "final_ln_scale"] {
            assert_eq!(s.parse::<HookSite>().unwrap().to_string(), s);
        }
        assert!("resid_post".parse::<HookSite>().is_err());
        assert!("nope.1".parse::<HookSite>().is_err());
    }

    #[test]
    fn project_zero_removes_component() {
        let basis = Arc::new(Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap());
        let mut x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let h = Hook::project(HookSite::resid_pre(0), Positions::All, basis, ProjectTarget::Zero);
        h.apply(&mut x).unwrap();
        assert_eq!(x.data(), &[0.0, 4.0]);
    }

    #[test]
    fn positions_out_of_range() {
        assert!(Positions::Indices(vec![3]).resolve(3).is_err());
    }
}
