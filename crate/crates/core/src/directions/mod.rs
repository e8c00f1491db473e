// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sentiment directions: fitting, orientation, comparison and storage.
//!
//! A [`Direction`] is an orthonormal basis `[d, k]` tied to the hook site
//! it was fitted at. Fitting routines work in `f64` and return a
//! [`FitReport`] with the optimisation trace.

mod das;
mod fit;
mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use das::{das_objective, das_objective_and_grad, fit_das, DasConfig, DasProblem};
pub use fit::{fit_kmeans, fit_logistic, fit_mean_diff, fit_pca, LogisticConfig};

use crate::datasets::{PromptInstance, Sentiment};
use crate::error::{Error, Result};
use crate::numerics::ops::orthonormalize_columns;
use crate::numerics::{SeededRng, Tensor};
use crate::transformer::{HookSite, Transformer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MD")]
    MeanDiff,
    #[serde(rename = "KM")]
    KMeans,
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "LR")]
    Logistic,
    #[serde(rename = "DAS")]
    Das,
    /// Seeded random unit vectors, used as a control.
    #[serde(rename = "RANDOM")]
    Random,
}

impl Method {
    pub const FITTED: [Method; 5] = [
        Method::MeanDiff,
        Method::KMeans,
        Method::Pca,
        Method::Logistic,
        Method::Das,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Method::MeanDiff => "MD",
            Method::KMeans => "KM",
            Method::Pca => "PCA",
            Method::Logistic => "LR",
            Method::Das => "DAS",
            Method::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MD" => Ok(Method::MeanDiff),
            "KM" => Ok(Method::KMeans),
            "PCA" => Ok(Method::Pca),
            "LR" => Ok(Method::Logistic),
            "DAS" => Ok(Method::Das),
            "RANDOM" => Ok(Method::Random),
            _ => Err(Error::Fit(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// `[d, k]` with orthonormal columns.
    pub basis: Tensor,
    pub layer: usize,
    pub site: HookSite,
    pub method: Method,
    /// Set when the sign was fixed by class means; unset on a tie.
    pub oriented: bool,
}

impl Direction {
    /// Orthonormalizes `basis` and wraps it.
    pub fn new(basis: Tensor, site: HookSite, method: Method) -> Result<Self> {
        if basis.rank() != 2 || basis.cols() == 0 || basis.rows() == 0 {
            return Err(Error::Fit(format!("basis must be [d, k], got {:?}", basis.shape())));
        }
        let basis = orthonormalize_columns(&basis).map_err(|e| Error::Fit(e.to_string()))?;
        Ok(Self {
            basis,
            layer: site.layer,
            site,
            method,
            oriented: false,
        })
    }

    /// Unit vector along `v`.
    pub fn from_vector(v: &[f32], site: HookSite, method: Method) -> Result<Self> {
        Self::new(Tensor::new(vec![v.len(), 1], v.to_vec())?, site, method)
    }

    /// Seeded Gaussian basis, orthonormalized.
    pub fn random(d: usize, k: usize, site: HookSite, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let data = (0..d * k).map(|_| rng.normal() as f32).collect();
        Self::new(Tensor::new(vec![d, k], data)?, site, Method::Random)
    }

    pub fn d_model(&self) -> usize {
        self.basis.rows()
    }

    pub fn k(&self) -> usize {
        self.basis.cols()
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.d_model()).map(|i| self.basis.row(i)[j]).collect()
    }

    /// The single column of a `k = 1` direction.
    pub fn vector(&self) -> Result<Vec<f32>> {
        if self.k() != 1 {
            return Err(Error::Fit(format!("expected a k=1 direction, got k={}", self.k())));
        }
        Ok(self.basis.data().to_vec())
    }

    pub fn negated(&self) -> Self {
        Self {
            basis: self.basis.scale(-1.0),
            ..self.clone()
        }
    }
}

/// Optimisation record of one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitReport {
    pub method: Option<Method>,
    /// Loss (LR, KM), Rayleigh quotient (PCA) or objective (DAS) per step.
    pub trace: Vec<f64>,
    /// `[2, d]` cluster centroids (KM only).
    #[serde(skip)]
    pub centroids: Option<Tensor>,
    /// Cluster index per row (KM only).
    pub assignments: Option<Vec<usize>>,
    pub iterations: usize,
    pub seed: Option<u64>,
    pub train_accuracy: Option<f64>,
    pub converged: bool,
}

/// Activations at one site and slot, one row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledActivations {
    pub x: Tensor,
    pub labels: Vec<Sentiment>,
    pub layer: usize,
    pub site: HookSite,
    pub slot: String,
}

impl LabeledActivations {
    pub fn new(x: Tensor, labels: Vec<Sentiment>, site: HookSite, slot: impl Into<String>) -> Result<Self> {
        if x.rank() != 2 || x.rows() != labels.len() {
            return Err(Error::Fit(format!(
                "activations {:?} do not match {} labels",
                x.shape(),
                labels.len()
            )));
        }
        Ok(Self {
            x,
            labels,
            layer: site.layer,
            site,
            slot: slot.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub(crate) fn rows64(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.x.row(i).iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Rows with both labels present, or an error.
    pub(crate) fn require_both(&self) -> Result<()> {
        let pos = self.labels.iter().filter(|l| l.is_positive()).count();
        if pos == 0 || pos == self.len() {
            return Err(Error::Fit("both labels must be present".into()));
        }
        Ok(())
    }

    /// Rows from several sets stacked in order.
    pub fn concat(parts: &[LabeledActivations]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Fit("nothing to concatenate".into()))?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.d() != first.d() {
                return Err(Error::Fit("activation widths differ".into()));
            }
            rows.extend((0..p.len()).map(|i| p.x.row(i).to_vec()));
            labels.extend(&p.labels);
        }
        Self::new(Tensor::from_rows(&rows)?, labels, first.site, first.slot.clone())
    }
}

/// One row per prompt: the activation at `site` at the prompt's `slot`.
pub fn collect_activations(
    model: &Transformer,
    prompts: &[PromptInstance],
    site: HookSite,
    slot: &str,
) -> Result<LabeledActivations> {
    if prompts.is_empty() {
        return Err(Error::Fit("no prompts".into()));
    }
    let idx: Vec<usize> = prompts.iter().map(|p| p.slot(slot)).collect::<Result<_>>()?;
    let seqs: Vec<_> = prompts.iter().map(|p| p.tokens.clone()).collect();
    let opts = crate::transformer::RunOptions::new().capture([site]).last_logits();
    let outs = model.run_batch(&seqs, &opts)?;
    let rows: Vec<Vec<f32>> = outs
        .iter()
        .zip(&idx)
        .map(|(o, &i)| o.cache.get(&site).map(|t| t.row(i).to_vec()))
        .collect::<Result<_>>()?;
    LabeledActivations::new(
        Tensor::from_rows(&rows)?,
        prompts.iter().map(|p| p.label).collect(),
        site,
        slot,
    )
}

/// Mean projection of each class on every basis column.
fn class_means(dir: &Direction, data: &LabeledActivations) -> Result<Vec<(f64, f64)>> {
    if data.d() != dir.d_model() {
        return Err(Error::Fit(format!(
            "activation width {} does not match direction width {}",
            data.d(),
            dir.d_model()
        )));
    }
    let k = dir.k();
    let mut sums = vec![(0.0f64, 0.0f64); k];
    let (mut np, mut nn) = (0usize, 0usize);
    for (i, l) in data.labels.iter().enumerate() {
        let row = data.x.row(i);
        for (j, s) in sums.iter_mut().enumerate() {
            let p: f64 = (0..row.len()).map(|r| row[r] as f64 * dir.basis.row(r)[j] as f64).sum();
            if l.is_positive() {
                s.0 += p;
            } else {
                s.1 += p;
            }
        }
        if l.is_positive() {
            np += 1;
        } else {
            nn += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(p, n)| (p / np.max(1) as f64, n / nn.max(1) as f64))
        .collect())
}

/// Flips each basis column so the positive class projects at least as high
/// as the negative class. A column with equal class means is left as is and
/// the direction is marked unoriented.
pub fn orient(dir: &Direction, data: &LabeledActivations) -> Result<Direction> {
    data.require_both()?;
    let means = class_means(dir, data)?;
    let mut out = dir.clone();
    out.oriented = true;
    let (d, k) = (dir.d_model(), dir.k());
    for (j, (p, n)) in means.into_iter().enumerate() {
        if p < n {
            for i in 0..d {
                let v = &mut out.basis.data_mut()[i * k + j];
                *v = -*v;
            }
        } else if p == n {
            out.oriented = false;
        }
    }
    Ok(out)
}

/// Pairwise cosines of `k = 1` directions.
pub fn cosine_matrix(dirs: &[Direction]) -> Result<Tensor> {
    let vs: Vec<Vec<f32>> = dirs.iter().map(Direction::vector).collect::<Result<_>>()?;
    let d = vs.first().map_or(0, Vec::len);
    if vs.iter().any(|v| v.len() != d) {
        return Err(Error::Fit("directions have different widths".into()));
    }
    let m = vs.len();
    let mut out = Tensor::zeros(&[m, m]);
    for i in 0..m {
        for j in 0..m {
            let c = if i == j { 1.0 } else { cosine(&vs[i], &vs[j]) };
            out.data_mut()[i * m + j] = c;
        }
    }
    Ok(out)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)) as f32
    }
}

/// Inner products of the last axis of `x` with each basis column. The model
/// axis is dropped for `k = 1` and replaced by `k` otherwise.
pub fn project(x: &Tensor, dir: &Direction) -> Result<Tensor> {
    let d = dir.d_model();
    let last = x.shape().last().copied().unwrap_or(0);
    if last != d {
        return Err(Error::Shape(format!("project: last extent {last}, expected {d}")));
    }
    let k = dir.k();
    let mut out = Vec::with_capacity(x.len() / d * k);
    for row in x.data().chunks(d) {
        for j in 0..k {
            let mut s = 0.0f64;
            for (i, &v) in row.iter().enumerate() {
                s += v as f64 * dir.basis.data()[i * k + j] as f64;
            }
            out.push(s as f32);
        }
    }
    let mut shape = x.shape()[..x.rank() - 1].to_vec();
    if k > 1 {
        shape.push(k);
    }
    Tensor::new(shape, out)
}

/// Unit vector from an `f64` accumulation, or an error when it is zero.
pub(crate) fn unit(v: &[f64], what: &str) -> Result<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Fit(format!("{what} has zero or non-finite norm")));
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}
