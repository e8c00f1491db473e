// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation-only fits: mean difference, 2-means, first principal
//! component and logistic regression.

use serde::{Deserialize, Serialize};

use super::{orient, unit, Direction, FitReport, LabeledActivations, Method};
use crate::error::{Error, Result};

fn finish(v: &[f64], data: &LabeledActivations, method: Method) -> Result<Direction> {
    let dir = Direction::from_vector(&unit(v, method.code())?, data.site, method)?;
    if data.require_both().is_ok() {
        orient(&dir, data)
    } else {
        Ok(dir)
    }
}

fn class_mean(rows: &[Vec<f64>], pick: impl Fn(usize) -> bool) -> (Vec<f64>, usize) {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    let mut n = 0;
    for (i, r) in rows.iter().enumerate() {
        if pick(i) {
            n += 1;
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
    }
    if n > 0 {
        m.iter_mut().for_each(|a| *a /= n as f64);
    }
    (m, n)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Normalized difference of class means.
pub fn fit_mean_diff(data: &LabeledActivations) -> Result<(Direction, FitReport)> {
    data.require_both()?;
    let rows = data.rows64();
    let (mp, _) = class_mean(&rows, |i| data.labels[i].is_positive());
    let (mn, _) = class_mean(&rows, |i| !data.labels[i].is_positive());
    let diff: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
    let mut dir = Direction::from_vector(&unit(&diff, "mean difference")?, data.site, Method::MeanDiff)?;
    dir.oriented = true;
    let report = FitReport {
        method: Some(Method::MeanDiff),
        iterations: 1,
        converged: true,
        ..Default::default()
    };
    Ok((dir, report))
}

/// 2-means with farthest-pair initialization and Lloyd iterations until the
/// assignment is a fixpoint or 100 iterations pass. The direction runs from
/// centroid 0 to centroid 1 and is then oriented by the labels.
pub fn fit_kmeans(data: &LabeledActivations, seed: u64) -> Result<(Direction, FitReport)> {
    const MAX_ITERS: usize = 100;
    let rows = data.rows64();
    let n = rows.len();
    if n < 2 {
        return Err(Error::Fit("2-means needs at least two rows".into()));
    }
    let (mut bi, mut bj, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist2(&rows[i], &rows[j]);
            if d > best {
                (bi, bj, best) = (i, j, d);
            }
        }
    }
    if best <= 0.0 {
        return Err(Error::Fit("all points are identical".into()));
    }
    let mut cents = [rows[bi].clone(), rows[bj].clone()];
    let mut assign: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        let next: Vec<usize> = rows
            .iter()
            .map(|r| usize::from(dist2(r, &cents[1]) < dist2(r, &cents[0])))
            .collect();
        trace.push(rows.iter().zip(&next).map(|(r, &c)| dist2(r, &cents[c])).sum());
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
        for (c, cent) in cents.iter_mut().enumerate() {
            let (m, count) = class_mean(&rows, |i| assign[i] == c);
            if count > 0 {
                *cent = m;
            }
        }
    }
    let diff: Vec<f64> = cents[1].iter().zip(&cents[0]).map(|(a, b)| a - b).collect();
    let dir = finish(&diff, data, Method::KMeans)?;
    let d = data.d();
    let centroids = crate::numerics::Tensor::new(vec![2, d], cents.iter().flatten().map(|&v| v as f32).collect())?;
    let report = FitReport {
        method: Some(Method::KMeans),
        trace,
        centroids: Some(centroids),
        assignments: Some(assign),
        iterations,
        seed: Some(seed),
        converged,
        ..Default::default()
    };
    Ok((dir, report))
}

/// First principal component by power iteration on the covariance, started
/// from the first standard basis vector (the next one if that lies in the
/// null space).
pub fn fit_pca(data: &LabeledActivations) -> Result<(Direction, FitReport)> {
    const TOL: f64 = 1e-8;
    const MAX_ITERS: usize = 10_000;
    let mut rows = data.rows64();
    let n = rows.len();
    if n < 2 {
        return Err(Error::Fit("PCA needs at least two rows".into()));
    }
    let d = data.d();
    let (mean, _) = class_mean(&rows, |_| true);
    for r in &mut rows {
        r.iter_mut().zip(&mean).for_each(|(a, m)| *a -= m);
    }
    let cov_mul = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for r in &rows {
            let p: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
            out.iter_mut().zip(r).for_each(|(o, a)| *o += p * a);
        }
        out.iter_mut().for_each(|o| *o /= (n - 1) as f64);
        out
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut v = Vec::new();
    let mut w = Vec::new();
    for start in 0..d {
        let mut e = vec![0.0; d];
        e[start] = 1.0;
        let cv = cov_mul(&e);
        if norm(&cv) > 0.0 {
            v = e;
            w = cv;
            break;
        }
    }
    if v.is_empty() {
        return Err(Error::Fit("zero covariance".into()));
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        trace.push(v.iter().zip(&w).map(|(a, b)| a * b).sum());
        let nw = norm(&w);
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < TOL {
            converged = true;
            break;
        }
        w = cov_mul(&v);
        if !(norm(&w) > 0.0) {
            return Err(Error::Fit("power iteration collapsed".into()));
        }
    }
    let dir = finish(&v, data, Method::Pca)?;
    let report = FitReport {
        method: Some(Method::Pca),
        trace,
        iterations,
        converged,
        ..Default::default()
    };
    Ok((dir, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub lr: f64,
    pub steps: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 2000,
            l2: 1e-3,
            seed: 0,
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the L2-regularized logistic loss over
/// standardized features, starting from zero weights. The weight vector is
/// mapped back to raw coordinates and normalized.
pub fn fit_logistic(data: &LabeledActivations, cfg: &LogisticConfig) -> Result<(Direction, FitReport)> {
    data.require_both()?;
    let mut rows = data.rows64();
    let n = rows.len() as f64;
    let d = data.d();
    let (mean, _) = class_mean(&rows, |_| true);
    let mut sd = vec![0.0; d];
    for r in &rows {
        for j in 0..d {
            sd[j] += (r[j] - mean[j]).powi(2);
        }
    }
    for s in &mut sd {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    for r in &mut rows {
        for j in 0..d {
            r[j] = (r[j] - mean[j]) / sd[j];
        }
    }
    let y: Vec<f64> = data
        .labels
        .iter()
        .map(|l| if l.is_positive() { 1.0 } else { 0.0 })
        .collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let logits = |w: &[f64], b: f64| -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    };
    let loss = |t: &[f64], w: &[f64]| -> f64 {
        let data_loss: f64 = t.iter().zip(&y).map(|(&t, &y)| softplus(t) - y * t).sum::<f64>() / n;
        data_loss + 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>()
    };
    for _ in 0..cfg.steps {
        let t = logits(&w, b);
        let l = loss(&t, &w);
        if !l.is_finite() {
            return Err(Error::Fit("logistic regression diverged".into()));
        }
        trace.push(l);
        let mut gw: Vec<f64> = w.iter().map(|v| cfg.l2 * v).collect();
        let mut gb = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let e = (sigmoid(t[i]) - y[i]) / n;
            gb += e;
            gw.iter_mut().zip(r).for_each(|(g, a)| *g += e * a);
        }
        w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= cfg.lr * g);
        b -= cfg.lr * gb;
    }
    let t = logits(&w, b);
    let l = loss(&t, &w);
    if !l.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("logistic regression diverged".into()));
    }
    trace.push(l);
    let correct = t.iter().zip(&y).filter(|(&t, &y)| (t > 0.0) == (y == 1.0)).count();
    let raw: Vec<f64> = w.iter().zip(&sd).map(|(v, s)| v / s).collect();
    let dir = finish(&raw, data, Method::Logistic)?;
    let report = FitReport {
        method: Some(Method::Logistic),
        trace,
        iterations: cfg.steps,
        seed: Some(cfg.seed),
        train_accuracy: Some(correct as f64 / n),
        converged: true,
        ..Default::default()
    };
    Ok((dir, report))
}
