// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment drivers built on the other modules: projection scans,
//! negation statistics, attribution, binned sampling, threshold
//! classification and layer/dimension/head sweeps.

mod attribution;
mod histogram;
mod negation;
mod scan;
mod sweeps;
mod threshold;

pub use attribution::{
    direct_logit_attribution, dla_sites, excess_kurtosis, neuron_alignment, value_weighted_attention, AttributionRow,
    Component, NeuronScore,
};
pub use histogram::{activation_histogram, HistogramRow, HistogramTable, CONTEXT_WINDOW};
pub use negation::{flip_stats, mean_projection, negation_flip_stats, NegationStats};
pub use scan::{scan_projection, scan_tokens, ScanResult};
pub use sweeps::{
    das_dim_sweep, fit_direction, head_attribution_sweep, layer_sweep, DimRow, FitOptions, HeadDamage, LayerRow,
};
pub use threshold::{threshold_classify, LabelLexicon, ThresholdReport, TokenLabel, LABELS_FIXTURE};

use crate::error::{Error, Result};

/// Linearly interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f32], q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Analysis("quantile of empty data".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Analysis(format!("quantile {q} outside [0, 1]")));
    }
    let mut v: Vec<f32> = values.to_vec();
    v.sort_by(f32::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    Ok((v[lo] as f64 * (1.0 - t) + v[hi] as f64 * t) as f32)
}

pub fn median(values: &[f32]) -> Result<f32> {
    quantile(values, 0.5)
}
