// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by every module of the workbench.
///
/// Variants are grouped by the module that raises them so a CLI failure can
/// be attributed without inspecting the message.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinity appeared in a tensor.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Tokenizer load or decode failure.
    #[error("tokenizer: {0}")]
    Tokenizer(String),

    /// Bundle or fixture container failure.
    #[error("bundle: {0}")]
    Bundle(String),

    /// Forward/reverse execution failure (bad tokens, context overflow, bad hooks).
    #[error("transformer: {0}")]
    Model(String),

    /// Dataset generation or ingestion failure.
    #[error("dataset: {0}")]
    Dataset(String),

    /// Direction fitting failure.
    #[error("directions: {0}")]
    Fit(String),

    /// Intervention construction or execution failure.
    #[error("interventions: {0}")]
    Intervention(String),

    /// Metric computation failure.
    #[error("metrics: {0}")]
    Metric(String),

    /// Experiment driver failure.
    #[error("analysis: {0}")]
    Analysis(String),

    /// Configuration or command-line failure.
    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
