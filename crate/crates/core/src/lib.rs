// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod analysis;
pub mod bundle;
pub mod container;
pub mod datasets;
pub mod directions;
pub mod error;
pub mod fixture;
pub mod interventions;
pub mod metrics;
pub mod numerics;
pub mod tokenizer;
pub mod transformer;

pub use bundle::{ModelBundle, ModelConfig};
pub use error::{Error, Result};
pub use numerics::{SeededRng, Tensor};
pub use tokenizer::{TokenId, Tokenizer};
pub use transformer::{HookPoint, HookSite, Transformer};
