// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense `f32` tensors, deterministic kernels and a seeded generator.

pub mod ops;
mod rng;
mod tensor;

pub use ops::{gelu, layer_norm, matmul, orthonormalize_columns, softmax_rows};
pub use rng::SeededRng;
pub use tensor::Tensor;
