// SPDX-License-Identifier: MIT OR Apache-2.0

//! Raw-text corpus sampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::tokenizer::{TokenId, Tokenizer};

/// Reads every regular file in `dir` (sorted by name), splits each into
/// documents at blank lines, shuffles documents with `seed`, and encodes
/// them in that order, truncating each to `n_ctx` tokens until `max_tokens`
/// tokens have been taken.
pub fn load_corpus(
    dir: impl AsRef<Path>,
    tok: &Tokenizer,
    max_tokens: usize,
    n_ctx: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut docs = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::Dataset(format!("{}: {e}", f.display())))?;
        docs.extend(
            text.replace("\r\n", "\n")
                .split("\n\n")
                .map(str::trim)
                .filter(|d| !d.is_empty())
                .map(str::to_owned),
        );
    }
    if docs.is_empty() {
        return Err(Error::Dataset(format!("empty corpus at {}", dir.display())));
    }
    if n_ctx == 0 {
        return Err(Error::Dataset("n_ctx must be positive".into()));
    }
    SeededRng::new(seed).shuffle(&mut docs);
    let mut out = Vec::new();
    let mut left = max_tokens;
    for d in docs {
        if left == 0 {
            break;
        }
        let mut ids = tok.encode(&d);
        ids.truncate(n_ctx.min(left));
        if ids.is_empty() {
            continue;
        }
        left -= ids.len();
        out.push(ids);
    }
    Ok(out)
}
