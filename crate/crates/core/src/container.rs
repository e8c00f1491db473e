// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary container shared by model bundles and golden fixtures.
//!
//! Layout:
//!
//! ```text
//! magic            8 bytes, identifies the file kind
//! header length    16 ASCII decimal digits followed by '\n'
//! header           canonical JSON: {"meta": ..., "tensors": [index entries]}
//! payload          raw little-endian values, tensors in index order
//! checksum         first 8 bytes of SHA-256 over all preceding bytes
//! ```
//!
//! Index entries are `{"dtype", "name", "offset", "shape"}` with `offset`
//! counted in bytes from the start of the payload and `dtype` one of `f32`
//! or `u32`. Entries are sorted by name and JSON object keys are sorted, so
//! identical content always serializes to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const LEN_DIGITS: usize = 16;
const CHECKSUM_LEN: usize = 8;

/// One stored array.
#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Tensor),
    U32 { shape: Vec<usize>, data: Vec<u32> },
}

impl Stored {
    fn dtype(&self) -> &'static str {
        match self {
            Stored::F32(_) => "f32",
            Stored::U32 { .. } => "u32",
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::U32 { shape, .. } => shape,
        }
    }

    fn byte_len(&self) -> usize {
        4 * match self {
            Stored::F32(t) => t.len(),
            Stored::U32 { data, .. } => data.len(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    dtype: String,
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<IndexEntry>,
}

/// Parsed container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub arrays: BTreeMap<String, Stored>,
}

/// First 8 bytes of SHA-256 of `bytes`.
pub fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Bundle(msg.into())
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.insert(name.into(), Stored::F32(t));
    }

    pub fn insert_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        self.arrays.insert(name.into(), Stored::U32 { shape, data });
    }

    pub fn f32(&self, name: &str) -> Result<&Tensor> {
        match self.arrays.get(name) {
            Some(Stored::F32(t)) => Ok(t),
            Some(_) => Err(bad(format!("{name} is not f32"))),
            None => Err(bad(format!("missing array {name}"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<&[u32]> {
        match self.arrays.get(name) {
            Some(Stored::U32 { data, .. }) => Ok(data),
            Some(_) => Err(bad(format!("{name} is not u32"))),
            None => Err(bad(format!("missing array {name}"))),
        }
    }

    /// Serializes with the given 8-byte magic.
    pub fn to_bytes(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut index = Vec::with_capacity(self.arrays.len());
        for (name, arr) in &self.arrays {
            index.push(IndexEntry {
                dtype: arr.dtype().into(),
                name: name.clone(),
                offset,
                shape: arr.shape().to_vec(),
            });
            offset += arr.byte_len();
        }
        let header = serde_json::to_value(Header {
            meta: self.meta.clone(),
            tensors: index,
        })?;
        let header = serde_json::to_string(&header)?;
        let mut out = Vec::with_capacity(8 + LEN_DIGITS + 1 + header.len() + offset + CHECKSUM_LEN);
        out.extend_from_slice(magic);
        out.extend_from_slice(format!("{:0width$}\n", header.len(), width = LEN_DIGITS).as_bytes());
        out.extend_from_slice(header.as_bytes());
        for arr in self.arrays.values() {
            match arr {
                Stored::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Stored::U32 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        Ok(out)
    }

    /// Parses bytes, checking magic, checksum and every index entry.
    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        let prefix = 8 + LEN_DIGITS + 1;
        if bytes.len() < prefix + CHECKSUM_LEN {
            return Err(bad("truncated file"));
        }
        if &bytes[..8] != magic {
            return Err(bad(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            )));
        }
        let len_field = std::str::from_utf8(&bytes[8..8 + LEN_DIGITS])
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| bad("header length is not decimal"))?;
        if bytes[8 + LEN_DIGITS] != b'\n' {
            return Err(bad("header length not newline-terminated"));
        }
        let header_len: usize = len_field.parse().map_err(|_| bad("header length overflow"))?;
        let payload_start = prefix
            .checked_add(header_len)
            .filter(|&p| p + CHECKSUM_LEN <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let body_end = bytes.len() - CHECKSUM_LEN;
        if checksum(&bytes[..body_end]) != bytes[body_end..] {
            return Err(bad("checksum mismatch (corrupt or truncated file)"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[prefix..payload_start]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[payload_start..body_end];

        let mut arrays = BTreeMap::new();
        let mut expected_offset = 0;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(bad(format!("{}: offset {} out of sequence", e.name, e.offset)));
            }
            let end = e.offset + 4 * n;
            let raw = payload
                .get(e.offset..end)
                .ok_or_else(|| bad(format!("{}: data truncated", e.name)))?;
            let words = raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
            let arr = match e.dtype.as_str() {
                "f32" => Stored::F32(Tensor::new(e.shape, words.map(f32::from_le_bytes).collect())?),
                "u32" => Stored::U32 {
                    shape: e.shape,
                    data: words.map(u32::from_le_bytes).collect(),
                },
                other => return Err(bad(format!("{}: unsupported dtype {other}", e.name))),
            };
            if arrays.insert(e.name.clone(), arr).is_some() {
                return Err(bad(format!("duplicate entry {}", e.name)));
            }
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(bad("payload length disagrees with index"));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<()> {
        fs::write(path, self.to_bytes(magic)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, magic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    fn sample() -> Container {
        let mut c = Container::new(serde_json::json!({"b": 1, "a": [1, 2]}));
        c.insert_f32("x", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap());
        c.insert_u32("ids", vec![3], vec![7, 8, 50256]);
        c
    }

    #[test]
    fn round_trip_bitwise() {
        let c = sample();
        let bytes = c.to_bytes(MAGIC).unwrap();
        let back = Container::from_bytes(&bytes, MAGIC).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(MAGIC).unwrap(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().to_bytes(MAGIC).unwrap();
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 12] ^= 1;
        assert!(Container::from_bytes(&flipped, MAGIC).is_err());
        assert!(Container::from_bytes(&bytes[..n - 3], MAGIC).is_err());
        assert!(Container::from_bytes(&bytes, b"OTHERMAG").is_err());
    }
}
