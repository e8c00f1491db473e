// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE compatible with GPT-2's `encoder.json` and `vocab.bpe`.
//!
//! Text is pre-split with the GPT-2 pattern
//! `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`.
//! The `regex` crate has no lookahead, so whitespace runs are matched
//! greedily and then shortened by one character when a non-space follows.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;

use crate::error::{Error, Result};

/// Token id type.
pub type TokenId = u32;

/// Vocabulary entry matched verbatim in input text instead of being split.
pub const END_OF_TEXT: &str = "<|endoftext|>";

const SPLIT_PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+";

/// GPT-2 byte to printable-character table and its inverse.
fn byte_tables() -> ([char; 256], HashMap<char, u8>) {
    let mut printable = vec![false; 256];
    for b in (b'!'..=b'~').chain(0xA1..=0xAC).chain(0xAE..=0xFF) {
        printable[b as usize] = true;
    }
    let mut enc = ['\0'; 256];
    let mut n = 0u32;
    for b in 0..256usize {
        enc[b] = if printable[b] {
            char::from_u32(b as u32).unwrap()
        } else {
            n += 1;
            char::from_u32(255 + n).unwrap()
        };
    }
    let dec = enc.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
    (enc, dec)
}

/// A loaded GPT-2 style tokenizer. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    encoder: HashMap<String, TokenId>,
    decoder: Vec<String>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    byte_enc: [char; 256],
    byte_dec: HashMap<char, u8>,
    splitter: Regex,
}

impl Tokenizer {
    /// Loads `encoder.json`-style vocabulary and `vocab.bpe`-style merges.
    pub fn load(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Self> {
        let vocab = fs::read_to_string(vocab_path.as_ref())?;
        let merges = fs::read_to_string(merges_path.as_ref())?;
        Self::from_strs(&vocab, &merges)
    }

    /// The GPT-2 vocabulary and merges shipped with this crate.
    pub fn gpt2() -> Result<Self> {
        Self::from_strs(
            include_str!("../data/gpt2/encoder.json"),
            include_str!("../data/gpt2/vocab.bpe"),
        )
    }

    /// Parses the two files from memory.
    pub fn from_strs(vocab_json: &str, merges_text: &str) -> Result<Self> {
        let vocab: HashMap<String, i64> =
            serde_json::from_str(vocab_json).map_err(|e| Error::Tokenizer(format!("vocabulary file: {e}")))?;
        let mut merges = Vec::new();
        for (lineno, line) in merges_text.lines().enumerate() {
            if lineno == 0 && line.starts_with("#version") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Tokenizer(format!(
                        "merges line {}: expected two symbols, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        let mut checked = HashMap::with_capacity(vocab.len());
        for (tok, id) in vocab {
            let id =
                TokenId::try_from(id).map_err(|_| Error::Tokenizer(format!("token {tok:?} has invalid id {id}")))?;
            checked.insert(tok, id);
        }
        Self::from_parts(checked, merges)
    }

    /// Builds a tokenizer from an in-memory vocabulary and ordered merges.
    pub fn from_parts(encoder: HashMap<String, TokenId>, merges: Vec<(String, String)>) -> Result<Self> {
        let size = encoder.len();
        let mut decoder: Vec<Option<String>> = vec![None; size];
        for (tok, &id) in &encoder {
            let slot = decoder
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} of {tok:?} outside [0, {size})")))?;
            if let Some(prev) = slot {
                return Err(Error::Tokenizer(format!("duplicate id {id} for {prev:?} and {tok:?}")));
            }
            *slot = Some(tok.clone());
        }
        let decoder: Vec<String> = decoder.into_iter().map(Option::unwrap).collect();

        let (byte_enc, byte_dec) = byte_tables();
        for c in byte_enc {
            if !encoder.contains_key(c.encode_utf8(&mut [0; 4]) as &str) {
                return Err(Error::Tokenizer(format!(
                    "vocabulary lacks the single-byte symbol {c:?}"
                )));
            }
        }

        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::Tokenizer(format!("duplicate merge {pair:?}")));
            }
        }

        Ok(Self {
            encoder,
            decoder,
            merges,
            ranks,
            byte_enc,
            byte_dec,
            splitter: Regex::new(SPLIT_PATTERN).expect("static pattern"),
        })
    }

    /// Writes the vocabulary and merges in the same formats `load` reads.
    pub fn save(&self, vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> = self
            .decoder
            .iter()
            .enumerate()
            .map(|(id, tok)| (tok.clone(), serde_json::Value::from(id as u64)))
            .collect();
        fs::write(vocab_path.as_ref(), serde_json::to_string(&map)?)?;
        let mut text = String::from("#version: 0.2\n");
        for (a, b) in &self.merges {
            text.push_str(a);
            text.push(' ');
            text.push_str(b);
            text.push('\n');
        }
        fs::write(merges_path.as_ref(), text)?;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Id of an exact vocabulary string (in byte-encoded form).
    pub fn token_to_id(&self, token: &str) -> Option<TokenId> {
        self.encoder.get(token).copied()
    }

    /// Vocabulary string (in byte-encoded form) of an id.
    pub fn id_to_token(&self, id: TokenId) -> Option<&str> {
        self.decoder.get(id as usize).map(String::as_str)
    }

    /// Pre-tokenization pieces of `text`, as byte ranges.
    pub fn pre_split(&self, text: &str) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let m = self
                .splitter
                .find_at(text, pos)
                .expect("every character matches some alternative");
            let mut end = m.end();
            let piece = m.as_str();
            if piece.starts_with(char::is_whitespace) && end < text.len() {
                let chars = piece.chars().count();
                if piece.chars().all(char::is_whitespace) && chars > 1 {
                    let last = piece.char_indices().last().unwrap().0;
                    end = m.start() + last;
                }
            }
            out.push(m.start()..end);
            pos = end;
        }
        out
    }

    fn bpe(&self, word: &str, out: &mut Vec<TokenId>) {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        while symbols.len() > 1 {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..symbols.len() - 1 {
                let key = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&r) = self.ranks.get(&key) {
                    if best.is_none_or(|(br, _)| r < br) {
                        best = Some((r, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == a && &symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        for s in symbols {
            match self.encoder.get(&s) {
                Some(&id) => out.push(id),
                None => {
                    for c in s.chars() {
                        out.push(self.encoder[c.encode_utf8(&mut [0; 4]) as &str]);
                    }
                }
            }
        }
    }

    /// Encodes text. Occurrences of `<|endoftext|>` map to its id when the
    /// vocabulary defines it.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        let special = self.token_to_id(END_OF_TEXT);
        let mut rest = text;
        loop {
            let cut = special.and_then(|_| rest.find(END_OF_TEXT));
            let plain = &rest[..cut.unwrap_or(rest.len())];
            for r in self.pre_split(plain) {
                let word: String = plain[r].bytes().map(|b| self.byte_enc[b as usize]).collect();
                self.bpe(&word, &mut ids);
            }
            match (cut, special) {
                (Some(c), Some(id)) => {
                    ids.push(id);
                    rest = &rest[c + END_OF_TEXT.len()..];
                }
                _ => break,
            }
        }
        ids
    }

    /// Raw bytes of one token.
    pub fn token_bytes(&self, id: TokenId) -> Result<Vec<u8>> {
        let tok = self
            .id_to_token(id)
            .ok_or_else(|| Error::Tokenizer(format!("unknown id {id}")))?;
        tok.chars()
            .map(|c| {
                self.byte_dec
                    .get(&c)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("token {id} has non-byte symbol {c:?}")))
            })
            .collect()
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend(self.token_bytes(id)?);
        }
        Ok(out)
    }

    /// Decodes to text; invalid UTF-8 (split multi-byte characters) is
    /// replaced with U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Decodes each token on its own.
    pub fn decode_each(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.decode(&[id])).collect()
    }

    /// Byte offset in the decoded text at which each token ends.
    pub fn token_end_offsets(&self, ids: &[TokenId]) -> Result<Vec<usize>> {
        let mut ends = Vec::with_capacity(ids.len());
        let mut total = 0;
        for &id in ids {
            total += self.token_bytes(id)?.len();
            ends.push(total);
        }
        Ok(ends)
    }
}
