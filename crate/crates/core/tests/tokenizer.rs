// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use sentlens::Tokenizer;
use std::sync::OnceLock;

fn gpt2() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| Tokenizer::gpt2().unwrap())
}

#[derive(serde::Deserialize)]
struct Golden {
    text: String,
    ids: Vec<u32>,
}

fn golden() -> Vec<Golden> {
    include_str!("fixtures/tokenizer_golden.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn vocab_size_is_gpt2() {
    assert_eq!(gpt2().vocab_size(), 50257);
}

#[test]
fn golden_ids_match_exactly() {
    let records = golden();
    assert_eq!(records.len(), 50);
    for g in &records {
        assert_eq!(gpt2().encode(&g.text), g.ids, "text {:?}", g.text);
    }
}

#[test]
fn golden_ids_decode_to_text() {
    for g in golden() {
        assert_eq!(gpt2().decode(&g.ids).unwrap(), g.text);
    }
}

#[test]
fn answer_words_are_single_tokens() {
    let t = gpt2();
    for (w, id) in [
        (" great", 1049),
        (" terrible", 7818),
        (" excited", 6568),
        (" nervous", 10927),
    ] {
        assert_eq!(t.encode(w), vec![id]);
    }
}

#[test]
fn single_id_decodes_to_vocab_string() {
    let t = gpt2();
    assert_eq!(t.id_to_token(1049), Some("Ġgreat"));
    assert_eq!(t.decode(&[1049]).unwrap(), " great");
}

#[test]
fn save_and_reload_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (v, m) = (dir.path().join("v.json"), dir.path().join("m.bpe"));
    gpt2().save(&v, &m).unwrap();
    let back = Tokenizer::load(&v, &m).unwrap();
    assert_eq!(back.vocab_size(), gpt2().vocab_size());
    assert_eq!(back.merges(), gpt2().merges());
    for id in (0..50257).step_by(97) {
        assert_eq!(back.id_to_token(id), gpt2().id_to_token(id));
    }
}

#[test]
fn malformed_files_rejected() {
    assert!(Tokenizer::from_strs("not json", "").is_err());
    assert!(Tokenizer::from_strs("{\"a\": 0}", "").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_any_string(s in any::<String>()) {
        let t = gpt2();
        prop_assert_eq!(t.decode(&t.encode(&s)).unwrap(), s);
    }

    #[test]
    fn round_trip_wordlike(s in "[a-zA-Z0-9 ,.'!?\\n\\t]{0,60}") {
        let t = gpt2();
        let ids = t.encode(&s);
        prop_assert_eq!(t.decode(&ids).unwrap(), s.clone());
        prop_assert_eq!(t.encode(&s), ids);
    }
}
