#!/usr/bin/env python3
# SPDX-License-Identifier: MIT OR Apache-2.0
"""Writes the tokenizer golden corpus using the reference GPT-2 tokenizer."""

import json
import sys
from pathlib import Path

from transformers import GPT2Tokenizer

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "crates/core/data/gpt2"
OUT = ROOT / "crates/core/tests/fixtures/tokenizer_golden.jsonl"

STRINGS = [
    "",
    " ",
    "Hello world",
    "I thought this movie was perfect, I enjoyed it.\nConclusion: This movie is",
    "I thought this movie was disgusting, I despised it.\nConclusion: This movie is",
    "John hates parties, and avoids them whenever possible. Anne loves parties, and joins them whenever possible. One day, they were invited to a grand gala. Anne feels very",
    "Review Text: a gorgeous, witty, seductive movie., Review Sentiment:",
    "the film is strictly routine. Overall the movie was very",
    "You never fail. Don't doubt it. I am not uncertain",
    "I really enjoyed the movie, in fact I loved it. I thought the movie was just very",
    "I'm sure it's what they'd want; we'll see, you've been told, she's here.",
    "DON'T SHOUT'S 'quoted' ''double''",
    "  leading spaces",
    "trailing spaces   ",
    "tabs\tand\t\ttabs",
    "line one\n\nline three\n",
    "\n\n\n",
    "multiple     internal      gaps",
    "numbers 123 4567 89.01 1,000,000",
    "mixed abc123def 456ghi",
    "punctuation!!! ??? ... --- ;;; :::",
    "email@example.com and https://example.org/path?q=1&r=2",
    "café naïve résumé coöperate",
    "Ünïcödé ÄÖÜ ß",
    "日本語のテキスト",
    "中文文本测试",
    "한국어 텍스트",
    "Русский текст здесь",
    "Ελληνικά γράμματα",
    "עברית טקסט",
    "العربية نص",
    "emoji 😀🎉👍🏽 family 👨‍👩‍👧",
    "math ∑ ∫ √ ∞ ≠ ≤",
    "non breaking space",
    "ideographic　space",
    "control\x1cchars\x1fhere",
    "carriage\r\nreturn",
    "form\x0cfeed and vertical\x0btab",
    "zero​width",
    "<|endoftext|>",
    "a",
    "A",
    "'",
    "'s",
    " 's",
    "x's y't z're w've v'm u'll t'd",
    "supercalifragilisticexpialidocious",
    "The quick brown fox jumps over the lazy dog.",
    "    def foo(bar):\n        return bar * 2\n",
    "½ ⅓ ¾ Ⅻ ① ²",
]


def main() -> int:
    assert len(STRINGS) == 50, len(STRINGS)
    tok = GPT2Tokenizer(str(DATA / "encoder.json"), str(DATA / "vocab.bpe"))
    with OUT.open("w", encoding="utf-8") as f:
        for s in STRINGS:
            ids = tok.encode(s)
            assert tok.decode(ids) == s
            f.write(json.dumps({"text": s, "ids": ids}, ensure_ascii=False) + "\n")
    print(f"wrote {len(STRINGS)} records to {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
