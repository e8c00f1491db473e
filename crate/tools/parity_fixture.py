#!/usr/bin/env python3
# SPDX-License-Identifier: MIT OR Apache-2.0
"""Golden forward-pass fixture for a seeded toy GPT-2.

Regenerates the weights of `ModelBundle::random` (xoshiro256** seeded through
SplitMix64, sorted-name fill order), loads them into the reference
`transformers` GPT-2 implementation and records logits and residual streams
for the parity prompts in the shared container format.
"""

import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "crates/core/data/gpt2"
OUT = ROOT / "crates/core/tests/fixtures/toy_parity.slg"
MAGIC = b"SLGOLDEN"
MASK = (1 << 64) - 1

SEED = 20240901
CONFIG = dict(
    n_layers=2, d_model=16, n_heads=4, d_head=4, d_mlp=64, n_ctx=64,
    vocab_size=50257, ln_eps=1e-5, positional="learned", activation="gelu_tanh",
)
LOGIT_COLUMNS = 512
PROMPTS = [
    "I thought this movie was perfect, I enjoyed it.\nConclusion: This movie is",
    "I thought this movie was disgusting, I despised it.\nConclusion: This movie is",
    "John hates parties, and avoids them whenever possible. Anne loves parties, "
    "and joins them whenever possible. One day, they were invited to a grand gala. Anne feels very",
    "You never fail. Don't doubt it. I am not uncertain",
    "I really enjoyed the movie, in fact I loved it. I thought the movie was just very",
]


class Rng:
    def __init__(self, seed):
        st = seed & MASK
        s = []
        for _ in range(4):
            st = (st + 0x9E3779B97F4A7C15) & MASK
            z = st
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
            s.append(z ^ (z >> 31))
        self.s = s

    def next_u64(self):
        s = self.s
        rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & MASK
        result = (rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        return result

    def uniform(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def expected_tensors(c):
    d, h, dh, m = c["d_model"], c["n_heads"], c["d_head"], c["d_mlp"]
    out = {"embed.W_E": [c["vocab_size"], d], "pos.W_pos": [c["n_ctx"], d]}
    for i in range(c["n_layers"]):
        p = f"blocks.{i}."
        for ln in ("ln1", "ln2"):
            out[p + ln + ".w"] = [d]
            out[p + ln + ".b"] = [d]
        for w in ("W_Q", "W_K", "W_V"):
            out[p + "attn." + w] = [h, d, dh]
        for b in ("b_Q", "b_K", "b_V"):
            out[p + "attn." + b] = [h, dh]
        out[p + "attn.W_O"] = [h, dh, d]
        out[p + "attn.b_O"] = [d]
        out[p + "mlp.W_in"] = [d, m]
        out[p + "mlp.b_in"] = [m]
        out[p + "mlp.W_out"] = [m, d]
        out[p + "mlp.b_out"] = [d]
    out["ln_f.w"] = [d]
    out["ln_f.b"] = [d]
    return dict(sorted(out.items()))


BIASES = {"b", "b_Q", "b_K", "b_V", "b_O", "b_in", "b_out"}


def random_weights(c, seed):
    rng = Rng(seed)
    out = {}
    for name, shape in expected_tensors(c).items():
        leaf = name.rsplit(".", 1)[-1]
        n = int(np.prod(shape))
        vals = np.empty(n, dtype=np.float64)
        for i in range(n):
            s = 2.0 * rng.uniform() - 1.0
            vals[i] = 1.0 + 0.2 * s if leaf == "w" else (0.1 * s if leaf in BIASES else 0.4 * s)
        out[name] = vals.astype(np.float32).reshape(shape)
    return out


def hf_model(c, w):
    d, h, dh = c["d_model"], c["n_heads"], c["d_head"]
    cfg = GPT2Config(
        vocab_size=c["vocab_size"], n_positions=c["n_ctx"], n_embd=d, n_layer=c["n_layers"],
        n_head=h, n_inner=c["d_mlp"], activation_function="gelu_new",
        layer_norm_epsilon=c["ln_eps"], resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0,
        tie_word_embeddings=True,
    )
    model = GPT2LMHeadModel(cfg).eval()
    sd = {}
    t = lambda a: torch.from_numpy(np.ascontiguousarray(a))
    sd["transformer.wte.weight"] = t(w["embed.W_E"])
    sd["transformer.wpe.weight"] = t(w["pos.W_pos"])
    for i in range(c["n_layers"]):
        p, q = f"blocks.{i}.", f"transformer.h.{i}."
        sd[q + "ln_1.weight"] = t(w[p + "ln1.w"])
        sd[q + "ln_1.bias"] = t(w[p + "ln1.b"])
        sd[q + "ln_2.weight"] = t(w[p + "ln2.w"])
        sd[q + "ln_2.bias"] = t(w[p + "ln2.b"])
        qkv_w = [w[p + "attn." + k].transpose(1, 0, 2).reshape(d, h * dh) for k in ("W_Q", "W_K", "W_V")]
        qkv_b = [w[p + "attn." + k].reshape(h * dh) for k in ("b_Q", "b_K", "b_V")]
        sd[q + "attn.c_attn.weight"] = t(np.concatenate(qkv_w, axis=1))
        sd[q + "attn.c_attn.bias"] = t(np.concatenate(qkv_b))
        sd[q + "attn.c_proj.weight"] = t(w[p + "attn.W_O"].reshape(h * dh, d))
        sd[q + "attn.c_proj.bias"] = t(w[p + "attn.b_O"])
        sd[q + "mlp.c_fc.weight"] = t(w[p + "mlp.W_in"])
        sd[q + "mlp.c_fc.bias"] = t(w[p + "mlp.b_in"])
        sd[q + "mlp.c_proj.weight"] = t(w[p + "mlp.W_out"])
        sd[q + "mlp.c_proj.bias"] = t(w[p + "mlp.b_out"])
    sd["transformer.ln_f.weight"] = t(w["ln_f.w"])
    sd["transformer.ln_f.bias"] = t(w["ln_f.b"])
    sd["lm_head.weight"] = sd["transformer.wte.weight"]
    missing, unexpected = model.load_state_dict(sd, strict=False)
    assert not unexpected, unexpected
    assert all(".attn.bias" in k or "masked_bias" in k for k in missing), missing
    return model


def write_container(path, meta, arrays):
    index, payload, offset = [], bytearray(), 0
    for name in sorted(arrays):
        dtype, arr = arrays[name]
        raw = np.ascontiguousarray(arr, dtype="<f4" if dtype == "f32" else "<u4").tobytes()
        index.append({"dtype": dtype, "name": name, "offset": offset, "shape": list(arr.shape)})
        payload += raw
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True, separators=(",", ":"),
                        ensure_ascii=False).encode()
    body = MAGIC + f"{len(header):016d}\n".encode() + header + bytes(payload)
    path.write_bytes(body + hashlib.sha256(body).digest()[:8])


def main() -> int:
    tok = GPT2Tokenizer(str(DATA / "encoder.json"), str(DATA / "vocab.bpe"))
    weights = random_weights(CONFIG, SEED)
    model = hf_model(CONFIG, weights)
    arrays = {}
    for i, text in enumerate(PROMPTS):
        ids = tok.encode(text)
        assert len(ids) <= CONFIG["n_ctx"]
        with torch.no_grad():
            out = model(torch.tensor([ids]), output_hidden_states=True)
        logits = out.logits[0].numpy()
        arrays[f"prompt.{i}.tokens"] = ("u32", np.array(ids, dtype=np.uint32))
        arrays[f"prompt.{i}.logits_last"] = ("f32", logits[-1])
        arrays[f"prompt.{i}.logits_cols"] = ("f32", logits[:, :LOGIT_COLUMNS])
        # hidden_states[L+1] is resid_post of block L, except the last one,
        # which has the final layer norm applied.
        for layer in range(CONFIG["n_layers"] - 1):
            arrays[f"prompt.{i}.resid_post.{layer}"] = ("f32", out.hidden_states[layer + 1][0].numpy())
    meta = {
        "kind": "golden_forward",
        "model": {"config": CONFIG, "random_seed": SEED, "tied_unembed": True},
        "logit_columns": LOGIT_COLUMNS,
        "prompts": PROMPTS,
        "reference": f"transformers {__import__('transformers').__version__}, torch {torch.__version__}",
    }
    write_container(OUT, meta, arrays)
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
