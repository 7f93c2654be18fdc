"""Synthetic source models for round-trip testing.

Writes a directory shaped exactly like a published BERT checkpoint:
config.json with the source ecosystem's key names, model.safetensors
with torch-convention tensor names and layouts (linear weights stored
(out, in)), and a one-token-per-line vocab.txt. By default it includes
the artifacts a real full-model export carries beyond the encoder: a
pooler, a next-sentence head, a position-id buffer, and the tied MLM
decoder duplicates.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from safetensors.numpy import save_file

# whole words plus continuations and single characters so that any
# lowercase Turkish word tokenizes without [UNK]
_WORDS = (
    "kedi", "köpek", "kuş", "balık", "ev", "bahçe", "su", "süt", "çay",
    "kitap", "masa", "okul", "araba", "yol", "gün", "gece", "sabah",
    "uyuyor", "koşuyor", "içiyor", "okuyor", "geliyor", "gidiyor",
    "büyük", "küçük", "eski", "yeni", "güzel", "hızlı", "yavaş",
    "bir", "bu", "şu", "ve", "ile", "çok", "az", "iki", "üç",
)
_PIECES = ("##ler", "##lar", "##de", "##da", "##den", "##dan", "##si", "##sı",
           "##yor", "##iyor", "##in", "##ın", "##e", "##a", "##i", "##ı")
_CHARS = "abcçdefgğhıijklmnoöprsştuüvyz"


def _vocab_tokens(vocab_size: int) -> list:
    # [PAD] pinned to 0; the other specials sit past a filler block the
    # way published vocabularies lay them out
    tokens = ["[PAD]"]
    tokens += [f"[unused{i}]" for i in range(6)]
    tokens += ["[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    tokens += list(_WORDS) + list(_PIECES)
    tokens += list(_CHARS) + ["##" + c for c in _CHARS]
    tokens = list(dict.fromkeys(tokens))
    if len(tokens) > vocab_size:
        raise ValueError(f"vocab_size must be at least {len(tokens)}")
    tokens += [f"tok{i:04d}" for i in range(vocab_size - len(tokens))]
    return tokens


def synthesize_toy_source(
    out_dir,
    *,
    hidden: int = 32,
    heads: int = 2,
    layers: int = 2,
    vocab_size: int = 160,
    max_position: int = 32,
    seed: int = 0,
    include_pooler: bool = True,
    include_nsp: bool = True,
    include_position_ids: bool = True,
    ln_naming: str = "weight",
) -> Path:
    """Write a toy source model directory and return its path.

    ln_naming "weight" uses LayerNorm.weight/.bias (current exports),
    "gamma" uses LayerNorm.gamma/.beta (older ones).
    """
    if ln_naming not in ("weight", "gamma"):
        raise ValueError(f"ln_naming must be 'weight' or 'gamma', got {ln_naming!r}")
    ln_w, ln_b = ("weight", "bias") if ln_naming == "weight" else ("gamma", "beta")
    intermediate = 4 * hidden
    rng = np.random.default_rng(seed)

    def dense(n_out, n_in):
        return rng.normal(0.0, 0.05, size=(n_out, n_in)).astype(np.float32)

    def vec(n, fill=None):
        if fill is None:
            return rng.normal(0.0, 0.05, size=n).astype(np.float32)
        return np.full(n, fill, dtype=np.float32)

    t: dict = {}
    t["bert.embeddings.word_embeddings.weight"] = dense(vocab_size, hidden)
    t["bert.embeddings.position_embeddings.weight"] = dense(max_position, hidden)
    t["bert.embeddings.token_type_embeddings.weight"] = dense(2, hidden)
    t[f"bert.embeddings.LayerNorm.{ln_w}"] = vec(hidden, 1.0)
    t[f"bert.embeddings.LayerNorm.{ln_b}"] = vec(hidden, 0.0)
    if include_position_ids:
        t["bert.embeddings.position_ids"] = np.arange(max_position, dtype=np.int64)[None, :]
    for i in range(layers):
        base = f"bert.encoder.layer.{i}"
        for part in ("query", "key", "value"):
            t[f"{base}.attention.self.{part}.weight"] = dense(hidden, hidden)
            t[f"{base}.attention.self.{part}.bias"] = vec(hidden)
        t[f"{base}.attention.output.dense.weight"] = dense(hidden, hidden)
        t[f"{base}.attention.output.dense.bias"] = vec(hidden)
        t[f"{base}.attention.output.LayerNorm.{ln_w}"] = vec(hidden, 1.0)
        t[f"{base}.attention.output.LayerNorm.{ln_b}"] = vec(hidden, 0.0)
        t[f"{base}.intermediate.dense.weight"] = dense(intermediate, hidden)
        t[f"{base}.intermediate.dense.bias"] = vec(intermediate)
        t[f"{base}.output.dense.weight"] = dense(hidden, intermediate)
        t[f"{base}.output.dense.bias"] = vec(hidden)
        t[f"{base}.output.LayerNorm.{ln_w}"] = vec(hidden, 1.0)
        t[f"{base}.output.LayerNorm.{ln_b}"] = vec(hidden, 0.0)
    if include_pooler:
        t["bert.pooler.dense.weight"] = dense(hidden, hidden)
        t["bert.pooler.dense.bias"] = vec(hidden)
    t["cls.predictions.bias"] = vec(vocab_size)
    t["cls.predictions.transform.dense.weight"] = dense(hidden, hidden)
    t["cls.predictions.transform.dense.bias"] = vec(hidden)
    t[f"cls.predictions.transform.LayerNorm.{ln_w}"] = vec(hidden, 1.0)
    t[f"cls.predictions.transform.LayerNorm.{ln_b}"] = vec(hidden, 0.0)
    # tied duplicates, exactly as exported state dicts carry them
    t["cls.predictions.decoder.weight"] = t["bert.embeddings.word_embeddings.weight"].copy()
    t["cls.predictions.decoder.bias"] = t["cls.predictions.bias"].copy()
    if include_nsp:
        t["cls.seq_relationship.weight"] = dense(2, hidden)
        t["cls.seq_relationship.bias"] = vec(2)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_file(t, str(out / "model.safetensors"))
    config = {
        "model_type": "bert",
        "vocab_size": vocab_size,
        "hidden_size": hidden,
        "num_hidden_layers": layers,
        "num_attention_heads": heads,
        "intermediate_size": intermediate,
        "hidden_act": "gelu",
        "max_position_embeddings": max_position,
        "type_vocab_size": 2,
        "hidden_dropout_prob": 0.1,
        "attention_probs_dropout_prob": 0.1,
        "initializer_range": 0.02,
        "layer_norm_eps": 1e-12,
    }
    (out / "config.json").write_text(
        json.dumps(config, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / "vocab.txt").write_text(
        "\n".join(_vocab_tokens(vocab_size)) + "\n", encoding="utf-8"
    )
    return out
