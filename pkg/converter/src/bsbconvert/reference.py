"""Reference activations from an independent forward pass.

The parity contract between this package and the encoder stack is a
JSON file of per-sentence rows:

    {"sentence": ..., "logits_digest": ..., "logits": [[...]],
     "embedding": [...], "tolerance": 1e-5}

computed here with a self-contained tokenizer and a self-contained
float64 forward pass over the converted checkpoint. Nothing in this
module is shared with the primary implementation, so agreement within
the stated tolerance checks the mathematics across implementations, not
just the serialization. logits_digest is the SHA-256 of the f32
little-endian logits bytes and identifies a row exactly; comparisons
against another implementation use the value arrays and the tolerance.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import unicodedata
from pathlib import Path

import numpy as np

from .convert import SPECIAL_TOKENS, ConversionError, expected_shapes
from .manifest import ConversionManifest

TOLERANCE = 1e-5

_TURKISH_MAP = str.maketrans({"İ": "i", "I": "ı"})
_erf = np.vectorize(math.erf)


def read_native_checkpoint(path) -> tuple:
    """Parse a native checkpoint into (config dict, name -> f32 array)."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ConversionError(f"{path}: shorter than the 8-byte length prefix")
    (n,) = struct.unpack("<Q", blob[:8])
    try:
        header = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConversionError(f"{path}: bad header: {e}") from None
    cfg = header.pop("config", None)
    header.pop("aliases", None)
    if not isinstance(cfg, dict):
        raise ConversionError(f"{path}: header has no config object")
    payload = blob[8 + n:]
    tensors: dict = {}
    for name, entry in header.items():
        off, length = entry["offset"], entry["length"]
        data = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=off)
        tensors[name] = data.reshape(tuple(entry["shape"]))
    missing = expected_shapes(cfg).keys() - tensors.keys()
    if missing:
        raise ConversionError(f"{path}: checkpoint missing {sorted(missing)[:3]}")
    return cfg, tensors


def load_vocab_file(path) -> list:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    if not tokens or tokens[0] != "[PAD]":
        raise ConversionError(f"{path}: vocab line 0 must be [PAD]")
    return tokens


def _normalize(text: str) -> list:
    s = unicodedata.normalize("NFC", text)
    s = s.translate(_TURKISH_MAP).lower()
    s = unicodedata.normalize("NFC", s)
    return s.split()


def _wordpiece(word: str, token_ids: dict) -> list:
    if len(word) > 100:
        return ["[UNK]"]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in token_ids:
                match = piece
                break
            end -= 1
        if match is None:
            return ["[UNK]"]
        pieces.append(match)
        start = end
    return pieces


def tokenize(text: str, tokens: list) -> tuple:
    """Frame one sentence: (ids, pool_mask) with pool_mask marking the
    non-special positions that sentence embeddings average over."""
    token_ids = {t: i for i, t in enumerate(tokens)}
    pieces = ["[CLS]"]
    for word in _normalize(text):
        pieces.extend(_wordpiece(word, token_ids))
    pieces.append("[SEP]")
    ids = [token_ids[p] for p in pieces]
    pool = [p not in SPECIAL_TOKENS for p in pieces]
    return np.array(ids, dtype=np.int64), np.array(pool, dtype=bool)


def _layer_norm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _gelu(x, form):
    if form == "gelu":
        return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward_single(cfg: dict, tensors: dict, ids: np.ndarray) -> tuple:
    """Float64 encoder pass over one unpadded sentence.

    Returns (hidden [T, H], logits [T, V]).
    """
    w = {name: np.asarray(arr, dtype=np.float64) for name, arr in tensors.items()}
    t = len(ids)
    if t > cfg["max_position_embeddings"]:
        raise ConversionError(
            f"sentence needs {t} positions, model has {cfg['max_position_embeddings']}"
        )
    h, a = cfg["hidden_size"], cfg["num_attention_heads"]
    dh = h // a
    eps = cfg["layer_norm_eps"]
    form = cfg["activation"]

    x = w["embeddings.word"][ids] + w["embeddings.position"][:t] \
        + w["embeddings.token_type"][0]
    x = _layer_norm(x, w["embeddings.norm.gamma"], w["embeddings.norm.beta"], eps)

    for li in range(cfg["num_hidden_layers"]):
        p = f"layer.{li}"

        def head_split(name):
            y = x @ w[f"{p}.attn.{name}.weight"] + w[f"{p}.attn.{name}.bias"]
            return y.reshape(t, a, dh).transpose(1, 0, 2)

        q, k, v = head_split("query"), head_split("key"), head_split("value")
        probs = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
        ctx = (probs @ v).transpose(1, 0, 2).reshape(t, h)
        attn = ctx @ w[f"{p}.attn.output.weight"] + w[f"{p}.attn.output.bias"]
        x = _layer_norm(x + attn, w[f"{p}.attn.norm.gamma"], w[f"{p}.attn.norm.beta"], eps)
        ffn = _gelu(x @ w[f"{p}.ffn.intermediate.weight"]
                    + w[f"{p}.ffn.intermediate.bias"], form)
        ffn = ffn @ w[f"{p}.ffn.output.weight"] + w[f"{p}.ffn.output.bias"]
        x = _layer_norm(x + ffn, w[f"{p}.ffn.norm.gamma"], w[f"{p}.ffn.norm.beta"], eps)

    y = _gelu(x @ w["mlm.transform.weight"] + w["mlm.transform.bias"], form)
    y = _layer_norm(y, w["mlm.norm.gamma"], w["mlm.norm.beta"], eps)
    logits = y @ w["embeddings.word"].T + w["mlm.output_bias"]
    return x, logits


def reference_rows(cfg: dict, tensors: dict, tokens: list, sentences) -> list:
    rows = []
    for sentence in sentences:
        ids, pool = tokenize(sentence, tokens)
        if not pool.any():
            raise ConversionError(f"sentence has no word pieces to pool: {sentence!r}")
        hidden, logits = forward_single(cfg, tensors, ids)
        digest = hashlib.sha256(
            np.ascontiguousarray(logits, dtype="<f4").tobytes()
        ).hexdigest()
        rows.append({
            "sentence": sentence,
            "logits_digest": digest,
            "logits": [[float(v) for v in row] for row in logits],
            "embedding": [float(v) for v in hidden[pool].mean(axis=0)],
            "tolerance": TOLERANCE,
        })
    return rows


def emit_reference(manifest: ConversionManifest, sentences=None) -> list:
    """Write the reference JSON for the manifest's converted model.

    Uses the manifest's reference_sentences when `sentences` is None; an
    empty list yields an empty but valid JSON file.
    """
    if sentences is None:
        sentences = manifest.reference_sentences
    cfg, tensors = read_native_checkpoint(manifest.out_checkpoint)
    tokens = load_vocab_file(manifest.out_vocab)
    rows = reference_rows(cfg, tensors, tokens, sentences)
    out = manifest.reference_path
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, ensure_ascii=False) + "\n", encoding="utf-8")
    return rows
