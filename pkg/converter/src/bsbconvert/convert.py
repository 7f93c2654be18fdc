"""Checkpoint conversion: safetensors source to the native binary format.

The native checkpoint layout (written here, read by the encoder stack):
an 8-byte little-endian unsigned header length, a UTF-8 JSON header
mapping each tensor name to {dtype, shape, offset, length} plus "config"
and "aliases" entries, then the raw little-endian f32 payload. The tied
MLM decoder is not stored; the aliases entry points it at the word
embeddings.

Conversion fails closed: every source tensor must be either mapped or
explicitly dropped, every mapped shape must match what the model
configuration implies, and tied duplicates are only dropped after their
values are verified to actually be ties.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from safetensors.numpy import load_file

from .manifest import ConversionManifest
from .mapping import default_bert_mapping, default_drop_names

SOURCE_CONFIG = "config.json"
SOURCE_WEIGHTS = "model.safetensors"
SOURCE_VOCAB = "vocab.txt"

ALIASES = {"mlm.decoder.weight": "embeddings.word"}
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

# source hidden_act values accepted for each native activation
_ACTIVATIONS = {
    "gelu": "gelu",
    "gelu_new": "gelu_tanh",
    "gelu_pytorch_tanh": "gelu_tanh",
}


class ConversionError(ValueError):
    """Source model cannot be converted faithfully."""


def native_config(source_cfg: dict) -> dict:
    """Translate a source config.json object to the native config dict.

    Hidden size, heads, layers and vocab size are required; everything
    else falls back to the architecture's standard values.
    """
    for key in ("hidden_size", "num_attention_heads", "num_hidden_layers", "vocab_size"):
        if key not in source_cfg:
            raise ConversionError(f"source config missing {key}")
    act = source_cfg.get("hidden_act", "gelu")
    if act not in _ACTIVATIONS:
        raise ConversionError(f"unsupported hidden_act {act!r}")
    h = int(source_cfg["hidden_size"])
    return {
        "hidden_size": h,
        "num_attention_heads": int(source_cfg["num_attention_heads"]),
        "num_hidden_layers": int(source_cfg["num_hidden_layers"]),
        "intermediate_size": int(source_cfg.get("intermediate_size", 4 * h)),
        "vocab_size": int(source_cfg["vocab_size"]),
        "max_position_embeddings": int(source_cfg.get("max_position_embeddings", 512)),
        "type_vocab_size": int(source_cfg.get("type_vocab_size", 2)),
        "hidden_dropout_prob": float(source_cfg.get("hidden_dropout_prob", 0.1)),
        "attention_dropout_prob": float(source_cfg.get("attention_probs_dropout_prob", 0.1)),
        "initializer_range": float(source_cfg.get("initializer_range", 0.02)),
        "activation": _ACTIVATIONS[act],
        "layer_norm_eps": float(source_cfg.get("layer_norm_eps", 1e-12)),
    }


def expected_shapes(cfg: dict) -> dict:
    """Native tensor name -> shape, in serialization order."""
    h, i = cfg["hidden_size"], cfg["intermediate_size"]
    v, p, tv = cfg["vocab_size"], cfg["max_position_embeddings"], cfg["type_vocab_size"]
    shapes = {
        "embeddings.word": (v, h),
        "embeddings.position": (p, h),
        "embeddings.token_type": (tv, h),
        "embeddings.norm.gamma": (h,),
        "embeddings.norm.beta": (h,),
    }
    for li in range(cfg["num_hidden_layers"]):
        base = f"layer.{li}"
        for part in ("query", "key", "value", "output"):
            shapes[f"{base}.attn.{part}.weight"] = (h, h)
            shapes[f"{base}.attn.{part}.bias"] = (h,)
        shapes[f"{base}.attn.norm.gamma"] = (h,)
        shapes[f"{base}.attn.norm.beta"] = (h,)
        shapes[f"{base}.ffn.intermediate.weight"] = (h, i)
        shapes[f"{base}.ffn.intermediate.bias"] = (i,)
        shapes[f"{base}.ffn.output.weight"] = (i, h)
        shapes[f"{base}.ffn.output.bias"] = (h,)
        shapes[f"{base}.ffn.norm.gamma"] = (h,)
        shapes[f"{base}.ffn.norm.beta"] = (h,)
    shapes["mlm.transform.weight"] = (h, h)
    shapes["mlm.transform.bias"] = (h,)
    shapes["mlm.norm.gamma"] = (h,)
    shapes["mlm.norm.beta"] = (h,)
    shapes["mlm.output_bias"] = (v,)
    return shapes


def load_source(source_dir) -> tuple:
    """Read (config dict, tensor dict) from a source model directory."""
    src = Path(source_dir)
    cfg_path = src / SOURCE_CONFIG
    weights_path = src / SOURCE_WEIGHTS
    for path in (cfg_path, weights_path, src / SOURCE_VOCAB):
        if not path.is_file():
            raise ConversionError(f"source is missing {path.name}: {path}")
    try:
        source_cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConversionError(f"{cfg_path}: not valid JSON: {e}") from None
    if not isinstance(source_cfg, dict):
        raise ConversionError(f"{cfg_path}: config must be a JSON object")
    tensors = load_file(str(weights_path))
    return source_cfg, tensors


def write_native_checkpoint(path, cfg: dict, tensors: dict) -> None:
    """Serialize native-named f32 tensors plus config and tie aliases."""
    header: dict = {}
    chunks: list[bytes] = []
    offset = 0
    for name, array in tensors.items():
        raw = np.ascontiguousarray(array, dtype="<f4").tobytes()
        header[name] = {
            "dtype": "f32",
            "shape": list(array.shape),
            "offset": offset,
            "length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header["config"] = dict(cfg)
    header["aliases"] = dict(ALIASES)
    encoded = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for chunk in chunks:
            fh.write(chunk)


def convert_vocab(source_path, out_path, vocab_size: int) -> int:
    """Validate the one-token-per-line vocabulary and copy it over."""
    lines = Path(source_path).read_text(encoding="utf-8").splitlines()
    if len(lines) != vocab_size:
        raise ConversionError(
            f"vocab has {len(lines)} entries but the config says {vocab_size}"
        )
    if len(set(lines)) != len(lines):
        raise ConversionError("vocab contains duplicate tokens")
    if lines[0] != "[PAD]":
        raise ConversionError(f"vocab line 0 must be [PAD], got {lines[0]!r}")
    missing = [t for t in SPECIAL_TOKENS if t not in set(lines)]
    if missing:
        raise ConversionError(f"vocab missing special tokens: {missing}")
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


@dataclass(frozen=True)
class ConversionResult:
    checkpoint_path: Path
    vocab_path: Path
    log_path: Path
    config: dict
    mapped: tuple    # (source, native, transposed) per tensor written
    dropped: tuple   # source names discarded


def _verify_ties(tensors: dict, dropped: list) -> None:
    """A dropped decoder must really duplicate what the alias points at."""
    pairs = []
    for name in dropped:
        if name.endswith("predictions.decoder.weight"):
            owner = [n for n in tensors if n.endswith("embeddings.word_embeddings.weight")]
            pairs.append((name, owner))
        elif name.endswith("predictions.decoder.bias"):
            owner = [n for n in tensors if n.endswith("predictions.bias")
                     and "decoder" not in n]
            pairs.append((name, owner))
    for name, owner in pairs:
        if len(owner) != 1:
            raise ConversionError(
                f"cannot verify the tie for dropped {name!r}: "
                f"candidate owners {owner}"
            )
        if not np.array_equal(tensors[name], tensors[owner[0]]):
            raise ConversionError(
                f"{name} is not tied to {owner[0]}: values differ, dropping it "
                "would change the model"
            )


def convert(manifest: ConversionManifest) -> ConversionResult:
    """Run a manifest: write the native checkpoint, vocab and log.

    Raises ConversionError when any source tensor is neither mapped nor
    dropped, when a mapped tensor is absent or has the wrong shape, or
    when the mapping misses a native tensor.
    """
    source_cfg, tensors = load_source(manifest.source)
    cfg = native_config(source_cfg)
    shapes = expected_shapes(cfg)

    mapping = manifest.mapping
    if mapping is None:
        mapping = default_bert_mapping(cfg["num_hidden_layers"], tensors.keys())
    dropped = list(manifest.drop) if manifest.drop is not None \
        else default_drop_names(tensors.keys())

    absent = [name for name in dropped if name not in tensors]
    if absent:
        raise ConversionError(f"drop list names absent tensors: {absent[:3]}")
    targets: dict = {}
    for src, native, transpose in mapping:
        if native not in shapes:
            raise ConversionError(f"mapping targets unknown native tensor {native!r}")
        if native in targets:
            raise ConversionError(f"mapping targets {native!r} twice")
        if src not in tensors:
            raise ConversionError(f"mapped source tensor {src!r} is absent")
        targets[native] = (src, transpose)

    # fail closed: a source tensor with no disposition is an error, never
    # a silent skip
    handled = {src for src, _, _ in mapping} | set(dropped)
    unhandled = sorted(set(tensors) - handled)
    if unhandled:
        raise ConversionError(
            f"source tensors neither mapped nor dropped: {unhandled[:5]}"
        )
    missing = [n for n in shapes if n not in targets]
    if missing:
        raise ConversionError(f"mapping produces no value for: {missing[:5]}")

    _verify_ties(tensors, dropped)

    out_tensors: dict = {}
    mapped_log: list = []
    for native, shape in shapes.items():
        src, transpose = targets[native]
        array = tensors[src]
        if transpose:
            array = array.T
        if tuple(array.shape) != shape:
            raise ConversionError(
                f"{src} -> {native}: shape {tuple(array.shape)} does not match "
                f"the config's {shape}"
            )
        out_tensors[native] = np.asarray(array, dtype=np.float32)
        mapped_log.append((src, native, transpose))

    ckpt_path = Path(manifest.out_checkpoint)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    write_native_checkpoint(ckpt_path, cfg, out_tensors)

    vocab_path = Path(manifest.out_vocab)
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    convert_vocab(Path(manifest.source) / SOURCE_VOCAB, vocab_path, cfg["vocab_size"])

    log_path = manifest.log_path
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        for src, native, transposed in mapped_log:
            suffix = " (transposed)" if transposed else ""
            fh.write(f"mapped {src} -> {native}{suffix}\n")
        for name in dropped:
            fh.write(f"dropped {name}\n")
        for alias, owner in ALIASES.items():
            fh.write(f"aliased {alias} -> {owner}\n")

    return ConversionResult(
        checkpoint_path=ckpt_path,
        vocab_path=vocab_path,
        log_path=log_path,
        config=cfg,
        mapped=tuple(mapped_log),
        dropped=tuple(dropped),
    )
