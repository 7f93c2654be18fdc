"""Binary model checkpoints.

Layout, all little-endian:

    bytes 0..8    header length N as unsigned 64-bit
    bytes 8..8+N  UTF-8 JSON: tensor name -> {dtype, shape, offset, length},
                  plus "config" (the ModelConfig fields) and "aliases"
                  (tied names, e.g. the MLM decoder pointing at the token
                  embeddings)
    bytes 8+N..   raw IEEE-754 32-bit float payload; each tensor's bytes
                  sit at its declared offset within this blob

Tied tensors are stored once under the owning name. Values are always
written as f32 regardless of the in-memory dtype; loading yields an f32
store (use ParameterStore.astype to widen for training).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .encoder import ModelConfig, ParameterStore, parameter_shapes
from .tensor import Tensor

ALIASES = {"mlm.decoder.weight": "embeddings.word"}

_HEADER_LEN_BYTES = 8
# refuse absurd header lengths instead of trying a giant allocation
_MAX_HEADER = 1 << 26


class FormatError(ValueError):
    """Structurally broken checkpoint file. `offset` is the byte position
    at which the file stopped making sense."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(ValueError):
    """Well-formed file whose contents contradict its own config."""


def save_checkpoint(path, store: ParameterStore) -> None:
    header: dict = {}
    chunks: list[bytes] = []
    offset = 0
    for name, tensor in store.items():
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        header[name] = {
            "dtype": "f32",
            "shape": list(tensor.data.shape),
            "offset": offset,
            "length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header["config"] = store.config.to_dict()
    header["aliases"] = dict(ALIASES)
    encoded = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for chunk in chunks:
            fh.write(chunk)


def read_header(path) -> dict:
    """Parse and return just the JSON header (config, aliases, tensor map)."""
    with open(path, "rb") as fh:
        prefix = fh.read(_HEADER_LEN_BYTES)
        if len(prefix) < _HEADER_LEN_BYTES:
            raise FormatError("file shorter than the 8-byte length prefix", len(prefix))
        (n,) = struct.unpack("<Q", prefix)
        if n > _MAX_HEADER:
            raise FormatError(f"header length {n} is implausible", 0)
        raw = fh.read(n)
    if len(raw) < n:
        raise FormatError(f"header truncated: need {n} bytes, have {len(raw)}",
                          _HEADER_LEN_BYTES + len(raw))
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid UTF-8 JSON: {e}", _HEADER_LEN_BYTES) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", _HEADER_LEN_BYTES)
    return header


def load_checkpoint(path) -> ParameterStore:
    """Read a checkpoint; the returned store carries its config.

    Raises FormatError for truncation or malformed structure (nothing
    partial is ever returned) and ValidationError when tensor names or
    shapes disagree with the embedded config.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER_LEN_BYTES:
        raise FormatError("file shorter than the 8-byte length prefix", len(blob))
    (n,) = struct.unpack("<Q", blob[:_HEADER_LEN_BYTES])
    if n > _MAX_HEADER:
        raise FormatError(f"header length {n} is implausible", 0)
    body_start = _HEADER_LEN_BYTES + n
    if len(blob) < body_start:
        raise FormatError(f"header truncated: need {n} bytes, have {len(blob) - 8}", len(blob))
    try:
        header = json.loads(blob[_HEADER_LEN_BYTES:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid UTF-8 JSON: {e}", _HEADER_LEN_BYTES) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", _HEADER_LEN_BYTES)
    if "config" not in header:
        raise FormatError("header missing the config object", _HEADER_LEN_BYTES)
    config_dict = header.pop("config")
    aliases = header.pop("aliases", {})
    try:
        config = ModelConfig.from_dict(config_dict)
    except (ValueError, TypeError) as e:
        raise ValidationError(f"bad config object: {e}") from None

    expected = parameter_shapes(config)
    missing = expected.keys() - header.keys()
    if missing:
        raise ValidationError(f"checkpoint missing tensors: {sorted(missing)[:3]}")
    extra = header.keys() - expected.keys()
    if extra:
        raise ValidationError(f"checkpoint has unknown tensors: {sorted(extra)[:3]}")
    for alias, target in aliases.items():
        if target not in header:
            raise ValidationError(f"alias {alias!r} points at absent tensor {target!r}")

    payload = blob[body_start:]
    tensors: dict[str, Tensor] = {}
    for name, shape in expected.items():
        entry = header[name]
        if not isinstance(entry, dict):
            raise FormatError(f"tensor entry {name!r} is not an object", body_start)
        if entry.get("dtype") != "f32":
            raise FormatError(f"tensor {name!r} has dtype {entry.get('dtype')!r}, "
                              "only f32 is defined", body_start)
        got_shape = tuple(entry.get("shape", ()))
        if got_shape != shape:
            raise ValidationError(f"{name}: config implies shape {shape}, header says {got_shape}")
        off, length = entry.get("offset"), entry.get("length")
        if not (isinstance(off, int) and isinstance(length, int) and off >= 0 and length >= 0):
            raise FormatError(f"tensor {name!r} has bad offset/length", body_start)
        want = int(np.prod(shape)) * 4
        if length != want:
            raise FormatError(
                f"tensor {name!r}: length {length} != 4*prod(shape) = {want}", body_start
            )
        if off + length > len(payload):
            raise FormatError(
                f"tensor {name!r} data truncated: needs bytes [{off}, {off + length}) "
                f"of a {len(payload)}-byte payload",
                body_start + len(payload),
            )
        data = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=off)
        tensors[name] = Tensor(data.reshape(shape).astype(np.float32), requires_grad=True)
    return ParameterStore(config, tensors)
