"""Conversion manifests.

A manifest is a JSON object naming the source directory, the output
paths, and optionally an explicit mapping/drop policy plus the sentences
used for reference activations. Everything downstream takes a manifest,
so a conversion is reproducible from this one file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class ManifestError(ValueError):
    """Structurally invalid manifest."""


@dataclass(frozen=True)
class ConversionManifest:
    """Where to read the source model and what to write.

    source: directory holding config.json, model.safetensors and
    vocab.txt. mapping: (source, native, transpose) triples; None means
    derive the standard BERT table from the source names. drop: exact
    source tensor names to discard; None means the default drop policy.
    """

    source: str
    out_checkpoint: str
    out_vocab: str
    mapping: Optional[tuple] = None
    drop: Optional[tuple] = None
    reference_sentences: tuple = ()
    out_reference: Optional[str] = None
    out_log: Optional[str] = None

    def __post_init__(self):
        for name in ("source", "out_checkpoint", "out_vocab"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise ManifestError(f"{name} must be a non-empty string, got {v!r}")
        if self.mapping is not None:
            entries = []
            for row in self.mapping:
                row = tuple(row)
                if len(row) != 3 or not all(isinstance(x, str) for x in row[:2]) \
                        or not isinstance(row[2], bool):
                    raise ManifestError(
                        f"mapping rows must be [source, native, transpose], got {row!r}"
                    )
                entries.append(row)
            object.__setattr__(self, "mapping", tuple(entries))
        if self.drop is not None:
            object.__setattr__(self, "drop", tuple(str(n) for n in self.drop))
        object.__setattr__(self, "reference_sentences",
                           tuple(str(s) for s in self.reference_sentences))

    @property
    def log_path(self) -> Path:
        if self.out_log:
            return Path(self.out_log)
        return Path(self.out_checkpoint + ".log")

    @property
    def reference_path(self) -> Path:
        if self.out_reference:
            return Path(self.out_reference)
        return Path(self.out_checkpoint + ".reference.json")

    def to_dict(self) -> dict:
        d = {
            "source": self.source,
            "out_checkpoint": self.out_checkpoint,
            "out_vocab": self.out_vocab,
            "reference_sentences": list(self.reference_sentences),
        }
        if self.mapping is not None:
            d["mapping"] = [list(row) for row in self.mapping]
        if self.drop is not None:
            d["drop"] = list(self.drop)
        if self.out_reference is not None:
            d["out_reference"] = self.out_reference
        if self.out_log is not None:
            d["out_log"] = self.out_log
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConversionManifest":
        if not isinstance(d, dict):
            raise ManifestError(f"manifest must be a JSON object, got {type(d).__name__}")
        known = {"source", "out_checkpoint", "out_vocab", "mapping", "drop",
                 "reference_sentences", "out_reference", "out_log"}
        extra = d.keys() - known
        if extra:
            raise ManifestError(f"unknown manifest keys: {sorted(extra)}")
        missing = {"source", "out_checkpoint", "out_vocab"} - d.keys()
        if missing:
            raise ManifestError(f"manifest missing keys: {sorted(missing)}")
        return cls(
            source=d["source"],
            out_checkpoint=d["out_checkpoint"],
            out_vocab=d["out_vocab"],
            mapping=d.get("mapping"),
            drop=d.get("drop"),
            reference_sentences=d.get("reference_sentences", ()),
            out_reference=d.get("out_reference"),
            out_log=d.get("out_log"),
        )

    @classmethod
    def from_file(cls, path) -> "ConversionManifest":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}: not valid JSON: {e}") from None

    def to_file(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
