"""Converter gate: the round-trip and fail-closed criteria.

Each test prints and records one [PASS]/[FAIL] line; conftest replays
them in a terminal section after the run.
"""

import numpy as np
import pytest
from safetensors.numpy import load_file, save_file

from bsbconvert import ConversionError, ConversionManifest, convert, emit_reference, \
    synthesize_toy_source

from bsb.checkpoint import load_checkpoint
from bsb.encoder import count_parameters, forward
from bsb.tokenization import Vocabulary, encode

from secondary_report import record


def _criterion(name: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    record(line)
    assert ok, line


def test_converter_round_trip(conversion):
    manifest, result = conversion
    store = load_checkpoint(result.checkpoint_path).astype("f64")
    count_ok = store.total_parameters() == count_parameters(store.config)

    rows = emit_reference(manifest)
    vocab = Vocabulary.from_file(result.vocab_path)
    worst = 0.0
    for row in rows:
        enc = encode(row["sentence"], vocab)
        logits = forward(store, [enc.ids]).logits.data[0]
        worst = max(worst, float(np.abs(logits - np.array(row["logits"])).max()))
    _criterion(
        "converter round trip",
        count_ok and len(rows) == 3 and worst <= 1e-5,
        f"count match {count_ok}, logits parity max-abs {worst:.3e} <= 1e-5 "
        f"on {len(rows)} sentences",
    )


def test_conversion_fails_closed(tmp_path):
    src = synthesize_toy_source(tmp_path / "src", seed=13)
    stray = "bert.encoder.layer.0.attention.self.rotary.weight"
    tensors = load_file(str(src / "model.safetensors"))
    tensors[stray] = np.zeros((4, 4), dtype=np.float32)
    save_file(tensors, str(src / "model.safetensors"))
    manifest = ConversionManifest(
        source=str(src),
        out_checkpoint=str(tmp_path / "model.ckpt"),
        out_vocab=str(tmp_path / "vocab.txt"),
    )
    with pytest.raises(ConversionError) as err:
        convert(manifest)
    named = stray in str(err.value)
    _criterion(
        "conversion fails closed",
        named and not (tmp_path / "model.ckpt").exists(),
        f"unmapped tensor raises and the error names it ({named}); no output written",
    )
