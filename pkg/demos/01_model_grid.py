#!/usr/bin/env python3
"""The five model sizes and where every parameter lives.

Walks the preset grid, reproduces each parameter count from the closed
form, and runs one forward pass on the smallest model to show the moving
parts: token/position/type embeddings, transformer blocks, and the MLM
head whose decoder is the transposed embedding table (weight tying).
"""

import numpy as np

from bsb.encoder import (ModelConfig, PRESETS, count_parameters, forward,
                         init_parameters, parameter_shapes)

print("preset grid (hidden size H, attention heads A, layers L):")
print(f"{'name':<8} {'H':>5} {'A':>4} {'L':>4} {'parameters':>14}")
for name in ("tiny", "mini", "small", "medium", "base"):
    h, a, l = PRESETS[name]
    n = count_parameters(ModelConfig.preset(name))
    print(f"{name:<8} {h:>5} {a:>4} {l:>4} {n:>14,}")

# The closed form, spelled out for tiny. V=32000 tokens, P=512 positions,
# 2 segment types; each layer holds 4 attention projections, a 4H-wide
# feed-forward, and two layer norms; the decoder reuses the embedding
# table, so the head adds only a transform, a norm, and a V-sized bias.
cfg = ModelConfig.preset("tiny")
h, i, v = cfg.hidden_size, cfg.intermediate_size, cfg.vocab_size
embeddings = v * h + 512 * h + 2 * h + 2 * h
per_layer = 4 * (h * h + h) + 2 * h + (h * i + i) + (i * h + h) + 2 * h
head = (h * h + h) + 2 * h + v
total = embeddings + cfg.num_hidden_layers * per_layer + head
print(f"\ntiny, assembled by hand: {embeddings:,} (embeddings) "
      f"+ {cfg.num_hidden_layers} x {per_layer:,} (blocks) "
      f"+ {head:,} (MLM head) = {total:,}")
assert total == count_parameters(cfg)

# Every tensor is reachable by name; the store refuses wrong shapes.
shapes = parameter_shapes(cfg)
print(f"\n{len(shapes)} named tensors; the first few:")
for name in list(shapes)[:6]:
    print(f"  {name:<28} {shapes[name]}")

# One forward pass. Logits come from the tied decoder, so their last
# axis is the vocabulary.
store = init_parameters(cfg, seed=0, dtype="f32")
rng = np.random.default_rng(0)
ids = rng.integers(5, cfg.vocab_size, size=(2, 12))
out = forward(store, ids, np.ones((2, 12)))
print(f"\nforward on ids {ids.shape}: hidden {out.hidden.data.shape}, "
      f"logits {out.logits.data.shape}")
