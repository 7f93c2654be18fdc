#!/usr/bin/env python3
"""Inference throughput across the size grid.

Benchmarks batched vectorization (tokenize, pad, forward, mean-pool) for
each preset on the same synthetic corpus and reports the median of
repeated runs next to the analytic per-token cost. The small models buy
their speed with width and depth, not with different code paths.

200 sentences keep this demo quick; the acceptance checks run the full
1,000-sentence, 5-repeat protocol (also: `bsb bench-vectorize`).
"""

import numpy as np

from bsb.encoder import ModelConfig, init_parameters
from bsb.evalsuite import bench_vectorize, flops_per_token
from bsb.tokenization import SPECIAL_TOKENS, Vocabulary

rng = np.random.default_rng(0)
words = [f"kelime{i:03d}" for i in range(100)]
texts = [" ".join(words[j] for j in rng.integers(0, 100, size=8))
         for _ in range(200)]
vocab = Vocabulary(list(SPECIAL_TOKENS) + words)

print(f"{'model':<8} {'sentences/s':>12} {'Mflop/token':>12} {'vs tiny':>9}")
tiny_speed = None
for name in ("tiny", "mini", "small", "medium", "base"):
    cfg = ModelConfig.preset(name)
    # one model in memory at a time; each median is independent
    store = init_parameters(cfg, seed=0, dtype="f32")
    row = bench_vectorize([(name, store)], vocab, texts,
                          batch_size=32, repeats=3)[0]
    del store
    if tiny_speed is None:
        tiny_speed = row.sentences_per_s
    mflop = flops_per_token(cfg, seq_len=10) / 1e6
    print(f"{name:<8} {row.sentences_per_s:>12.1f} {mflop:>12.1f} "
          f"{row.sentences_per_s / tiny_speed:>8.2f}x")
print("\n(ratios are relative to tiny; for the full-scale pretrained"
      "\n models, tiny runs roughly 50 times faster than base on CPU)")
