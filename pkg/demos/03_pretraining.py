#!/usr/bin/env python3
"""Masked-token pretraining from nothing on a toy corpus.

Builds a vocabulary, corrupts 15% of the tokens (80% [MASK], 10% random,
10% kept), trains a small encoder with Adam for a few hundred steps, and
watches masked-word recovery climb. Ends with a checkpoint round trip.
"""

import tempfile
from pathlib import Path

import numpy as np

from bsb.checkpoint import load_checkpoint, save_checkpoint
from bsb.encoder import ModelConfig
from bsb.evalsuite import mask_eval
from bsb.pretraining import TrainingConfig, mlm_corrupt, train
from bsb.tokenization import SPECIAL_TOKENS, Vocabulary, encode, stack_encodings

# A deterministic grammar: 24 sentences of 6 words, each word belonging
# to exactly one sentence, so any visible word pins down the masked one.
words = [f"soz{i:03d}" for i in range(144)]
sentences = [" ".join(words[6 * i:6 * i + 6]) for i in range(24)]
vocab = Vocabulary(list(SPECIAL_TOKENS) + words)
print(f"{len(sentences)} sentences, vocabulary of {len(vocab)} tokens")

# What corruption looks like on one batch.
ids, mask = stack_encodings([encode(s, vocab, max_len=10) for s in sentences[:4]])
batch = mlm_corrupt(ids, mask, vocab, TrainingConfig(seed=1),
                    np.random.default_rng(1))
changed = int((batch.input_ids != ids).sum())
labeled = int((batch.labels != -100).sum())
print(f"corruption: {labeled} positions labeled, {changed} ids changed "
      f"(kept tokens are labeled but unchanged)\n")

model_cfg = ModelConfig(hidden_size=48, num_attention_heads=2,
                        num_hidden_layers=2, vocab_size=len(vocab),
                        max_position_embeddings=16,
                        hidden_dropout_prob=0.0, attention_dropout_prob=0.0)
train_cfg = TrainingConfig(learning_rate=1e-3, batch_size=24, max_steps=400,
                           max_seq_len=10, seed=5)

result = train(sentences, vocab, model_cfg, train_cfg)
curve = result.curve
print("loss curve (every 50 steps):")
for point in curve[::50] + [curve[-1]]:
    print(f"  step {point.step:>4}  loss {point.loss:.4f}")

acc = mask_eval(result.store, vocab, sentences, k_masks=1,
                rng=np.random.default_rng(0), batch_size=24)
print(f"\nmasked-word recovery after training: top1 {acc.top1:.2f}, "
      f"top5 {acc.top5:.2f}")

# Checkpoints are a JSON header plus raw little-endian f32 tensors; the
# tied decoder is stored once and aliased.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.ckpt"
    save_checkpoint(path, result.store)
    loaded = load_checkpoint(path)
    print(f"checkpoint round trip: {path.stat().st_size:,} bytes, "
          f"{loaded.total_parameters():,} parameters, dtype {loaded.dtype}")
