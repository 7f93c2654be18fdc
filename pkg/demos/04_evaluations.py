#!/usr/bin/env python3
"""The three evaluation protocols on a small trained model.

Masked-token accuracy reads the MLM head directly; probe classification
trains a small classifier on frozen mean-pooled sentence embeddings; and
zero-shot classification matches texts against filled prompt templates by
cosine similarity, no task training at all.

At this toy scale the absolute numbers are modest; the point is the
protocol mechanics. The templates are the ones used for full-scale
Turkish sentiment and news runs.
"""

import numpy as np

from bsb.encoder import ModelConfig
from bsb.evalsuite import (LabeledDataset, ProbeSpec, ZeroShotSpec,
                           cosine_similarity_matrix, embed_sentences,
                           mask_eval, probe_eval, zero_shot_eval)
from bsb.pretraining import TrainingConfig, train
from bsb.tokenization import SPECIAL_TOKENS, Vocabulary

# Two topic clusters with disjoint vocabulary, so embeddings separate.
animals = ["kedi", "köpek", "kuş", "balık", "at", "tavşan"]
vehicles = ["araba", "tren", "uçak", "gemi", "bisiklet", "otobüs"]
filler = ["bugün", "yarın", "burada", "orada", "sessizce", "hızlıca"]
rng = np.random.default_rng(3)

def make_sentences(topic_words, n):
    out = []
    for _ in range(n):
        picks = [topic_words[rng.integers(0, len(topic_words))]
                 for _ in range(4)]
        picks += [filler[rng.integers(0, len(filler))], "ve"]
        out.append(" ".join(picks))
    return out

texts = make_sentences(animals, 40) + make_sentences(vehicles, 40)
labels = np.array([0] * 40 + [1] * 40)
vocab = Vocabulary(list(SPECIAL_TOKENS) + sorted(set(animals + vehicles
                                                     + filler + ["ve"])))

model_cfg = ModelConfig(hidden_size=48, num_attention_heads=2,
                        num_hidden_layers=2, vocab_size=len(vocab),
                        max_position_embeddings=16,
                        hidden_dropout_prob=0.0, attention_dropout_prob=0.0)
result = train(texts, vocab, model_cfg,
               TrainingConfig(learning_rate=1e-3, batch_size=32,
                              max_steps=300, max_seq_len=12, seed=7))
store = result.store
print(f"trained {store.total_parameters():,} parameters "
      f"on {len(texts)} sentences\n")

# Protocol 1: masked-token prediction, 2 masks per sentence.
m = mask_eval(store, vocab, texts, k_masks=2, rng=np.random.default_rng(0))
print(f"mask eval: top1 {m.top1:.2f}, top5 {m.top5:.2f} "
      f"over {m.n_predictions} predictions")

# Protocol 2: probe on frozen embeddings. Mean pooling covers real word
# pieces only; [CLS]/[SEP]/padding carry zero weight.
emb, wall = embed_sentences(store, vocab, texts)
print(f"embeddings: {emb.shape} in {wall * 1000:.0f} ms")
probe = probe_eval(emb, labels, ProbeSpec(n_classes=2, repetitions=3,
                                          epochs=15))
print(f"probe accuracy: {probe.mean:.2f} +/- {probe.std:.2f}")

# Protocol 3: zero-shot via prompt templates. Full-scale runs use these
# exact Turkish templates; here the label words are the topic words the
# toy model actually saw.
sentiment_template = "Bu metnin içerdiği duygu çoğunlukla { }."
news_template = "Bu haberin içeriği çoğunlukla { } ile ilgilidir."
news_labels = ("dünya", "ekonomi", "kültür-sanat", "magazin",
               "politika", "spor")
print(f"\nfull-scale templates:\n  sentiment: {sentiment_template!r} "
      f"(olumlu/olumsuz)\n  news:      {news_template!r}\n"
      f"             labels {news_labels}")

spec = ZeroShotSpec(template="{ } hakkında bir cümle", labels=("kedi", "araba"))
ds = LabeledDataset(texts, labels, class_names=("kedi", "araba"))
z = zero_shot_eval(store, vocab, ds, spec)
print(f"\ntoy zero-shot accuracy: {z.accuracy:.2f} on {z.n} texts")

# The decision rule is cosine against the filled templates; scaling any
# embedding by a positive constant cannot change a prediction.
refs = [spec.fill(lab) for lab in spec.labels]
ref_emb, _ = embed_sentences(store, vocab, refs)
sims = cosine_similarity_matrix(emb, ref_emb, texts, refs)
scaled = cosine_similarity_matrix(emb * 7.3, ref_emb * 0.02, texts, refs)
print(f"scale invariance: predictions identical = "
      f"{bool((sims.argmax(1) == scaled.argmax(1)).all())}")
