#!/usr/bin/env python3
"""Uncased Turkish text normalization and WordPiece tokenization.

Shows why the dotted/dotless i pair needs explicit handling before
lowercasing, then learns a small word-piece vocabulary from a toy corpus
and tokenizes with greedy longest-match-first.
"""

from bsb.tokenization import (NormalizerConfig, Vocabulary, build_vocab,
                              corpus_filter, encode, normalize, reassemble,
                              wordpiece_tokenize)

cfg = NormalizerConfig()

# Python's str.lower() maps I to i, which is wrong for Turkish: capital I
# is the dotless ı, and İ is the dotted i. The normalizer applies the two
# mappings first, so both directions come out right.
for text in ("İstanbul", "ILIK SU", "DİYARBAKIR"):
    print(f"{text!r:16} -> {normalize(text, cfg)!r}")
print(f"plain lower() would give {'ILIK SU'.lower()!r}\n")

# Whitespace collapses; normalization is idempotent.
messy = "  Bu   metin \t fazla   boşluklu  "
once = normalize(messy, cfg)
print(f"{messy!r} -> {once!r} (stable: {normalize(once, cfg) == once})\n")

# Greedy longest match against a hand-built vocabulary. Continuation
# pieces carry the ## marker; unknown words fall back to [UNK].
toy = Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
                  "merha", "##ba", "dünya", "##lar", "k", "##edi"])
for word in ("merhaba", "dünyalar", "kedi", "roket"):
    print(f"{word:10} -> {wordpiece_tokenize(word, toy)}")

# Learning a vocabulary: adjacent-piece pairs merge by the score
# freq(pair) / (freq(left) * freq(right)), so high-affinity pairs win
# over merely frequent ones.
corpus = [
    "kediler bahçede uyuyor bütün gün",
    "köpekler bahçede koşuyor her sabah",
    "kediler ve köpekler birlikte oynuyor",
    "bahçede çiçekler açıyor her bahar",
    "kuşlar sabah erkenden ötüyor bahçede",
] * 4
kept = list(corpus_filter(corpus, min_words=5))
vocab = build_vocab(kept, target_size=120)
print(f"\nlearned {len(vocab)} pieces from {len(kept)} sentences")

enc = encode("kediler bahçede oynuyor", vocab)
print(f"encode -> tokens {enc.tokens}")
print(f"          ids    {enc.ids}")
print(f"          words  {enc.word_ids}")
print(f"reassemble -> {reassemble(enc.tokens[1:-1])!r}")
