"""Uncased text normalization, WordPiece tokenization and corpus filters.

The pipeline is deliberately simple: normalization lowercases (with the
Turkish dotted/dotless-i mappings when enabled), applies a Unicode
normalization form, optionally strips combining accents, and collapses
whitespace. Pre-tokenization is whitespace splitting only; WordPiece then
segments each word greedily, longest vocabulary prefix first, with "##"
marking continuations.

Everything here is a pure function over immutable inputs and safe to call
from any number of threads.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"

# Turkish simple case mappings that str.lower gets wrong: dotted capital I
# maps to plain i, plain capital I maps to dotless i.
_TURKISH_MAP = str.maketrans({"İ": "i", "I": "ı"})

_UNICODE_FORMS = ("NFC", "NFD", "NFKC", "NFKD", "none")


class InputError(ValueError):
    """Malformed caller input (bad text, empty corpus, bad parameters)."""


@dataclass(frozen=True)
class NormalizerConfig:
    lowercase: bool = True
    turkish_casefold: bool = True
    strip_accents: bool = False
    unicode_form: str = "NFC"

    def __post_init__(self):
        if self.unicode_form not in _UNICODE_FORMS:
            raise InputError(
                f"unicode_form must be one of {_UNICODE_FORMS}, got {self.unicode_form!r}"
            )


def normalize(text: str, cfg: NormalizerConfig = NormalizerConfig()) -> str:
    """Lowercase, Unicode-normalize and whitespace-collapse `text`.

    Idempotent: normalize(normalize(s)) == normalize(s).
    """
    if not isinstance(text, str):
        raise InputError(f"expected str, got {type(text).__name__}")
    s = text
    if cfg.unicode_form != "none":
        s = unicodedata.normalize(cfg.unicode_form, s)
    if cfg.lowercase:
        if cfg.turkish_casefold:
            s = s.translate(_TURKISH_MAP)
        s = s.lower()
    if cfg.strip_accents:
        s = "".join(
            ch for ch in unicodedata.normalize("NFD", s)
            if unicodedata.category(ch) != "Mn"
        )
    # case mapping and accent stripping can denormalize; re-apply the form
    if cfg.unicode_form != "none":
        s = unicodedata.normalize(cfg.unicode_form, s)
    return " ".join(s.split())


class Vocabulary:
    """Token-id bijection with the five special tokens.

    [PAD] is pinned to id 0; the other specials may sit anywhere. Size is
    arbitrary for toy runs; parity configs use 32000 entries.
    """

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(self.id_to_token):
            if tok in self.token_to_id:
                raise InputError(f"duplicate token {tok!r} at ids {self.token_to_id[tok]} and {i}")
            self.token_to_id[tok] = i
        for tok in SPECIAL_TOKENS:
            if tok not in self.token_to_id:
                raise InputError(f"special token {tok} missing from vocabulary")
        if self.token_to_id[PAD] != 0:
            raise InputError(f"{PAD} must have id 0, got {self.token_to_id[PAD]}")
        self.pad_id = 0
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]
        self.mask_id = self.token_to_id[MASK]
        self.special_ids = frozenset(self.token_to_id[t] for t in SPECIAL_TOKENS)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def is_special(self, idx: int) -> bool:
        return idx in self.special_ids

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """Read the one-token-per-line format; line number is the id."""
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")


@dataclass
class Encoding:
    """One encoded sequence: [CLS] pieces [SEP] then optional [PAD]s.

    word_ids maps each position to the index of the whitespace word the
    piece came from, -1 for specials and padding.
    """

    ids: list[int]
    attention_mask: list[int]
    token_type_ids: list[int]
    word_ids: list[int]
    tokens: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def real_length(self) -> int:
        return sum(self.attention_mask)


def wordpiece_tokenize(word: str, vocab: Vocabulary, max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first segmentation of one whitespace-free word."""
    if len(word) > max_chars:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def encode(
    text: str,
    vocab: Vocabulary,
    cfg: NormalizerConfig = NormalizerConfig(),
    max_len: int = 512,
    pad_to_max: bool = False,
) -> Encoding:
    """Normalize, wordpiece-split and frame `text` as [CLS] ... [SEP].

    Pieces beyond max_len - 2 are truncated from the tail (the sentence
    head is kept). With pad_to_max the sequence is padded to exactly
    max_len with [PAD]s carrying attention-mask 0.
    """
    if not 2 <= max_len <= 512:
        raise InputError(f"max_len must be in [2, 512], got {max_len}")
    words = normalize(text, cfg).split()
    tokens: list[str] = []
    word_ids: list[int] = []
    for wi, word in enumerate(words):
        for piece in wordpiece_tokenize(word, vocab):
            tokens.append(piece)
            word_ids.append(wi)
    keep = max_len - 2
    tokens, word_ids = tokens[:keep], word_ids[:keep]
    tokens = [CLS] + tokens + [SEP]
    word_ids = [-1] + word_ids + [-1]
    ids = [vocab.id_of(t) for t in tokens]
    mask = [1] * len(ids)
    if pad_to_max:
        n_pad = max_len - len(ids)
        ids += [vocab.pad_id] * n_pad
        tokens += [PAD] * n_pad
        word_ids += [-1] * n_pad
        mask += [0] * n_pad
    types = [0] * len(ids)
    return Encoding(ids, mask, types, word_ids, tokens)


def stack_encodings(encodings: list[Encoding]) -> tuple[np.ndarray, np.ndarray]:
    """Pad a ragged list of encodings into (ids, attention_mask) arrays."""
    if not encodings:
        raise InputError("cannot stack zero encodings")
    t = max(len(e) for e in encodings)
    ids = np.zeros((len(encodings), t), dtype=np.int64)
    mask = np.zeros((len(encodings), t), dtype=np.float64)
    for i, enc in enumerate(encodings):
        ids[i, :len(enc)] = enc.ids
        mask[i, :len(enc)] = enc.attention_mask
    return ids, mask


def reassemble(tokens: Iterable[str]) -> str:
    """Rebuild the normalized text from pieces; the encode round-trip check."""
    words: list[str] = []
    for tok in tokens:
        if tok in SPECIAL_TOKENS:
            continue
        if tok.startswith(CONTINUATION) and words:
            words[-1] += tok[len(CONTINUATION):]
        else:
            words.append(tok)
    return " ".join(words)


def corpus_filter(sentences: Iterable[str], min_words: int = 5) -> Iterator[str]:
    """Pass only sentences with at least `min_words` whitespace-split words."""
    for s in sentences:
        if len(s.split()) >= min_words:
            yield s


def charlen_filter(examples: Iterable[str], lo: int = 150, hi: int = 512) -> Iterator[str]:
    """Keep examples whose character count lies in [lo, hi], inclusive."""
    if lo > hi:
        raise InputError(f"invalid character range: lo={lo} > hi={hi}")
    for s in examples:
        if lo <= len(s) <= hi:
            yield s


def build_vocab(
    corpus: Iterable[str],
    target_size: int,
    min_frequency: int = 1,
    cfg: NormalizerConfig = NormalizerConfig(),
) -> Vocabulary:
    """Learn a WordPiece vocabulary by iterative pair scoring.

    Starts from the per-character alphabet of the normalized corpus and
    repeatedly merges the adjacent pair maximizing
    freq(pair) / (freq(left) * freq(right)) until target_size is reached or
    no pair clears min_frequency. Deterministic given corpus order: ties
    break on the lexicographically smaller pair. Intended for toy corpora;
    parity runs import a published vocabulary instead.
    """
    if target_size <= len(SPECIAL_TOKENS):
        raise InputError(f"target_size must exceed {len(SPECIAL_TOKENS)}")
    if min_frequency < 1:
        raise InputError("min_frequency must be >= 1")

    word_freq: dict[str, int] = {}
    for line in corpus:
        for word in normalize(line, cfg).split():
            word_freq[word] = word_freq.get(word, 0) + 1
    if not word_freq:
        raise InputError("empty corpus")

    # alphabet with positional continuation marking
    splits = {w: [w[0]] + [CONTINUATION + ch for ch in w[1:]] for w in word_freq}
    token_freq: dict[str, int] = {}
    for w, f in word_freq.items():
        for piece in splits[w]:
            token_freq[piece] = token_freq.get(piece, 0) + f

    vocab = [t for t, f in token_freq.items() if f >= min_frequency]
    vocab.sort()
    budget = target_size - len(SPECIAL_TOKENS)
    vocab = vocab[:budget]
    present = set(vocab)

    def merged(a: str, b: str) -> str:
        return a + b[len(CONTINUATION):]

    while len(vocab) < budget:
        pair_freq: dict[tuple[str, str], int] = {}
        for w, f in word_freq.items():
            parts = splits[w]
            for i in range(len(parts) - 1):
                pair = (parts[i], parts[i + 1])
                pair_freq[pair] = pair_freq.get(pair, 0) + f
        best = None
        best_score = None
        for pair, f in pair_freq.items():
            if f < min_frequency:
                continue
            if pair[0] not in present or pair[1] not in present:
                continue
            score = f / (token_freq[pair[0]] * token_freq[pair[1]])
            if best_score is None or score > best_score or (score == best_score and pair < best):
                best, best_score = pair, score
        if best is None:
            break
        new_tok = merged(*best)
        vocab.append(new_tok)
        present.add(new_tok)
        new_freq = 0
        for w, f in word_freq.items():
            parts = splits[w]
            i = 0
            while i < len(parts) - 1:
                if (parts[i], parts[i + 1]) == best:
                    parts[i:i + 2] = [merged(parts[i], parts[i + 1])]
                    new_freq += f
                else:
                    i += 1
        token_freq[new_tok] = new_freq
        token_freq[best[0]] -= new_freq
        token_freq[best[1]] -= new_freq

    return Vocabulary(list(SPECIAL_TOKENS) + vocab)
