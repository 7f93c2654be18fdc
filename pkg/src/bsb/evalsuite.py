"""Four evaluation protocols over a trained encoder.

1. Mask prediction: hide five random word pieces per example, score
   top-1/top-5 recovery of the originals.
2. Probe classification: train a small dense classifier on frozen
   sentence embeddings, repeated with fresh splits, report mean/std of
   the best test accuracy per repetition.
3. Zero-shot classification: embed the texts and one filled prompt
   template per class label, assign the label whose reference sentence
   has the highest cosine similarity.
4. Vectorization throughput: wall-clock the embedding pipeline per
   model, median of repeated runs, with analytic FLOP estimates as
   context.

Sentence vectors are mean-pooled over real word pieces: [CLS], [SEP]
and padding carry zero pooling weight, so a one-piece sentence embeds
to exactly that piece's hidden state.
"""

from __future__ import annotations

import csv
import json
import re
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .encoder import ModelConfig, ParameterStore, forward
from .pretraining import TrainingConfig, adam_step, init_adam_state
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    gelu,
    log_softmax,
    matmul,
    mean,
    pick,
    scale,
)
from .tokenization import InputError, Vocabulary, encode, stack_encodings


class DataError(ValueError):
    """Malformed dataset file or dataset/spec mismatch."""


class StratificationError(ValueError):
    """A class is too small to appear on both sides of the split."""


class SimilarityError(ValueError):
    """Cosine similarity undefined (zero-norm embedding)."""


# ---------------------------------------------------------------- datasets

DATASET_HEADER = ("text", "label")


@dataclass
class LabeledDataset:
    texts: list[str]
    labels: np.ndarray  # integer class ids
    class_names: list[str]
    provenance: str = "unspecified"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.texts) != self.labels.shape[0]:
            raise DataError(
                f"{len(self.texts)} texts but {self.labels.shape[0]} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise DataError("negative class id")
        if self.labels.size and self.labels.max() >= len(self.class_names):
            raise DataError(
                f"class id {self.labels.max()} out of range for "
                f"{len(self.class_names)} class names"
            )
        for i, t in enumerate(self.texts):
            if not t.split():
                raise DataError(f"text at row {i} is empty after normalization")

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def load_dataset(csv_path, classes_path=None, provenance: Optional[str] = None) -> LabeledDataset:
    """Read the `text,label` CSV (labels are integer class ids) and an
    optional JSON sidecar listing the class names in id order."""
    path = Path(csv_path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file") from None
        if tuple(header) != DATASET_HEADER:
            raise DataError(f"{path}: header must be 'text,label', got {header}")
        texts: list[str] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                labels.append(int(row[1]))
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: label must be an integer class id, got {row[1]!r}"
                ) from None
            texts.append(row[0])
    if classes_path is not None:
        with open(classes_path, encoding="utf-8") as fh:
            class_names = json.load(fh)
        if not isinstance(class_names, list) or not all(isinstance(c, str) for c in class_names):
            raise DataError(f"{classes_path}: class sidecar must be a JSON list of strings")
    else:
        class_names = [str(i) for i in range(max(labels, default=-1) + 1)]
    return LabeledDataset(texts, np.array(labels, dtype=np.int64), class_names,
                          provenance=provenance or path.name)


def write_dataset(csv_path, dataset: LabeledDataset, classes_path=None) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for text, label in zip(dataset.texts, dataset.labels):
            writer.writerow([text, int(label)])
    if classes_path is not None:
        with open(classes_path, "w", encoding="utf-8") as fh:
            json.dump(dataset.class_names, fh, ensure_ascii=False)


# ----------------------------------------------------------------- reports

REPORT_HEADER = ("model", "task", "dataset", "metric", "value", "std", "wall_s", "n")


@dataclass
class ReportRow:
    model: str
    task: str
    dataset: str
    metric: str
    value: float
    std: float
    wall_s: float
    n: int


def write_report(path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([r.model, r.task, r.dataset, r.metric,
                             repr(float(r.value)), repr(float(r.std)),
                             repr(float(r.wall_s)), r.n])


# --------------------------------------------------------- mask prediction

PredictFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _predictor(model: Union[ParameterStore, PredictFn]) -> PredictFn:
    if isinstance(model, ParameterStore):
        def run(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
            return forward(model, ids, mask).logits.data
        return run
    if callable(model):
        return model
    raise InputError(f"model must be a ParameterStore or a callable, got {type(model).__name__}")


def _top5_with_low_id_ties(row: np.ndarray) -> np.ndarray:
    # sort by descending logit, ties by ascending token id
    order = np.lexsort((np.arange(row.shape[0]), -row))
    return order[:5]


@dataclass
class MaskEvalResult:
    top1: float
    top5: float
    wall_s: float
    n_examples: int
    n_skipped: int
    n_predictions: int


def mask_eval(
    model: Union[ParameterStore, PredictFn],
    vocab: Vocabulary,
    texts: Sequence[str],
    k_masks: int = 5,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 32,
    max_len: Optional[int] = None,
) -> MaskEvalResult:
    """Hide k_masks distinct word pieces per example and score recovery.

    Examples with fewer than k_masks maskable pieces are skipped and
    counted. A top-1 hit is argmax == original id; a top-5 hit puts the
    original among the five highest logits; both break logit ties toward
    the lower token id. Deterministic given rng.
    """
    if k_masks < 1:
        raise InputError(f"k_masks must be >= 1, got {k_masks}")
    if rng is None:
        rng = np.random.default_rng(0)
    if max_len is None:
        max_len = (model.config.max_position_embeddings
                   if isinstance(model, ParameterStore) else 512)
    predict = _predictor(model)

    t0 = time.perf_counter()
    kept: list = []  # (ids list, positions, originals)
    n_skipped = 0
    for text in texts:
        enc = encode(text, vocab, max_len=max_len)
        maskable = [i for i, tok_id in enumerate(enc.ids)
                    if not vocab.is_special(tok_id)]
        if len(maskable) < k_masks:
            n_skipped += 1
            continue
        positions = np.sort(rng.choice(maskable, size=k_masks, replace=False))
        ids = np.array(enc.ids, dtype=np.int64)
        originals = ids[positions].copy()
        ids[positions] = vocab.mask_id
        kept.append((ids, positions, originals))
    if not kept:
        raise InputError("no example has enough maskable tokens")

    top1_hits = 0
    top5_hits = 0
    n_predictions = 0
    for start in range(0, len(kept), batch_size):
        chunk = kept[start:start + batch_size]
        t = max(len(ids) for ids, _, _ in chunk)
        ids = np.zeros((len(chunk), t), dtype=np.int64)
        mask = np.zeros((len(chunk), t), dtype=np.float64)
        for i, (row_ids, _, _) in enumerate(chunk):
            ids[i, :len(row_ids)] = row_ids
            mask[i, :len(row_ids)] = 1.0
        logits = predict(ids, mask)
        for i, (_, positions, originals) in enumerate(chunk):
            for pos, original in zip(positions, originals):
                row = logits[i, pos]
                top1_hits += int(np.argmax(row) == original)
                top5_hits += int(original in _top5_with_low_id_ties(row))
                n_predictions += 1
    wall = time.perf_counter() - t0
    return MaskEvalResult(
        top1=top1_hits / n_predictions,
        top5=top5_hits / n_predictions,
        wall_s=wall,
        n_examples=len(kept),
        n_skipped=n_skipped,
        n_predictions=n_predictions,
    )


# ------------------------------------------------------ sentence embedding

def embed_sentences(
    store: ParameterStore,
    vocab: Vocabulary,
    texts: Sequence[str],
    batch_size: int = 32,
    max_len: Optional[int] = None,
) -> tuple[np.ndarray, float]:
    """Mean-pooled sentence vectors [N, H] plus the wall seconds spent.

    Pooling averages last-layer hidden states over real word pieces only;
    specials and padding get zero weight. The clock covers the whole
    batched loop including tokenization, mirroring how a sentence
    vectorizer would be used.
    """
    if max_len is None:
        max_len = store.config.max_position_embeddings
    n = len(texts)
    out = np.zeros((n, store.config.hidden_size), dtype=np.float64)
    t0 = time.perf_counter()
    for start in range(0, n, batch_size):
        chunk = texts[start:start + batch_size]
        encs = [encode(t, vocab, max_len=max_len) for t in chunk]
        ids, mask = stack_encodings(encs)
        hidden = forward(store, ids, mask, return_logits=False).hidden.data
        special = np.isin(ids, list(vocab.special_ids))
        weights = mask * ~special
        denom = weights.sum(axis=1)
        for i, d in enumerate(denom):
            if d == 0:
                raise InputError(
                    f"text {start + i} has no word pieces to pool: {chunk[i]!r}"
                )
        out[start:start + len(chunk)] = (
            (hidden * weights[:, :, None]).sum(axis=1) / denom[:, None]
        )
    return out, time.perf_counter() - t0


# ------------------------------------------------------------------ probes

@dataclass(frozen=True)
class ProbeSpec:
    n_classes: int
    hidden_widths: tuple = (256, 128, 64)
    activation: str = "gelu"
    train_fraction: float = 0.8
    repetitions: int = 10
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InputError("probe needs at least 2 classes")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise InputError("train_fraction must be in (0, 1)")
        if self.activation not in ("gelu", "gelu_tanh"):
            raise InputError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))


@dataclass
class ProbeResult:
    mean: float
    std: float
    accuracies: list[float]


def stratified_split(
    labels: np.ndarray, train_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split keeping every class on both sides."""
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise StratificationError(
                f"class {c} has {idx.size} example(s); need at least 2 to split"
            )
        idx = rng.permutation(idx)
        n_train = int(round(train_fraction * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def _probe_init(rng: np.random.Generator, dims: list[int]) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"w{i}"] = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
        params[f"b{i}"] = np.zeros(d_out)
    return params


def _probe_logits(wrapped: dict[str, Tensor], x: np.ndarray,
                  n_layers: int, form: str) -> Tensor:
    h = Tensor(x)
    for i in range(n_layers):
        h = add(matmul(h, wrapped[f"w{i}"]), wrapped[f"b{i}"])
        if i < n_layers - 1:
            h = gelu(h, form=form)
    return h


def probe_eval(embeddings: np.ndarray, labels: np.ndarray, spec: ProbeSpec) -> ProbeResult:
    """Train the dense probe on frozen embeddings, repeatedly.

    Each repetition reshuffles the stratified split, trains with Adam on
    cross-entropy, evaluates on the held-out split after every epoch, and
    keeps the best test accuracy. Mean and population std are taken over
    repetitions, so they are invariant to repetition order.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise InputError(f"embeddings {x.shape} and labels {y.shape} do not align")
    if np.unique(y).size < 2:
        raise StratificationError("fewer than 2 classes present")
    form = "erf" if spec.activation == "gelu" else "tanh"
    dims = [x.shape[1], *spec.hidden_widths, spec.n_classes]
    n_layers = len(dims) - 1
    adam_cfg = TrainingConfig(learning_rate=spec.learning_rate)

    accuracies: list[float] = []
    for rep in range(spec.repetitions):
        rng = np.random.default_rng(spec.seed + rep)
        train_idx, test_idx = stratified_split(y, spec.train_fraction, rng)
        params = _probe_init(rng, dims)
        state = init_adam_state(params)
        x_test, y_test = x[test_idx], y[test_idx]
        best = 0.0
        step = 0
        for _epoch in range(spec.epochs):
            order = rng.permutation(train_idx)
            for start in range(0, order.size, spec.batch_size):
                batch = order[start:start + spec.batch_size]
                step += 1
                wrapped = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
                with Tape() as tape:
                    logits = _probe_logits(wrapped, x[batch], n_layers, form)
                    loss = scale(mean(pick(log_softmax(logits, axis=-1), y[batch])), -1.0)
                grads_by_id = backward(tape, loss)
                grads = {k: grads_by_id[t.node_id]
                         for k, t in wrapped.items() if t.node_id in grads_by_id}
                params, state = adam_step(params, grads, state, adam_cfg, step)
            wrapped = {k: Tensor(v) for k, v in params.items()}
            test_logits = _probe_logits(wrapped, x_test, n_layers, form).data
            acc = float((np.argmax(test_logits, axis=1) == y_test).mean())
            best = max(best, acc)
        accuracies.append(best)
    return ProbeResult(
        mean=float(np.mean(accuracies)),
        std=float(np.std(accuracies)),
        accuracies=accuracies,
    )


# --------------------------------------------------------------- zero-shot

_PLACEHOLDER = re.compile(r"\{[^{}]*\}")


@dataclass(frozen=True)
class ZeroShotSpec:
    """Prompt template with one {} placeholder plus the label surface
    forms, index-aligned with the dataset's class ids."""

    template: str
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(_PLACEHOLDER.findall(self.template)) != 1:
            raise InputError(
                f"template must contain exactly one {{}} placeholder: {self.template!r}"
            )
        if len(self.labels) < 2:
            raise InputError("zero-shot needs at least 2 labels")

    def fill(self, label: str) -> str:
        return _PLACEHOLDER.sub(label, self.template, count=1)

    def to_dict(self) -> dict:
        return {"template": self.template, "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "ZeroShotSpec":
        extra = set(d) - {"template", "labels"}
        if extra:
            raise InputError(f"unknown zero-shot spec fields: {sorted(extra)}")
        return cls(template=d["template"], labels=tuple(d["labels"]))

    @classmethod
    def from_file(cls, path) -> "ZeroShotSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def normalize_rows(vectors: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Unit-normalize rows; a zero-norm row is an error naming its text."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0:
            raise SimilarityError(f"zero-norm embedding for {names[i]!r}")
    return v / norms[:, None]


@dataclass
class ZeroShotResult:
    accuracy: float
    predictions: np.ndarray
    wall_s: float
    n: int


def zero_shot_eval(
    store: ParameterStore,
    vocab: Vocabulary,
    dataset: LabeledDataset,
    spec: ZeroShotSpec,
    batch_size: int = 32,
) -> ZeroShotResult:
    """Cosine-similarity classification against filled templates.

    One reference sentence per label; each text takes the label of its
    most similar reference, ties toward the lower label index.
    """
    if len(spec.labels) != dataset.n_classes:
        raise DataError(
            f"spec has {len(spec.labels)} labels but dataset has "
            f"{dataset.n_classes} classes"
        )
    t0 = time.perf_counter()
    references = [spec.fill(label) for label in spec.labels]
    ref_emb, _ = embed_sentences(store, vocab, references, batch_size=batch_size)
    txt_emb, _ = embed_sentences(store, vocab, dataset.texts, batch_size=batch_size)
    sims = cosine_similarity_matrix(txt_emb, ref_emb, dataset.texts, references)
    predictions = np.argmax(sims, axis=1)  # first max = lower label index
    accuracy = float((predictions == dataset.labels).mean())
    return ZeroShotResult(
        accuracy=accuracy,
        predictions=predictions,
        wall_s=time.perf_counter() - t0,
        n=len(dataset),
    )


def cosine_similarity_matrix(
    a: np.ndarray, b: np.ndarray,
    a_names: Sequence[str], b_names: Sequence[str],
) -> np.ndarray:
    return normalize_rows(a, a_names) @ normalize_rows(b, b_names).T


# ------------------------------------------------------------- throughput

def flops_per_token(config: ModelConfig, seq_len: int) -> float:
    """Analytic encoder cost per token, multiply-add counted as 2 FLOPs.

    Per layer: QKVO projections 8H^2, attention scores and context 4TH,
    feed-forward 4HI. Embedding lookups and the MLM head are excluded
    (the embedding path never runs the decoder).
    """
    h, i = config.hidden_size, config.intermediate_size
    per_layer = 8 * h * h + 4 * seq_len * h + 4 * h * i
    return float(config.num_hidden_layers * per_layer)


@dataclass
class BenchRow:
    model: str
    wall_s: list[float]  # one entry per timed repeat, warmup excluded
    median_s: float
    sentences_per_s: float
    flops_per_token: float
    n_sentences: int


def bench_vectorize(
    models: Sequence[tuple[str, ParameterStore]],
    vocab: Vocabulary,
    texts: Sequence[str],
    batch_size: int = 32,
    repeats: int = 5,
) -> list[BenchRow]:
    """Median-of-repeats embedding throughput per model.

    Runs one discarded warmup pass per model, then `repeats` timed passes
    on a monotonic clock. Intended to run without co-tenant work.
    """
    if repeats < 3:
        raise InputError(f"repeats must be >= 3 for a meaningful median, got {repeats}")
    if not texts:
        raise InputError("no texts to benchmark")
    rows: list[BenchRow] = []
    # a short average sequence keeps the FLOP context comparable
    mean_len = float(np.mean([max(len(t.split()), 1) for t in texts]))
    for name, store in models:
        embed_sentences(store, vocab, texts, batch_size=batch_size)  # warmup
        times: list[float] = []
        for _ in range(repeats):
            _, wall = embed_sentences(store, vocab, texts, batch_size=batch_size)
            times.append(wall)
        med = float(statistics.median(times))
        rows.append(BenchRow(
            model=name,
            wall_s=times,
            median_s=med,
            sentences_per_s=len(texts) / med,
            flops_per_token=flops_per_token(store.config, seq_len=int(mean_len) + 2),
            n_sentences=len(texts),
        ))
    return rows


def bench_report_rows(rows: Sequence[BenchRow], dataset: str = "synthetic") -> list[ReportRow]:
    out: list[ReportRow] = []
    for r in rows:
        throughputs = [r.n_sentences / t for t in r.wall_s]
        out.append(ReportRow(
            model=r.model, task="vectorize", dataset=dataset,
            metric="sentences_per_s", value=r.sentences_per_s,
            std=float(np.std(throughputs)), wall_s=r.median_s, n=r.n_sentences,
        ))
        out.append(ReportRow(
            model=r.model, task="vectorize", dataset=dataset,
            metric="flops_per_token", value=r.flops_per_token,
            std=0.0, wall_s=0.0, n=r.n_sentences,
        ))
    return out
