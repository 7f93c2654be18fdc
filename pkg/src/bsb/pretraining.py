"""Masked-language-model pretraining at desk scale.

The loop is the standard one: corrupt a batch (15% of non-special
positions, split 80/10/10 between [MASK], a random non-special token, and
keeping the original), run the encoder, average cross-entropy over the
corrupted positions, backpropagate, and take an Adam step. Everything is
deterministic given the seed: batch sampling, corruption, dropout and the
single-threaded accumulation order.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .encoder import ModelConfig, ParameterStore, forward, init_parameters
from .tensor import (
    NumericError,
    Tape,
    Tensor,
    backward,
    log_softmax,
    mean,
    pick,
    reshape,
    scale,
    take_rows,
)
from .tokenization import InputError, Vocabulary, encode, stack_encodings

# label value at positions that do not contribute to the loss
IGNORE_INDEX = -100


class TrainingError(RuntimeError):
    """Non-finite value or contract violation that aborted a training step."""


class LossError(ValueError):
    """Loss requested over zero labeled positions."""


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 100
    seed: int = 0
    mask_prob: float = 0.15
    mask_split: tuple = (0.8, 0.1, 0.1)  # [MASK] / random token / keep
    max_seq_len: int = 128
    warmup_steps: int = 0  # 0 keeps the rate constant from step 1

    def __post_init__(self):
        # lr 0 is allowed: it turns train into a diagnostic no-op
        if self.learning_rate < 0:
            raise InputError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_steps < 0 or self.warmup_steps < 0:
            raise InputError("batch_size must be >= 1; step counts must be >= 0")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise InputError(f"mask_prob must be in [0, 1], got {self.mask_prob}")
        split = tuple(self.mask_split)
        object.__setattr__(self, "mask_split", split)
        if len(split) != 3 or any(p < 0 for p in split) or abs(sum(split) - 1.0) > 1e-9:
            raise InputError(f"mask_split must be 3 non-negative numbers summing to 1, got {split}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise InputError(f"{name} must be in [0, 1), got {b}")
        if self.adam_eps <= 0:
            raise InputError("adam_eps must be positive")
        if self.max_seq_len < 2:
            raise InputError("max_seq_len must be at least 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mask_split"] = list(self.mask_split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown training config fields: {sorted(extra)}")
        if "mask_split" in d:
            d = dict(d, mask_split=tuple(d["mask_split"]))
        return cls(**d)


@dataclass
class MaskedBatch:
    input_ids: np.ndarray  # [B, T] after corruption
    attention_mask: np.ndarray  # [B, T]
    labels: np.ndarray  # [B, T], original ids at corrupted spots, else IGNORE_INDEX
    n_corrupted: int
    n_skipped: int  # sequences with no maskable position


def mlm_corrupt(
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    vocab: Vocabulary,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> MaskedBatch:
    """Corrupt a padded id batch for MLM training.

    Each real, non-special position is independently selected with
    mask_prob; selected positions become [MASK] / a uniform random
    non-special token / stay unchanged per mask_split. Labels hold the
    original id exactly at selected positions. Sequences with no maskable
    position are counted in n_skipped and contribute no labels.
    """
    ids = np.asarray(input_ids)
    mask = np.asarray(attention_mask)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise InputError(f"ids {ids.shape} and mask {mask.shape} must be equal 2-D shapes")
    special = np.isin(ids, list(vocab.special_ids))
    maskable = (mask == 1) & ~special
    n_skipped = int((~maskable.any(axis=1)).sum())

    selected = maskable & (rng.random(ids.shape) < cfg.mask_prob)
    labels = np.where(selected, ids, IGNORE_INDEX)
    corrupted = ids.copy()

    p_mask, p_replace, _p_keep = cfg.mask_split
    action = rng.random(ids.shape)
    to_mask = selected & (action < p_mask)
    to_replace = selected & (action >= p_mask) & (action < p_mask + p_replace)
    corrupted[to_mask] = vocab.mask_id
    n_replace = int(to_replace.sum())
    if n_replace:
        candidates = np.setdiff1d(np.arange(len(vocab)), list(vocab.special_ids))
        if candidates.size == 0:
            raise InputError("vocabulary has no non-special tokens to replace with")
        corrupted[to_replace] = candidates[rng.integers(0, candidates.size, size=n_replace)]
    return MaskedBatch(
        input_ids=corrupted,
        attention_mask=mask,
        labels=labels,
        n_corrupted=int(selected.sum()),
        n_skipped=n_skipped,
    )


def mlm_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over labeled positions; differentiable."""
    labels = np.asarray(labels)
    b, t, v = logits.data.shape
    if labels.shape != (b, t):
        raise LossError(f"labels shape {labels.shape} does not match logits batch {(b, t)}")
    flat_labels = labels.reshape(-1)
    positions = np.flatnonzero(flat_labels != IGNORE_INDEX)
    if positions.size == 0:
        raise LossError("no labeled positions in batch")
    picked_labels = flat_labels[positions]
    if picked_labels.min() < 0 or picked_labels.max() >= v:
        raise LossError(f"label id out of range [0, {v})")
    rows = take_rows(reshape(logits, (b * t, v)), positions)
    logp = pick(log_softmax(rows, axis=-1), picked_labels)
    return scale(mean(logp), -1.0)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainingConfig,
    step: int,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Purely functional and elementwise:
    each parameter's update depends only on its own gradient history."""
    if step < 1:
        raise TrainingError(f"step must be >= 1, got {step}")
    if state.m.keys() != params.keys() or state.v.keys() != params.keys():
        raise TrainingError("optimizer state keys do not match parameters")
    lr = cfg.learning_rate
    if cfg.warmup_steps > 0:
        lr *= min(1.0, step / cfg.warmup_steps)
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for {name}; step aborted")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v)


@dataclass
class LossPoint:
    step: int
    loss: float
    masked_tokens: int
    wall_ms: float


@dataclass
class TrainResult:
    store: ParameterStore
    curve: list[LossPoint]
    skipped_sequences: int
    checkpoint_path: Optional[Path] = None
    curve_path: Optional[Path] = None


LOSS_CURVE_HEADER = ("step", "loss", "masked_tokens", "wall_ms")


def write_loss_curve(path, curve: list[LossPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CURVE_HEADER)
        for pt in curve:
            writer.writerow([pt.step, repr(pt.loss), pt.masked_tokens, repr(pt.wall_ms)])


def train(
    corpus: list[str],
    vocab: Vocabulary,
    model_config: ModelConfig,
    training_config: TrainingConfig,
    *,
    out_dir=None,
    init_store: Optional[ParameterStore] = None,
) -> TrainResult:
    """Run corrupt -> forward -> loss -> backward -> adam for max_steps.

    The corpus should already be sentence-filtered. Batches are sampled
    with replacement; a batch that happens to contain zero corrupted
    positions is re-corrupted from the same rng stream, so runs stay
    deterministic given the seed. When out_dir is given the final
    checkpoint and the loss curve CSV are written there.
    """
    if not corpus:
        raise InputError("empty training corpus")
    cfg = training_config
    encodings = [encode(s, vocab, max_len=cfg.max_seq_len) for s in corpus]
    all_ids, all_mask = stack_encodings(encodings)

    rng, drop_rng = np.random.default_rng(cfg.seed).spawn(2)
    store = init_store if init_store is not None else init_parameters(
        model_config, seed=cfg.seed
    )
    params = {name: t.data for name, t in store.items()}
    state = init_adam_state(params)
    curve: list[LossPoint] = []
    skipped = 0

    for step in range(1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        rows = rng.integers(0, all_ids.shape[0], size=cfg.batch_size)
        batch = mlm_corrupt(all_ids[rows], all_mask[rows], vocab, cfg, rng)
        skipped += batch.n_skipped
        while batch.n_corrupted == 0:
            if cfg.mask_prob == 0.0:
                raise TrainingError("mask_prob 0 can never produce a training signal")
            batch = mlm_corrupt(all_ids[rows], all_mask[rows], vocab, cfg, rng)
            skipped += batch.n_skipped
        try:
            with Tape() as tape:
                out = forward(
                    store,
                    batch.input_ids,
                    batch.attention_mask,
                    mode="train",
                    dropout_rng=drop_rng,
                )
                loss = mlm_loss(out.logits, batch.labels)
            grads_by_id = backward(tape, loss)
            grads = {
                name: grads_by_id[t.node_id]
                for name, t in store.items()
                if t.node_id in grads_by_id
            }
            params, state = adam_step(params, grads, state, cfg, step)
            store = ParameterStore(
                model_config,
                {name: Tensor(p, requires_grad=True) for name, p in params.items()},
            )
        except NumericError as e:
            raise TrainingError(f"non-finite value at step {step}: {e}") from None
        wall_ms = (time.perf_counter() - t0) * 1e3
        curve.append(LossPoint(step, float(loss.data), batch.n_corrupted, wall_ms))

    result = TrainResult(store=store, curve=curve, skipped_sequences=skipped)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out / "checkpoint.ckpt"
        result.curve_path = out / "loss_curve.csv"
        save_checkpoint(result.checkpoint_path, store)
        write_loss_curve(result.curve_path, curve)
    return result
