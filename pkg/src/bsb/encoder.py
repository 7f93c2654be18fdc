"""BERT-style masked-language-model encoder on the autodiff core.

Architecture: summed token/position/type embeddings with layer norm, a
stack of post-norm transformer blocks (multi-head self-attention with an
additive padding mask, then a gelu feed-forward, each with residual and
layer norm), and an MLM head (dense transform, gelu, layer norm, decoder
tied to the token-embedding table plus an output bias).

Five named presets span the size grid:

    name    hidden  heads  layers  parameters
    tiny       128      2       2     4,607,360
    mini       256      4       4    11,581,440
    small      512      8       4    29,553,408
    medium     512      8       8    42,162,944
    base       768     12      12   110,650,880

The counts follow from tying the decoder to the embeddings and having no
pooler: V*H + P*H + 2*H + 2H for embeddings and their norm, per layer
4(H^2+H) + 2H + (H*4H+4H) + (4H*H+H) + 2H, and H^2+H + 2H + V for the
MLM head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .tensor import (
    DTYPES,
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    take_rows,
    transpose,
)
from .tokenization import InputError

# (hidden_size, num_attention_heads, num_hidden_layers)
PRESETS = {
    "tiny": (128, 2, 2),
    "mini": (256, 4, 4),
    "small": (512, 8, 4),
    "medium": (512, 8, 8),
    "base": (768, 12, 12),
}

# additive attention bias for masked keys; exp(-1e9) underflows to exactly
# zero, which is what makes padding invariance bit-level rather than approximate
MASK_BIAS = 1e9


class ConfigError(ValueError):
    """Invalid model configuration."""


class ParameterError(ValueError):
    """Parameter store inconsistent with its configuration."""


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    num_attention_heads: int
    num_hidden_layers: int
    intermediate_size: int = 0  # 0 means the standard 4*hidden_size
    vocab_size: int = 32000
    max_position_embeddings: int = 512
    type_vocab_size: int = 2
    hidden_dropout_prob: float = 0.1
    attention_dropout_prob: float = 0.1
    initializer_range: float = 0.02
    activation: str = "gelu"
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.intermediate_size == 0:
            object.__setattr__(self, "intermediate_size", 4 * self.hidden_size)
        for name in (
            "hidden_size",
            "num_attention_heads",
            "num_hidden_layers",
            "intermediate_size",
            "vocab_size",
            "max_position_embeddings",
            "type_vocab_size",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.hidden_size % self.num_attention_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by "
                f"num_attention_heads {self.num_attention_heads}"
            )
        for name in ("hidden_dropout_prob", "attention_dropout_prob"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {p}")
        if self.activation not in ("gelu", "gelu_tanh"):
            raise ConfigError(f"activation must be gelu or gelu_tanh, got {self.activation!r}")
        if self.initializer_range <= 0 or self.layer_norm_eps <= 0:
            raise ConfigError("initializer_range and layer_norm_eps must be positive")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_attention_heads

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        h, a, l = PRESETS[name]
        return cls(hidden_size=h, num_attention_heads=a, num_hidden_layers=l, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        missing = known - set(d)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; the single source of truth for layout.

    Projection weights are stored (in, out) so application is x @ W + b.
    The MLM decoder has no weight entry: it is the transposed token
    embedding table.
    """
    h, i = config.hidden_size, config.intermediate_size
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.word": (config.vocab_size, h),
        "embeddings.position": (config.max_position_embeddings, h),
        "embeddings.token_type": (config.type_vocab_size, h),
        "embeddings.norm.gamma": (h,),
        "embeddings.norm.beta": (h,),
    }
    for li in range(config.num_hidden_layers):
        p = f"layer.{li}"
        for proj in ("query", "key", "value", "output"):
            shapes[f"{p}.attn.{proj}.weight"] = (h, h)
            shapes[f"{p}.attn.{proj}.bias"] = (h,)
        shapes[f"{p}.attn.norm.gamma"] = (h,)
        shapes[f"{p}.attn.norm.beta"] = (h,)
        shapes[f"{p}.ffn.intermediate.weight"] = (h, i)
        shapes[f"{p}.ffn.intermediate.bias"] = (i,)
        shapes[f"{p}.ffn.output.weight"] = (i, h)
        shapes[f"{p}.ffn.output.bias"] = (h,)
        shapes[f"{p}.ffn.norm.gamma"] = (h,)
        shapes[f"{p}.ffn.norm.beta"] = (h,)
    shapes["mlm.transform.weight"] = (h, h)
    shapes["mlm.transform.bias"] = (h,)
    shapes["mlm.norm.gamma"] = (h,)
    shapes["mlm.norm.beta"] = (h,)
    shapes["mlm.output_bias"] = (config.vocab_size,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Closed-form scalar count; equals the instantiated store's element sum."""
    h, i, v = config.hidden_size, config.intermediate_size, config.vocab_size
    emb = v * h + config.max_position_embeddings * h + config.type_vocab_size * h + 2 * h
    per_layer = 4 * (h * h + h) + 2 * h + (h * i + i) + (i * h + h) + 2 * h
    head = (h * h + h) + 2 * h + v
    return emb + config.num_hidden_layers * per_layer + head


class ParameterStore:
    """Ordered name -> Tensor map for one model instance.

    Immutable during inference; training owns it exclusively between
    optimizer steps. All tensors share one dtype.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        expected = parameter_shapes(config)
        missing = expected.keys() - tensors.keys()
        if missing:
            raise ParameterError(f"missing parameters: {sorted(missing)[:3]}")
        extra = tensors.keys() - expected.keys()
        if extra:
            raise ParameterError(f"unexpected parameters: {sorted(extra)[:3]}")
        dtypes = {t.data.dtype for t in tensors.values()}
        if len(dtypes) != 1:
            raise ParameterError(f"mixed dtypes in store: {sorted(map(str, dtypes))}")
        for name, shape in expected.items():
            got = tensors[name].data.shape
            if got != shape:
                raise ParameterError(f"{name}: expected shape {shape}, got {got}")
        self.config = config
        self._tensors = {name: tensors[name] for name in expected}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def dtype(self) -> str:
        d = next(iter(self._tensors.values())).data.dtype
        return "f32" if d == np.float32 else "f64"

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def astype(self, dtype: str) -> "ParameterStore":
        np_dtype = DTYPES[dtype]
        return ParameterStore(
            self.config,
            {n: Tensor(t.data.astype(np_dtype), requires_grad=t.requires_grad)
             for n, t in self.items()},
        )


# Standard-deviation shrink of a normal truncated at +/-2 sigma. Dividing
# the raw sigma by this factor makes the post-truncation sample std equal
# the configured initializer_range instead of falling 12% short.
_a = 2.0
_TRUNC_STD_FACTOR = math.sqrt(
    1.0 - 2.0 * _a * (math.exp(-0.5 * _a * _a) / math.sqrt(2.0 * math.pi))
    / math.erf(_a / math.sqrt(2.0))
)


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal draws truncated at two raw sigmas, rescaled so that the
    surviving sample has standard deviation `std`."""
    raw = std / _TRUNC_STD_FACTOR
    bound = 2.0 * raw
    x = rng.normal(0.0, raw, size=shape)
    bad = np.abs(x) > bound
    while bad.any():
        x[bad] = rng.normal(0.0, raw, size=int(bad.sum()))
        bad = np.abs(x) > bound
    return x


def init_parameters(config: ModelConfig, seed: int = 0, dtype: str = "f64") -> ParameterStore:
    """Fresh store: truncated-normal weights, zero biases, identity norms."""
    if dtype not in DTYPES:
        raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {dtype!r}")
    rng = np.random.default_rng(seed)
    np_dtype = DTYPES[dtype]
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            data = np.ones(shape)
        elif name.endswith((".beta", ".bias", "output_bias")):
            data = np.zeros(shape)
        else:
            data = truncated_normal(rng, shape, config.initializer_range)
        tensors[name] = Tensor(data.astype(np_dtype), requires_grad=True)
    return ParameterStore(config, tensors)


@dataclass
class ForwardOutput:
    hidden: Tensor  # [B, T, H] final encoder states
    logits: Optional[Tensor]  # [B, T, V] MLM scores, None when not requested
    attention_probs: list = field(default_factory=list)  # per layer [B, A, T, T]


def _as_id_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D [batch, seq], got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"{name} must be integer-typed, got {arr.dtype}")
    return arr.astype(np.int64)


def forward(
    store: ParameterStore,
    input_ids,
    attention_mask=None,
    token_type_ids=None,
    *,
    mode: str = "eval",
    dropout_rng: Optional[np.random.Generator] = None,
    return_logits: bool = True,
    collect_attention: bool = False,
) -> ForwardOutput:
    """Run the encoder over a [B, T] id batch.

    mode "train" applies dropout (requires dropout_rng); "eval" is
    deterministic. Padding positions must carry attention_mask 0; their key
    columns get a -1e9 additive bias, so real-token states are unaffected
    by how much padding follows them.
    """
    cfg = store.config
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and dropout_rng is None:
        raise InputError("train mode requires dropout_rng")
    ids = _as_id_array(input_ids, "input_ids")
    b, t = ids.shape
    if t > cfg.max_position_embeddings:
        raise InputError(
            f"sequence length {t} exceeds max_position_embeddings "
            f"{cfg.max_position_embeddings}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(
            f"token id out of range [0, {cfg.vocab_size}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    np_dtype = DTYPES[store.dtype]
    if attention_mask is None:
        mask = np.ones((b, t), dtype=np_dtype)
    else:
        mask = np.asarray(attention_mask, dtype=np_dtype)
        if mask.shape != (b, t):
            raise InputError(f"attention_mask shape {mask.shape} != ids shape {(b, t)}")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise InputError("attention_mask entries must be 0 or 1")
    if token_type_ids is None:
        types = np.zeros((b, t), dtype=np.int64)
    else:
        types = _as_id_array(token_type_ids, "token_type_ids")
        if types.shape != (b, t):
            raise InputError(f"token_type_ids shape {types.shape} != ids shape {(b, t)}")
        if types.min() < 0 or types.max() >= cfg.type_vocab_size:
            raise InputError(f"token type id out of range [0, {cfg.type_vocab_size})")

    train = mode == "train"
    eps = cfg.layer_norm_eps
    gelu_form = "erf" if cfg.activation == "gelu" else "tanh"
    a, dh = cfg.num_attention_heads, cfg.head_size
    h = cfg.hidden_size

    def drop(x: Tensor, p: float) -> Tensor:
        if not train or p == 0.0:
            return x
        return dropout(x, p, dropout_rng)

    def dense(x: Tensor, prefix: str) -> Tensor:
        y = matmul(x, store[f"{prefix}.weight"])
        return add(y, store[f"{prefix}.bias"])

    def norm(x: Tensor, prefix: str) -> Tensor:
        return layer_norm(x, store[f"{prefix}.gamma"], store[f"{prefix}.beta"], eps=eps)

    x = embedding(store["embeddings.word"], ids)
    pos = take_rows(store["embeddings.position"], np.arange(t))
    x = add(x, pos)
    x = add(x, embedding(store["embeddings.token_type"], types))
    x = drop(norm(x, "embeddings.norm"), cfg.hidden_dropout_prob)

    # [B, 1, 1, T] additive key bias: 0 for real tokens, -1e9 for padding.
    # Cast to the store dtype so an f64 mask cannot promote an f32 model.
    mask_bias = Tensor(((mask - 1.0) * MASK_BIAS).reshape(b, 1, 1, t)
                       .astype(store["embeddings.word"].data.dtype, copy=False))

    def split_heads(y: Tensor) -> Tensor:
        return transpose(reshape(y, (b, t, a, dh)), (0, 2, 1, 3))

    attn_probs = []
    for li in range(cfg.num_hidden_layers):
        p = f"layer.{li}"
        q = split_heads(dense(x, f"{p}.attn.query"))
        k = split_heads(dense(x, f"{p}.attn.key"))
        v = split_heads(dense(x, f"{p}.attn.value"))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        scores = add(scores, mask_bias)
        probs = softmax(scores, axis=-1)
        if collect_attention:
            attn_probs.append(probs.data.copy())
        probs = drop(probs, cfg.attention_dropout_prob)
        ctx = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (b, t, h))
        attn_out = drop(dense(ctx, f"{p}.attn.output"), cfg.hidden_dropout_prob)
        x = norm(add(x, attn_out), f"{p}.attn.norm")
        ffn = gelu(dense(x, f"{p}.ffn.intermediate"), form=gelu_form)
        ffn_out = drop(dense(ffn, f"{p}.ffn.output"), cfg.hidden_dropout_prob)
        x = norm(add(x, ffn_out), f"{p}.ffn.norm")

    logits = None
    if return_logits:
        y = gelu(dense(x, "mlm.transform"), form=gelu_form)
        y = norm(y, "mlm.norm")
        logits = add(matmul(y, transpose(store["embeddings.word"], (1, 0))),
                     store["mlm.output_bias"])
    return ForwardOutput(hidden=x, logits=logits, attention_probs=attn_probs)
