"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery to express a transformer encoder forward pass and
train it: matmul, elementwise arithmetic, softmax/layer-norm/gelu fused
primitives, embedding lookups and gather/scatter for the loss.

Gradients are recorded on an explicit :class:`Tape`. Running ops inside a
``with Tape() as tape:`` block appends one entry per primitive application;
``backward(tape, loss)`` replays the entries in reverse and returns a map
from leaf node id to gradient array. Outside a tape block the same ops run
forward-only, which is the inference path.

All arrays are row-major numpy arrays. float64 is the default and is what
every correctness test uses; float32 exists for throughput benchmarking.
Every op validates that its output is finite and raises NumericError
otherwise, so NaN/Inf never propagates silently.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import special

DTYPES = {"f32": np.float32, "f64": np.float64}

# Python floats, not numpy scalars: a float64 scalar operand would promote
# float32 activations to float64 under the numpy 2 casting rules.
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NumericError(ArithmeticError):
    """An op produced NaN or Inf."""


class GradientError(RuntimeError):
    """backward() called with a non-scalar loss or an untracked node."""


_node_ids = itertools.count()


def _as_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float64)
    if isinstance(dtype, str):
        try:
            return np.dtype(DTYPES[dtype])
        except KeyError:
            raise ValueError(f"unknown dtype {dtype!r}, expected 'f32' or 'f64'")
    return np.dtype(dtype)


class Tensor:
    """Immutable dense value. Construction copies the input data.

    `requires_grad` marks a leaf whose gradient backward() should report.
    Interior nodes produced by ops are tracked through the active Tape
    instead.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (
            np.float32,
            np.float64,
        ):
            arr = np.array(data, copy=True)
        else:
            arr = np.array(data, dtype=_as_dtype(dtype), copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        """Internal fast path for op outputs. No copy, finiteness enforced."""
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values produced by {op}")
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.node_id = next(_node_ids)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Entry:
    """One recorded primitive application.

    `backward(grad_out)` returns per-input gradient arrays (None for inputs
    that do not receive gradient); whatever intermediate values the rule
    needs are captured in the closure.
    """

    __slots__ = ("op", "inputs", "out_id", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], out_id: int, backward: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.out_id = out_id
        self.backward = backward


_tls = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_tls, "tape", None)


class Tape:
    """Single-writer record of primitive applications, in topological order.

    One training step builds and consumes one tape. Entering the context
    makes every subsequent op record itself when any input is tracked
    (a requires_grad leaf or the output of an earlier recorded op).
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = None

    def __len__(self) -> int:
        return len(self._entries)

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t.node_id in self._tracked


def _record(op: str, inputs: Sequence[Tensor], out: Tensor, backward: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._entries.append(_Entry(op, inputs, out.node_id, backward))
        tape._tracked.add(out.node_id)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-sweep the tape from a scalar loss.

    Returns {node_id: gradient array} for every requires_grad leaf the loss
    depends on. Deterministic given the tape: entries are replayed in strict
    reverse order and each node's gradient is finalized exactly once.
    """
    if loss.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.shape}")
    if loss.node_id not in tape._tracked:
        raise GradientError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape._entries):
        g = grads.pop(entry.out_id, None)
        if g is None:
            continue
        for t, dt in zip(entry.inputs, entry.backward(g)):
            if dt is None or not tape._tracks(t):
                continue
            acc = grads.get(t.node_id)
            grads[t.node_id] = dt if acc is None else acc + dt
    return grads


# --- broadcasting helper ---

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise arithmetic ---

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._wrap(a.data + b.data, "add")
    ash, bsh = a.shape, b.shape
    return _record(
        "add", (a, b), out,
        lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._wrap(a.data - b.data, "sub")
    ash, bsh = a.shape, b.shape
    return _record(
        "sub", (a, b), out,
        lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor._wrap(a.data * b.data, "mul")
    ad, bd = a.data, b.data
    return _record(
        "mul", (a, b), out,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._wrap(a.data * c, "scale")
    return _record("scale", (a,), out, lambda g: (g * c,))


# --- matmul ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported: 2-D x 2-D, batched same-rank with equal leading dims, and
    n-D x 2-D (shared right operand, gradients summed over the batch).
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {ad.shape} @ {bd.shape}")

    if bd.ndim == 2:
        k, n = bd.shape
        if ad.ndim == 2:
            prod = ad @ bd
        else:
            # one fat gemm instead of a strided gemm per leading index,
            # which would re-stream the whole right operand every time
            prod = (ad.reshape(-1, k) @ bd).reshape(*ad.shape[:-1], n)
        out = Tensor._wrap(prod, "matmul")

        def back(g):
            if g.ndim == 2:
                da = g @ bd.T
            else:
                da = (g.reshape(-1, n) @ bd.T).reshape(ad.shape)
            db = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return da, db

        return _record("matmul", (a, b), out, back)

    if ad.ndim == bd.ndim and ad.shape[:-2] == bd.shape[:-2]:
        out = Tensor._wrap(ad @ bd, "matmul")

        def back(g):
            da = g @ np.swapaxes(bd, -1, -2)
            db = np.swapaxes(ad, -1, -2) @ g
            return da, db

        return _record("matmul", (a, b), out, back)

    raise ShapeError(f"unsupported matmul operand ranks: {ad.shape} @ {bd.shape}")


# --- shape movement ---

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = Tensor._wrap(a.data.reshape(shape), "reshape")
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor._wrap(np.ascontiguousarray(a.data.transpose(axes)), "transpose")
    return _record("transpose", (a,), out, lambda g: (g.transpose(inv),))


# --- reductions ---

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor._wrap(a.data.sum(axis=axis, keepdims=keepdims), "sum")
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), out, back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in ax]))
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --- fused neural-net primitives ---

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    xd = x.data
    if xd.shape[axis] < 1:
        raise ShapeError("softmax needs at least one element along its axis")
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(y, "softmax")

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record("softmax", (x,), out, back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = Tensor._wrap(ls, "log_softmax")
    y = np.exp(ls)

    def back(g):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize over the last axis (population variance), then scale/shift."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({h},), got {gamma.shape} and {beta.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = Tensor._wrap(xhat * gamma.data + beta.data, "layer_norm")
    gd = gamma.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dbeta = g.sum(axis=lead)
        dgamma = (g * xhat).sum(axis=lead)
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record("layer_norm", (x, gamma, beta), out, back)


def gelu(x: Tensor, form: str = "erf") -> Tensor:
    """Gaussian error linear unit.

    `form="erf"` is the exact x * Phi(x) definition; `form="tanh"` is the
    cubic tanh approximation, offered for parity with stacks that use it.
    """
    xd = x.data
    if form == "erf":
        phi = 0.5 * (1.0 + special.erf(xd * _INV_SQRT2))
        out = Tensor._wrap(xd * phi, "gelu")

        def back(g):
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
            return (g * (phi + xd * pdf),)

        return _record("gelu", (x,), out, back)
    if form == "tanh":
        c = float(np.sqrt(2.0 / np.pi))
        u = c * (xd + 0.044715 * xd**3)
        t = np.tanh(u)
        out = Tensor._wrap(0.5 * xd * (1.0 + t), "gelu_tanh")

        def back(g):
            du = c * (1.0 + 3 * 0.044715 * xd * xd)
            return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

        return _record("gelu_tanh", (x,), out, back)
    raise ValueError(f"unknown gelu form {form!r}")


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a seedable mask. Call sites skip it in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = Tensor._wrap(x.data * keep, "dropout")
    return _record("dropout", (x,), out, lambda g: (g * keep,))


# --- lookups and gathers ---

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]. Backward scatter-adds."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding ids must be integers")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ShapeError(f"embedding id out of range [0, {n})")
    out = Tensor._wrap(table.data[ids], "embedding")
    tshape = table.shape

    def back(g):
        dt = np.zeros(tshape, dtype=g.dtype)
        np.add.at(dt, ids, g)
        return (dt,)

    return _record("embedding", (table,), out, back)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds them back."""
    if x.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D tensor, got shape {x.shape}")
    idx = np.asarray(idx)
    out = Tensor._wrap(x.data[idx], "take_rows")
    shape = x.shape

    def back(g):
        dx = np.zeros(shape, dtype=g.dtype)
        np.add.at(dx, idx, g)
        return (dx,)

    return _record("take_rows", (x,), out, back)


def pick(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row element gather: out[i] = x[i, idx[i]] for a 2-D tensor."""
    if x.ndim != 2:
        raise ShapeError(f"pick expects a 2-D tensor, got shape {x.shape}")
    idx = np.asarray(idx)
    n = x.shape[0]
    if idx.shape != (n,):
        raise ShapeError(f"pick index must have shape ({n},), got {idx.shape}")
    rows = np.arange(n)
    out = Tensor._wrap(x.data[rows, idx], "pick")
    shape = x.shape

    def back(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[rows, idx] = g
        return (dx,)

    return _record("pick", (x,), out, back)
