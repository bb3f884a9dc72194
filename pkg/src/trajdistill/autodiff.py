"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations executed inside a ``with Tape() as tape:`` block are recorded when
any of their inputs requires a gradient; outside a tape nothing is recorded,
which doubles as inference mode.  ``backward(tape, loss)`` walks the tape in
reverse and returns a map from leaf tensors to gradients.

Broadcasting follows numpy's right-aligned rule (trailing axes, size-1 axes
and scalars); gradients are reduced back to the operand shapes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

DEFAULT_DTYPE = np.float64

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def _flop_stack() -> list:
    stack = getattr(_state, "flops", None)
    if stack is None:
        stack = _state.flops = []
    return stack


@dataclass
class FlopCounter:
    """Multiply-accumulate count of matmul calls made while active."""

    matmul: int = 0

    def add(self, n: int) -> None:
        self.matmul += int(n)


@contextmanager
def count_flops():
    counter = FlopCounter()
    stack = _flop_stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def _count(n: int) -> None:
    for c in _flop_stack():
        c.add(n)


class Node:
    __slots__ = ("inputs", "output", "backward", "kind")

    def __init__(self, kind: str, inputs: tuple, output: "Tensor", backward: Callable):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Tapes are single-writer: use one per thread.  Entering a tape makes it the
    recording target for the current thread; tapes nest.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - defensive
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, kind, inputs, output, backward) -> None:
        output.node = len(self.nodes)
        self.nodes.append(Node(kind, inputs, output, backward))


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "node", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.node: int | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method forms -----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op over ``inputs``.

    ``backward(g)`` must return one gradient (or None) per input.  Public so that
    fused kernels can register hand-written adjoints.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape._record(kind, tuple(inputs), out, backward)
        return out
    return Tensor(data)


# ---------------------------------------------------------------------------
# broadcasting helpers

def _broadcast_shape(a: tuple, b: tuple, kind: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a} and {b}") from None


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# elementwise binary

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return record("mul", ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return record("div", out, (a, b), backward)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "minimum")
    ad, bd = a.data, b.data
    out = np.minimum(ad, bd)
    # ties split the gradient evenly
    wa = np.where(ad < bd, 1.0, np.where(ad == bd, 0.5, 0.0))

    def backward(g):
        return unbroadcast(g * wa, ad.shape), unbroadcast(g * (1.0 - wa), bd.shape)

    return record("minimum", out, (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "maximum")
    ad, bd = a.data, b.data
    out = np.maximum(ad, bd)
    wa = np.where(ad > bd, 1.0, np.where(ad == bd, 0.5, 0.0))

    def backward(g):
        return unbroadcast(g * wa, ad.shape), unbroadcast(g * (1.0 - wa), bd.shape)

    return record("maximum", out, (a, b), backward)


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)

    return record("where", out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    out = ad @ bd
    _count(out.size * ad.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record("matmul", out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary

def neg(x) -> Tensor:
    x = as_tensor(x)
    return record("neg", -x.data, (x,), lambda g: (-g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log: non-positive input")
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("relu", np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope)
    return record("leaky_relu", xd * scale, (x,), lambda g: (g * scale,))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("softplus", np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(x.data)
    return record("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    p = float(p)
    return record("power", xd ** p, (x,), lambda g: (g * p * xd ** (p - 1.0),))


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return record("clip", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and normalisers

def _expand_to(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return record("sum", out, (x,), lambda g: (_expand_to(g, shape, axes, keepdims).copy(),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise DomainError("mean over an empty axis")
    shape = x.shape
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return record("mean", out, (x,), lambda g: (_expand_to(g / n, shape, axes, keepdims).copy(),))


def max_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    if xd.size == 0:
        raise DomainError("max over an empty axis")
    kept = xd.max(axis=axes, keepdims=True)
    hit = (xd == kept).astype(xd.dtype)
    hit /= hit.sum(axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)
    return record("max", out, (x,),
                  lambda g: (hit * _expand_to(g, xd.shape, axes, keepdims),))


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Max-subtracted softmax.  ``mask`` (bool, broadcastable) marks the
    admissible entries; excluded entries get probability exactly 0 and a
    fully excluded slice yields all zeros."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DomainError("softmax over an empty axis")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), backward)


def log_softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Log-probabilities; excluded entries (``mask`` False) are reported as 0
    and neither contribute to the normaliser nor receive gradient."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DomainError("log_softmax over an empty axis")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    lse = m + np.log(np.where(s > 0, s, 1.0))
    out = z - lse
    p = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    if mask is not None:
        out = np.where(mask, out, 0.0)

    def backward(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", out, (x,), backward)


def cumsum(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return record("cumsum", np.cumsum(x.data, axis=axis), (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and indexing

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None
    return record("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", np.transpose(x.data, axes), (x,),
                  lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    _broadcast_shape(x.shape, tuple(shape), "broadcast_to")
    old = x.shape
    return record("broadcast_to", np.broadcast_to(x.data, shape).copy(), (x,),
                  lambda g: (unbroadcast(g, old),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return record("concat", out, ts, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return record("stack", out, ts, backward)


def _is_basic(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in idx)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    out = x.data[idx]
    shape, basic = x.shape, _is_basic(idx)

    def backward(g):
        z = np.zeros(shape, dtype=g.dtype)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return record("slice", np.array(out, copy=True), (x,), backward)


def _along_axis(index: np.ndarray, axis: int, shape: tuple) -> tuple:
    """Fancy-index tuple equivalent to take_along_axis(., index, axis)."""
    nd = len(shape)
    axis %= nd
    index = np.asarray(index, dtype=np.int64)
    full = list(index.shape)
    parts = []
    for d in range(nd):
        if d == axis:
            parts.append(index)
        else:
            view = [1] * nd
            view[d] = shape[d] if index.shape[d] != 1 else 1
            full[d] = max(full[d], view[d])
            parts.append(np.arange(view[d]).reshape(view))
    return tuple(np.broadcast_to(p, full) for p in parts)


def gather(x, index, axis: int) -> Tensor:
    """take_along_axis with gradient scattered back additively."""
    x = as_tensor(x)
    if np.asarray(index).ndim != x.ndim:
        raise DimensionError(f"gather: index rank {np.asarray(index).ndim} != input rank {x.ndim}")
    fancy = _along_axis(index, axis, x.shape)
    shape = x.shape

    def backward(g):
        z = np.zeros(shape, dtype=g.dtype)
        np.add.at(z, fancy, g)
        return (z,)

    return record("gather", x.data[fancy], (x,), backward)


def scatter_add(src, index, axis: int, dim_size: int) -> Tensor:
    """out[..., index[i], ...] += src[..., i, ...]; out has ``dim_size`` along axis."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != src.ndim:
        raise DimensionError(f"scatter: index rank {index.ndim} != source rank {src.ndim}")
    out_shape = list(src.shape)
    out_shape[axis % src.ndim] = dim_size
    fancy = _along_axis(index, axis, tuple(out_shape))
    src_shape = src.shape
    out = np.zeros(out_shape, dtype=src.data.dtype)
    np.add.at(out, fancy, src.data)

    def backward(g):
        return (g[fancy].reshape(src_shape),)

    return record("scatter", out, (src,), backward)


# ---------------------------------------------------------------------------
# dispatcher over the op vocabulary

_OPS: dict[str, Callable] = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "exp": exp, "log": log, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "leaky_relu": leaky_relu, "softplus": softplus, "softmax": softmax,
    "log_softmax": log_softmax, "concat": lambda *ts, axis=0: concat(ts, axis),
    "stack": lambda *ts, axis=0: stack(ts, axis), "slice": getitem,
    "sum": sum_, "mean": mean, "sqrt": sqrt, "power": power, "max": max_,
    "gather": gather, "scatter": scatter_add, "minimum": minimum,
    "maximum": maximum, "clip": clip, "where": where, "reshape": reshape,
    "transpose": transpose, "cumsum": cumsum, "broadcast_to": broadcast_to,
}

OP_KINDS = tuple(sorted(_OPS))


def forward_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass

def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss) through ``tape``; return {leaf tensor: gradient}.

    Leaf gradients are also accumulated into ``tensor.grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.node is None:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    start = loss.node
    for node in reversed(tape.nodes[: start + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        owners.pop(id(node.output), None)
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            if k in grads:
                grads[k] = grads[k] + gi
            else:
                grads[k] = gi
                owners[k] = t
    result = {}
    for k, g in grads.items():
        t = owners[k]
        g = np.asarray(g).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
        result[t] = g
    return result


def grad_of(result: dict, t: Tensor) -> np.ndarray:
    """Gradient of ``t`` from a backward() map, zeros when it did not flow."""
    g = result.get(t)
    return np.zeros_like(t.data) if g is None else g


# ---------------------------------------------------------------------------
# finite-difference checking

def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    diff = float(np.linalg.norm(a - b))
    denom = float(np.linalg.norm(a) + np.linalg.norm(b))
    return diff if denom < 1e-8 else diff / denom


def numeric_grad(fn: Callable, arrays: Sequence[np.ndarray], which: int, eps: float = 1e-3) -> np.ndarray:
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    x = base[which]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(*[Tensor(a) for a in base]).data)
        flat[i] = orig - eps
        fm = float(fn(*[Tensor(a) for a in base]).data)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def gradcheck(fn: Callable, arrays: Sequence[np.ndarray], eps: float = 1e-3,
              wrt: Sequence[int] | None = None) -> list[float]:
    """Relative error between reverse-mode and central-difference gradients
    of scalar ``fn(*tensors)`` for each checked input."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    with Tape() as tape:
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        loss = fn(*ts)
    grads = backward(tape, loss)
    errs = []
    for i in wrt:
        ad = grad_of(grads, ts[i])
        fd = numeric_grad(fn, arrays, i, eps)
        errs.append(relative_error(ad, fd))
    return errs
