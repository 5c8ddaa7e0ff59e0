"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every primitive executed while it is active. Because ops
are appended in execution order the record is already topologically sorted,
so ``Tape.backward`` is a single reverse sweep that accumulates
vector-Jacobian products. Values live in numpy float64 buffers; a ``Tensor``
is a thin shape-tagged wrapper that optionally participates in
differentiation.

A tape and the tensors recorded on it are confined to one thread; the active
tape is tracked per-thread, so read-only evaluation in other threads (under
``no_grad`` or a thread-local tape of their own) is safe as long as nobody
mutates parameter buffers concurrently.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, OracleError, ShapeError

_ids = itertools.count()
_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape():
    """The tape currently recording in this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Shape-tagged float64 array, optionally tracked on the active tape.

    ``grad`` is populated on leaf tensors by ``Tape.backward``. Zero-dim
    inputs are promoted to shape (1,) so every tensor has at least one axis.
    """

    __slots__ = ("data", "requires_grad", "grad", "tid")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tid = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(-1)[0])

    # arithmetic sugar; scalars multiply via the scale primitive
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        other = as_tensor(other)
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """Wrap data as a non-differentiable tensor."""
    return Tensor(data, requires_grad=False)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def detach(x: Tensor) -> Tensor:
    """A non-tracked view of x's values (shares the underlying buffer)."""
    return Tensor(x.data, requires_grad=False)


class _Node:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op: str, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.op = op
        self.out = out
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tape:
    """Ordered record of executed primitives, in execution (hence topological)
    order. Usable as a context manager; nesting is allowed and the innermost
    tape records."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._out_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()
        self._out_ids.clear()

    def _record(self, node: _Node) -> None:
        self._nodes.append(node)
        self._out_ids.add(node.out.tid)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from ``loss`` (shape (1,)).

        Returns a map from leaf tensor id to gradient buffer, covering every
        requires_grad leaf that appears on the tape; leaves not reachable
        from ``loss`` get zero gradients. The same buffers are stored on the
        leaves' ``grad`` attribute. Each recorded op is visited exactly once.
        """
        if loss.data.shape != (1,):
            raise ContractError(
                f"backward: loss must have shape (1,), got {loss.data.shape}"
            )
        if not self._nodes:
            raise ContractError("backward: tape is empty")
        grads: dict[int, np.ndarray] = {loss.tid: np.ones(1)}
        for node in reversed(self._nodes):
            g = grads.get(node.out.tid)
            if g is None:
                continue
            for t, ig in zip(node.inputs, node.vjp(g)):
                if ig is None or not t.requires_grad:
                    continue
                have = grads.get(t.tid)
                # out-of-place accumulation: incoming buffers may be views
                grads[t.tid] = ig if have is None else have + ig
        leaves: dict[int, Tensor] = {}
        for node in self._nodes:
            for t in node.inputs:
                if t.requires_grad and t.tid not in self._out_ids:
                    leaves[t.tid] = t
        result: dict[int, np.ndarray] = {}
        for tid, t in leaves.items():
            g = grads.get(tid)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            result[tid] = g
        return result


class no_grad:
    """Context manager that suspends recording in this thread."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _apply(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(_Node(op, out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.ndim != 2 or B.ndim != 2:
        raise ShapeError(f"matmul: operands must be 2-d, got {A.shape} and {B.shape}")
    Ae = A.T if transpose_a else A
    Be = B.T if transpose_b else B
    if Ae.shape[1] != Be.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ for {A.shape} x {B.shape} "
            f"(transpose_a={transpose_a}, transpose_b={transpose_b})"
        )
    out = Ae @ Be

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            t = g @ Be.T
            ga = t.T if transpose_a else t
        if b.requires_grad:
            t = Ae.T @ g
            gb = t.T if transpose_b else t
        return ga, gb

    return _apply("matmul", out, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(
            f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _apply("add", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(
            f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _apply("mul", out, (a, b), vjp)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _apply("scale", a.data * s, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _apply("exp", out, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _apply("log", np.log(ad), (a,), vjp)


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    if axis is None:
        out = a.data.sum().reshape(1)

        def vjp(g):
            return (np.full(shape, g[0]),)

    else:
        ax = axis if axis >= 0 else axis + a.data.ndim
        if not 0 <= ax < a.data.ndim:
            raise ShapeError(f"sum: axis {axis} out of range for shape {shape}")
        out = a.data.sum(axis=ax)

        def vjp(g):
            return (np.broadcast_to(np.expand_dims(g, ax), shape),)

    return _apply("sum", out, (a,), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.data.shape for t in ts]} do not align on axis {axis}"
        ) from None
    ax = axis if axis >= 0 else axis + ts[0].data.ndim
    sizes = [t.data.shape[ax] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, offsets, axis=ax)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, ts))

    return _apply("concat", out, ts, vjp)


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    ``mask`` (same-shape boolean, True = keep) forces masked entries to be
    exactly zero and renormalizes over the rest; rows with no unmasked entry
    are rejected.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        m = x.max(axis=-1, keepdims=True)
        e = np.exp(x - m)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=-1)):
            raise ContractError("softmax: a row is fully masked")
        xm = np.where(mask, x, -np.inf)
        m = xm.max(axis=-1, keepdims=True)
        e = np.exp(xm - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _apply("softmax", out, (a,), vjp)


def gather_rows(table, ids) -> Tensor:
    """Row lookup (embedding gather): output shape = ids.shape + (row_dim,)."""
    table = as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-d, got {table.data.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(
            f"gather_rows: id out of range [0, {n}) in lookup of shape {idx.shape}"
        )
    out = table.data[idx]
    shape = table.data.shape

    def vjp(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _apply("gather_rows", out, (table,), vjp)


def pick_last(a, ids) -> Tensor:
    """Select one entry per row along the last axis: out[...] = a[..., ids[...]]."""
    a = as_tensor(a)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeError(
            f"pick_last: index shape {idx.shape} must equal {a.data.shape[:-1]}"
        )
    n = a.data.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"pick_last: id out of range [0, {n})")
    expanded = idx[..., None]
    out = np.take_along_axis(a.data, expanded, axis=-1)[..., 0]
    shape = a.data.shape

    def vjp(g):
        ga = np.zeros(shape)
        np.put_along_axis(ga, expanded, g[..., None], axis=-1)
        return (ga,)

    return _apply("pick_last", out, (a,), vjp)


def _basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) for p in parts)


def slice_(a, key) -> Tensor:
    a = as_tensor(a)
    if not _basic_key(key):
        raise ContractError("slice: only basic int/slice indexing is supported")
    out = a.data[key].copy()
    shape = a.data.shape

    def vjp(g):
        ga = np.zeros(shape)
        ga[key] = g
        return (ga,)

    return _apply("slice", out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(
            f"reshape: cannot view {a.data.shape} as {tuple(shape)}"
        ) from None
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _apply("reshape", out, (a,), vjp)


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------


def finite_difference_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of ``f(params)`` against central differences.

    ``f`` must be a deterministic map from the current parameter values to a
    scalar tensor (disable dropout, fix seeds); nondeterminism is detected by
    evaluating twice and raises OracleError. Returns the maximum over all
    parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)

    def value() -> float:
        with no_grad():
            out = f(params)
        if out.data.shape != (1,):
            raise ContractError(
                f"finite_difference_check: f must return shape (1,), got {out.data.shape}"
            )
        return float(out.data[0])

    if value() != value():
        raise OracleError("finite_difference_check: f is not deterministic")

    with Tape() as tape:
        loss = f(params)
        grads = tape.backward(loss)

    worst = 0.0
    for p in params:
        analytic = grads.get(p.tid)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
