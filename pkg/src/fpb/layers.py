"""Parameterized building blocks on top of the autodiff core.

Shapes follow a batched convention throughout: activations are (B, d) or
(B, S, d), integer id arrays are plain numpy int64. Weights initialize
uniformly in [-0.08, 0.08]; biases start at zero except LSTM forget gates,
which start at one so early training does not erase cell state.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    gather_rows,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    tanh,
    tsum,
)
from .errors import ConfigError, ContractError, ShapeError

INIT_SCALE = 0.08


def init_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class EmbeddingTable:
    """Trainable id-to-vector lookup, rows indexed by token id."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        if vocab_size < 1 or dim < 1:
            raise ConfigError(f"embedding: bad dimensions ({vocab_size}, {dim})")
        self.table = Tensor(init_uniform(rng, (vocab_size, dim)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return gather_rows(self.table, ids)

    def params(self):
        return [("table", self.table)]


class LinearLayer:
    """Affine map x -> x @ w.T + b with weight stored as (d_out, d_in)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.w = Tensor(init_uniform(rng, (d_out, d_in)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        nd = x.data.ndim
        if x.data.shape[-1] != self.d_in:
            raise ShapeError(
                f"linear: input width {x.data.shape[-1]} != expected {self.d_in}"
            )
        if nd == 3:
            b, s, d = x.data.shape
            y = matmul(reshape(x, (b * s, d)), self.w, transpose_b=True)
            y = reshape(y, (b, s, self.d_out))
        else:
            y = matmul(x, self.w, transpose_b=True)
        if self.b is not None:
            y = add(y, self.b)
        return y

    def params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class LstmCell:
    """Single LSTM step with four gate projections over [x; h_prev]."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.wi = LinearLayer(d_in + d_hidden, d_hidden, rng)
        self.wf = LinearLayer(d_in + d_hidden, d_hidden, rng)
        self.wo = LinearLayer(d_in + d_hidden, d_hidden, rng)
        self.wc = LinearLayer(d_in + d_hidden, d_hidden, rng)
        self.wf.b.data[:] = 1.0

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        xh = concat([x, h], axis=-1)
        i = sigmoid(self.wi(xh))
        f = sigmoid(self.wf(xh))
        o = sigmoid(self.wo(xh))
        u = tanh(self.wc(xh))
        c_t = add(mul(f, c), mul(i, u))
        h_t = mul(o, tanh(c_t))
        return h_t, c_t

    def params(self):
        out = []
        for gate, layer in (("i", self.wi), ("f", self.wf), ("o", self.wo), ("c", self.wc)):
            for name, p in layer.params():
                out.append((f"{gate}.{name}", p))
        return out


def lstm_step(cell: LstmCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    return cell.step(x, h, c)


class BiLstmEncoder:
    """Bidirectional LSTM producing per-position annotations.

    With a padding mask, state carries through masked positions unchanged in
    both directions, so the forward state read at the last column and the
    backward state read at column zero are the true endpoint states for
    every row regardless of padding.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_hidden = d_hidden
        self.fwd = LstmCell(d_in, d_hidden, rng)
        self.bwd = LstmCell(d_in, d_hidden, rng)

    def _run(self, cell, emb, mask, positions):
        batch, _, _ = emb.data.shape
        h = constant(np.zeros((batch, self.d_hidden)))
        c = constant(np.zeros((batch, self.d_hidden)))
        states = {}
        for t in positions:
            x = emb[:, t, :]
            h_new, c_new = cell.step(x, h, c)
            if mask is not None:
                keep = constant(mask[:, t : t + 1].astype(np.float64))
                drop = constant(1.0 - mask[:, t : t + 1].astype(np.float64))
                h = add(mul(h_new, keep), mul(h, drop))
                c = add(mul(c_new, keep), mul(c, drop))
            else:
                h, c = h_new, c_new
            states[t] = h
        return states

    def __call__(self, emb: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Returns (annotations (B, S, 2h), endpoint concat (B, 2h))."""
        if emb.data.ndim != 3:
            raise ShapeError(f"encoder: expected (B, S, d), got {emb.data.shape}")
        batch, length, _ = emb.data.shape
        if length == 0:
            raise ContractError("encoder: empty input sequence")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (batch, length):
                raise ShapeError(
                    f"encoder: mask shape {mask.shape} != ids shape {(batch, length)}"
                )
            if not mask[:, 0].all():
                raise ContractError("encoder: every row needs a non-pad first position")
        fwd = self._run(self.fwd, emb, mask, range(length))
        bwd = self._run(self.bwd, emb, mask, range(length - 1, -1, -1))
        columns = [
            reshape(concat([fwd[t], bwd[t]], axis=-1), (batch, 1, 2 * self.d_hidden))
            for t in range(length)
        ]
        annotations = concat(columns, axis=1)
        endpoints = concat([fwd[length - 1], bwd[0]], axis=-1)
        return annotations, endpoints

    def params(self):
        out = []
        for direction, cell in (("fwd", self.fwd), ("bwd", self.bwd)):
            for name, p in cell.params():
                out.append((f"{direction}.{name}", p))
        return out


class AdditiveAttention:
    """score_j = v . tanh(Wq q + Wk m_j), softmax over memory positions.

    Key projections depend only on the memory, so callers that attend over a
    fixed memory many times can compute ``keys`` once and pass them back in.
    """

    def __init__(self, d_query: int, d_memory: int, d_att: int, rng: np.random.Generator):
        self.d_query = d_query
        self.d_memory = d_memory
        self.d_att = d_att
        self.wq = Tensor(init_uniform(rng, (d_att, d_query)), requires_grad=True)
        self.wk = Tensor(init_uniform(rng, (d_att, d_memory)), requires_grad=True)
        self.v = Tensor(init_uniform(rng, (d_att,)), requires_grad=True)

    def keys(self, memory: Tensor) -> Tensor:
        batch, length, dm = memory.data.shape
        flat = matmul(reshape(memory, (batch * length, dm)), self.wk, transpose_b=True)
        return reshape(flat, (batch, length, self.d_att))

    def __call__(
        self,
        query: Tensor,
        memory: Tensor,
        mask: np.ndarray | None = None,
        keys: Tensor | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Returns (context (B, d_memory), weights (B, S))."""
        if memory.data.ndim != 3:
            raise ShapeError(f"attention: memory must be (B, S, d), got {memory.data.shape}")
        batch, length, _ = memory.data.shape
        if length == 0:
            raise ContractError("attention: empty memory")
        if query.data.shape != (batch, self.d_query):
            raise ShapeError(
                f"attention: query shape {query.data.shape} != ({batch}, {self.d_query})"
            )
        if keys is None:
            keys = self.keys(memory)
        q = matmul(query, self.wq, transpose_b=True)
        scores = tsum(mul(tanh(add(reshape(q, (batch, 1, self.d_att)), keys)), self.v), axis=2)
        weights = softmax(scores, mask=mask)
        context = tsum(mul(reshape(weights, (batch, length, 1)), memory), axis=1)
        return context, weights

    def params(self):
        return [("wq", self.wq), ("wk", self.wk), ("v", self.v)]


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: surviving entries scale by 1/(1-rate); identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: training mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))
