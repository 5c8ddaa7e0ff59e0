"""Attention seq2seq translator with future-prediction decoder heads.

The decoder is a standard attention LSTM decoder extended, per step, with
two auxiliary predictions: a bag-of-words distribution over the target
words not yet emitted, and a bucketed distribution over the remaining
output length. The previous step's bag-of-words prediction is embedded and
fed back into the next decoder input, so the decoder conditions on an
explicit estimate of what it still has to say.

Per step t, with decoder cell state C_t and per-head carry o_{t-1,k}:

    h_{t,k} = f_k([C_t; o_{t-1,k}])
    g_{t,k} = sigmoid(h_{t,k})
    z_{t,k} = g_{t,k} * tanh(C_t) + (1 - g_{t,k}) * o_{t-1,k}
    o_{t,k} = additive-attention context of z_{t,k} over decoder states s_1..s_t
    p_{t,k} = softmax(W o_{t,k})
    p_t     = mean over heads of p_{t,k}

and the feedback embedding for step t+1 is e_bow = sum_i p_t(i) e_i over
the target embedding table (zero at the first step).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    constant,
    log,
    matmul,
    mul,
    pick_last,
    reshape,
    scale,
    sigmoid,
    softmax,
    tanh,
    tsum,
)
from .data import bow_target, length_target
from .errors import CheckpointError, ConfigError, ContractError, ShapeError
from .layers import AdditiveAttention, BiLstmEncoder, EmbeddingTable, LinearLayer, LstmCell, dropout
from .seeding import rng_for

__all__ = [
    "FpbConfig",
    "FpbModel",
    "EncoderState",
    "DecoderState",
    "BowPrediction",
    "LengthDistribution",
    "ForwardResult",
    "bow_feedback",
    "bow_target",
    "length_target",
    "loss_nll",
    "loss_bow",
    "loss_len",
    "loss_total",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class FpbConfig:
    """Model hyperparameters. ``use_bow``/``use_len`` gate whether the
    corresponding parameters exist at all; with both off this is a plain
    attention seq2seq model."""

    vocab_src: int
    vocab_tgt: int
    d_emb: int = 512
    d_hidden: int = 512
    k_heads: int = 4
    k_len: int = 50
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    dropout_rate: float = 0.2
    use_bow: bool = True
    use_len: bool = True
    # feed the previous bag-of-words prediction back as a constant (default)
    # or let gradient flow through the feedback path into earlier steps
    feedback_backprop: bool = False

    def validate(self) -> None:
        for name in ("vocab_src", "vocab_tgt"):
            if getattr(self, name) < 5:
                raise ConfigError(f"config: {name} must be >= 5 (4 reserved ids), got {getattr(self, name)}")
        for name in ("d_emb", "d_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config: {name} must be positive")
        if self.k_heads < 1:
            raise ConfigError(f"config: k_heads must be >= 1, got {self.k_heads}")
        if self.k_len < 2:
            raise ConfigError(f"config: k_len must be >= 2, got {self.k_len}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config: {name} must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"config: dropout_rate must be in [0, 1), got {self.dropout_rate}")
        # a positive loss weight on a head that does not exist would silently
        # train something other than what the config reads as
        if not self.use_bow and self.lambda2 > 0:
            raise ConfigError("config: lambda2 > 0 requires use_bow=True")
        if not self.use_len and self.lambda3 > 0:
            raise ConfigError("config: lambda3 > 0 requires use_len=True")


@dataclass
class BowPrediction:
    """Per-head distributions over the target vocab and their average."""

    per_head: list[Tensor]
    averaged: Tensor


@dataclass
class LengthDistribution:
    """Distribution over remaining-length buckets 0..k_len-1."""

    probs: Tensor


@dataclass
class EncoderState:
    """Frozen per-batch encoder outputs: annotations (B, S, 2h), the decoder
    init vector, the source pad mask, and precomputed attention keys."""

    annotations: Tensor
    final_summary: Tensor
    src_mask: np.ndarray | None
    enc_keys: Tensor

    @property
    def batch_size(self) -> int:
        return self.annotations.data.shape[0]


@dataclass
class DecoderState:
    """Decoder recurrence plus everything the future-prediction heads carry
    across steps. ``bow``/``length`` hold the predictions made at this state's
    step (None before the first step); ``head_outputs`` are the per-head
    attention outputs o_{t,k} that seed the next step's gating."""

    s: Tensor
    c: Tensor
    history: list[Tensor] = field(default_factory=list)
    hist_cols: list[Tensor] = field(default_factory=list)
    head_outputs: list[Tensor] | None = None
    bow: BowPrediction | None = None
    length: LengthDistribution | None = None
    bow_keys: list[Tensor] = field(default_factory=list)
    len_keys: list[Tensor] = field(default_factory=list)
    t: int = 0

    def reorder(self, indices: np.ndarray) -> "DecoderState":
        """Select/duplicate batch rows (beam bookkeeping). Detaches from any
        tape; decoding runs under no_grad so nothing is lost."""

        def pick(x: Tensor) -> Tensor:
            return Tensor(x.data[indices])

        bow = None
        if self.bow is not None:
            bow = BowPrediction(
                per_head=[pick(p) for p in self.bow.per_head],
                averaged=pick(self.bow.averaged),
            )
        length = None
        if self.length is not None:
            length = LengthDistribution(probs=pick(self.length.probs))
        return DecoderState(
            s=pick(self.s),
            c=pick(self.c),
            history=[pick(h) for h in self.history],
            hist_cols=[pick(h) for h in self.hist_cols],
            head_outputs=None if self.head_outputs is None else [pick(o) for o in self.head_outputs],
            bow=bow,
            length=length,
            bow_keys=[pick(k) for k in self.bow_keys],
            len_keys=[pick(k) for k in self.len_keys],
            t=self.t,
        )


@dataclass
class ForwardResult:
    """Teacher-forced pass: per-step predictions and the assembled losses."""

    step_logits: list[Tensor]
    step_bows: list[BowPrediction] | None
    step_lengths: list[LengthDistribution] | None
    nll: Tensor
    bow_loss: Tensor | None
    len_loss: Tensor | None
    total: Tensor


def bow_feedback(
    prev: BowPrediction | None,
    table: Tensor,
    batch_size: int = 1,
    backprop: bool = False,
) -> Tensor:
    """Expected embedding under the previous bag-of-words prediction:
    e_bow = sum_i p(i) e_i. Absent prediction (the first step) gives zeros.
    By default the result is a constant input, so gradient does not flow
    back into the prediction that produced it."""
    if prev is None:
        return constant(np.zeros((batch_size, table.data.shape[1])))
    if prev.averaged.data.shape[1] != table.data.shape[0]:
        raise ShapeError(
            f"bow_feedback: prediction width {prev.averaged.data.shape[1]} != "
            f"table rows {table.data.shape[0]}"
        )
    if backprop:
        return matmul(prev.averaged, table)
    return constant(prev.averaged.data @ table.data)


class FpbModel:
    """Encoder, decoder, and (optionally) the future-prediction heads.

    Parameters are created in a fixed order from a seed-derived stream, so a
    (config, seed) pair pins every initial value.
    """

    def __init__(self, config: FpbConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = rng_for(seed, "init")
        h = config.d_hidden
        self._params: dict[str, Tensor] = {}

        self.src_emb = EmbeddingTable(config.vocab_src, config.d_emb, rng)
        self.tgt_emb = EmbeddingTable(config.vocab_tgt, config.d_emb, rng)
        self.encoder = BiLstmEncoder(config.d_emb, h, rng)
        self.dec_init = LinearLayer(2 * h, h, rng)
        self.enc_att = AdditiveAttention(h, 2 * h, h, rng)
        self.dec_cell = LstmCell(config.d_emb + 2 * h, h, rng)
        self.out_proj = LinearLayer(h, config.vocab_tgt, rng)
        self._register("src_emb", self.src_emb)
        self._register("tgt_emb", self.tgt_emb)
        self._register("encoder", self.encoder)
        self._register("dec_init", self.dec_init)
        self._register("enc_att", self.enc_att)
        self._register("dec_cell", self.dec_cell)
        self._register("out_proj", self.out_proj)

        if config.use_bow:
            self.bow_f = [LinearLayer(2 * h, h, rng) for _ in range(config.k_heads)]
            self.bow_att = AdditiveAttention(h, h, h, rng)
            # kept bias-free so p = softmax(W o) exactly
            self.bow_proj = LinearLayer(h, config.vocab_tgt, rng, bias=False)
            for k, layer in enumerate(self.bow_f):
                self._register(f"bow_f{k}", layer)
            self._register("bow_att", self.bow_att)
            self._register("bow_proj", self.bow_proj)
        if config.use_len:
            self.len_att = AdditiveAttention(h, h, h, rng)
            self.len_hidden = LinearLayer(2 * h, h, rng)
            self.len_out = LinearLayer(h, config.k_len, rng)
            self._register("len_att", self.len_att)
            self._register("len_hidden", self.len_hidden)
            self._register("len_out", self.len_out)

    def _register(self, prefix: str, component) -> None:
        for name, p in component.params():
            self._params[f"{prefix}.{name}"] = p

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state.keys()) != set(self._params.keys()):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise CheckpointError(
                f"state mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for name, p in self._params.items():
            val = np.asarray(state[name], dtype=np.float64)
            if val.shape != p.data.shape:
                raise CheckpointError(
                    f"state mismatch: {name} has shape {val.shape}, expected {p.data.shape}"
                )
        for name, p in self._params.items():
            p.data[...] = state[name]

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def encode(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncoderState:
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.ndim != 2:
            raise ShapeError(f"encode: src_ids must be (B, S), got {src_ids.shape}")
        if src_ids.shape[1] == 0:
            raise ContractError("encode: empty source sequence")
        emb = dropout(self.src_emb(src_ids), self.config.dropout_rate, training, rng)
        annotations, endpoints = self.encoder(emb, src_mask)
        summary = tanh(self.dec_init(endpoints))
        return EncoderState(
            annotations=annotations,
            final_summary=summary,
            src_mask=src_mask,
            enc_keys=self.enc_att.keys(annotations),
        )

    def init_state(self, enc: EncoderState) -> DecoderState:
        b = enc.batch_size
        h = self.config.d_hidden
        heads = None
        if self.config.use_bow:
            heads = [constant(np.zeros((b, h))) for _ in range(self.config.k_heads)]
        return DecoderState(
            s=enc.final_summary,
            c=constant(np.zeros((b, h))),
            head_outputs=heads,
        )

    def _bow_predict(
        self,
        c_t: Tensor,
        head_outputs: Sequence[Tensor],
        hist_stack: Tensor,
        hist_keys: Tensor | None,
    ) -> tuple[BowPrediction, list[Tensor]]:
        tanh_c = tanh(c_t)
        per_head, contexts, total = [], [], None
        for k in range(self.config.k_heads):
            o_prev = head_outputs[k]
            g = sigmoid(self.bow_f[k](concat([c_t, o_prev], axis=-1)))
            z = add(mul(g, tanh_c), mul(add(constant(1.0), scale(g, -1.0)), o_prev))
            o_k, _ = self.bow_att(z, hist_stack, mask=None, keys=hist_keys)
            p_k = softmax(self.bow_proj(o_k))
            per_head.append(p_k)
            contexts.append(o_k)
            total = p_k if total is None else add(total, p_k)
        averaged = scale(total, 1.0 / self.config.k_heads)
        return BowPrediction(per_head=per_head, averaged=averaged), contexts

    def bow_predict(
        self,
        c_t: Tensor,
        head_outputs: Sequence[Tensor],
        history: Sequence[Tensor],
    ) -> BowPrediction:
        """Bag-of-words prediction from cell state, per-head carries, and the
        decoder states emitted so far (each (B, h))."""
        if not self.config.use_bow:
            raise ContractError("bow_predict: model built with use_bow=False")
        if not history:
            raise ContractError("bow_predict: empty decoder history")
        if len(head_outputs) != self.config.k_heads:
            raise ContractError(
                f"bow_predict: {len(head_outputs)} head carries, expected {self.config.k_heads}"
            )
        b, h = c_t.data.shape
        stack = concat([reshape(s, (b, 1, h)) for s in history], axis=1)
        pred, _ = self._bow_predict(c_t, list(head_outputs), stack, None)
        return pred

    def _length_predict(
        self, s_t: Tensor, hist_stack: Tensor, hist_keys: Tensor | None
    ) -> LengthDistribution:
        ctx, _ = self.len_att(s_t, hist_stack, mask=None, keys=hist_keys)
        hidden = tanh(self.len_hidden(concat([s_t, ctx], axis=-1)))
        return LengthDistribution(probs=softmax(self.len_out(hidden)))

    def length_predict(self, s_t: Tensor, history: Sequence[Tensor]) -> LengthDistribution:
        """Remaining-length distribution from the current decoder state and
        the decoder history."""
        if not self.config.use_len:
            raise ContractError("length_predict: model built with use_len=False")
        if not history:
            raise ContractError("length_predict: empty decoder history")
        b, h = s_t.data.shape
        stack = concat([reshape(s, (b, 1, h)) for s in history], axis=1)
        return self._length_predict(s_t, stack, None)

    def decode_step(
        self,
        prev_ids: np.ndarray,
        state: DecoderState,
        enc: EncoderState,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, DecoderState]:
        """One decoder step. Consumes the previous target ids (B,), returns
        vocab logits (B, V) and the successor state; the input state is not
        mutated, so alternative continuations can branch from it."""
        cfg = self.config
        b = enc.batch_size
        h = cfg.d_hidden
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        if prev_ids.shape != (b,):
            raise ShapeError(f"decode_step: prev_ids shape {prev_ids.shape} != ({b},)")

        emb = dropout(self.tgt_emb(prev_ids), cfg.dropout_rate, training, rng)
        if cfg.use_bow and state.bow is not None:
            emb = add(emb, bow_feedback(state.bow, self.tgt_emb.table, b, cfg.feedback_backprop))
        context, _ = self.enc_att(state.s, enc.annotations, enc.src_mask, enc.enc_keys)
        s_t, c_t = self.dec_cell.step(concat([emb, context], axis=-1), state.s, state.c)
        logits = self.out_proj(dropout(s_t, cfg.dropout_rate, training, rng))

        history = state.history + [s_t]
        hist_cols = state.hist_cols + [reshape(s_t, (b, 1, h))]
        hist_stack = concat(hist_cols, axis=1)
        new = DecoderState(s=s_t, c=c_t, history=history, hist_cols=hist_cols, t=state.t + 1)
        if cfg.use_bow:
            new.bow_keys = state.bow_keys + [self.bow_att.keys(hist_cols[-1])]
            bow, contexts = self._bow_predict(
                c_t, state.head_outputs, hist_stack, concat(new.bow_keys, axis=1)
            )
            new.bow = bow
            new.head_outputs = contexts
        if cfg.use_len:
            new.len_keys = state.len_keys + [self.len_att.keys(hist_cols[-1])]
            new.length = self._length_predict(s_t, hist_stack, concat(new.len_keys, axis=1))
        return logits, new

    def forward_teacher(
        self,
        batch,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> ForwardResult:
        """Teacher-forced pass over a TrainingBatch, assembling all losses."""
        cfg = self.config
        enc = self.encode(batch.src, batch.src_mask, training, rng)
        state = self.init_state(enc)
        step_logits: list[Tensor] = []
        step_bows: list[BowPrediction] = []
        step_lengths: list[LengthDistribution] = []
        for t in range(batch.steps):
            logits, state = self.decode_step(batch.tgt[:, t], state, enc, training, rng)
            step_logits.append(logits)
            if cfg.use_bow:
                step_bows.append(state.bow)
            if cfg.use_len:
                step_lengths.append(state.length)
        nll = loss_nll(step_logits, batch.tgt[:, 1:], batch.step_mask)
        l_bow = loss_bow(step_bows, batch.bow_targets, batch.step_mask) if cfg.use_bow else None
        l_len = loss_len(step_lengths, batch.len_targets, batch.step_mask) if cfg.use_len else None
        total = loss_total(nll, l_bow, l_len, cfg.lambda1, cfg.lambda2, cfg.lambda3)
        return ForwardResult(
            step_logits=step_logits,
            step_bows=step_bows or None,
            step_lengths=step_lengths or None,
            nll=nll,
            bow_loss=l_bow,
            len_loss=l_len,
            total=total,
        )

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self.config, self.state_dict())

    @classmethod
    def from_checkpoint(cls, path) -> "FpbModel":
        config, params = load_checkpoint(path)
        model = cls(config, seed=0)
        model.load_state_dict(params)
        return model


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _step_weights(mask: np.ndarray) -> np.ndarray:
    """Per-entry weights that average over each row's active steps and then
    over rows: weight = active / (row_count * B). Rows with no active step
    weigh zero."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=1, keepdims=True)
    return mask / (np.maximum(counts, 1) * mask.shape[0])


def loss_nll(
    step_logits: Sequence[Tensor], targets: np.ndarray, mask: np.ndarray
) -> Tensor:
    """Token-level negative log-likelihood: per row, mean -log p over real
    steps; then mean over rows. ``targets[:, t]`` is the id scored against
    ``step_logits[t]``."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if len(step_logits) != targets.shape[1] or mask.shape != targets.shape:
        raise ShapeError(
            f"loss_nll: {len(step_logits)} steps vs targets {targets.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise ContractError("loss_nll: mask has no active steps")
    weights = _step_weights(mask)
    total = None
    for t, logits in enumerate(step_logits):
        if not mask[:, t].any():
            continue
        # padded rows pick <pad> here; their weight is zero so only the log
        # domain matters, and softmax output is strictly positive
        picked = pick_last(softmax(logits), targets[:, t])
        term = tsum(mul(log(picked), constant(weights[:, t])))
        total = term if total is None else add(total, term)
    return scale(total, -1.0)


def loss_bow(
    step_bows: Sequence[BowPrediction],
    bow_targets: np.ndarray,
    mask: np.ndarray,
    skip: np.ndarray | None = None,
) -> Tensor:
    """Cross-entropy between predicted averaged bag-of-words distributions
    and the remaining-word targets, averaged over each row's supervised
    steps then over rows. Steps whose target has no mass (nothing left to
    emit) are skipped; ``skip`` overrides that derivation if given."""
    bow_targets = np.asarray(bow_targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if len(step_bows) != bow_targets.shape[1]:
        raise ShapeError(
            f"loss_bow: {len(step_bows)} steps vs targets with {bow_targets.shape[1]} columns"
        )
    if skip is None:
        skip = ~(bow_targets != 0.0).any(axis=2)
    active = mask & ~skip
    if not active.any():
        return constant(np.zeros(1))
    weights = _step_weights(active)
    total = None
    for t, pred in enumerate(step_bows):
        if not active[:, t].any():
            continue
        # cross-entropy only reads predictions where the target has mass, so
        # the log is restricted to that support: entries outside it are
        # replaced by 1 before the log, contributing exactly 0 either way
        # (and keeping an exactly one-hot prediction in-domain).
        q = bow_targets[:, t, :]
        support = (q > 0.0).astype(np.float64)
        safe = add(mul(pred.averaged, constant(support)), constant(1.0 - support))
        ce_rows = tsum(mul(log(safe), constant(q)), axis=1)
        term = tsum(mul(ce_rows, constant(weights[:, t])))
        total = term if total is None else add(total, term)
    return scale(total, -1.0)


def loss_len(
    step_lengths: Sequence[LengthDistribution],
    len_targets: np.ndarray,
    mask: np.ndarray,
) -> Tensor:
    """Negative log-probability of the true remaining-length bucket, averaged
    like the other losses."""
    len_targets = np.asarray(len_targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if len(step_lengths) != len_targets.shape[1] or mask.shape != len_targets.shape:
        raise ShapeError(
            f"loss_len: {len(step_lengths)} steps vs targets {len_targets.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise ContractError("loss_len: mask has no active steps")
    weights = _step_weights(mask)
    total = None
    for t, dist in enumerate(step_lengths):
        if not mask[:, t].any():
            continue
        picked = pick_last(dist.probs, len_targets[:, t])
        term = tsum(mul(log(picked), constant(weights[:, t])))
        total = term if total is None else add(total, term)
    return scale(total, -1.0)


def loss_total(
    l_nll: Tensor,
    l_bow: Tensor | None,
    l_len: Tensor | None,
    lambda1: float,
    lambda2: float,
    lambda3: float,
) -> Tensor:
    """Weighted sum lambda1 * NLL + lambda2 * BOW + lambda3 * length, with
    absent components contributing nothing."""
    total = scale(l_nll, lambda1)
    if l_bow is not None:
        total = add(total, scale(l_bow, lambda2))
    if l_len is not None:
        total = add(total, scale(l_len, lambda3))
    return total


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"FPBCKPT1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: FpbConfig, params: Mapping[str, np.ndarray]) -> None:
    """Binary container: magic, header length, JSON header (format version,
    config echo, tensor names and shapes), then raw little-endian float64
    buffers in header order. Same inputs give identical bytes."""
    names = list(params.keys())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "tensors": [{"name": n, "shape": list(np.asarray(params[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[FpbConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if off + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed header ({e})") from None
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    try:
        config = FpbConfig(**header["config"])
    except (TypeError, KeyError) as e:
        raise CheckpointError(f"{path}: config does not match this version ({e})") from None
    params: dict[str, np.ndarray] = {}
    for rec in header.get("tensors", []):
        shape = tuple(int(s) for s in rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data at {rec['name']!r}")
        params[rec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return config, params
