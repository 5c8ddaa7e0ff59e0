"""Adam training loop with global-norm clipping, periodic metrics, and
dev-BLEU early stopping.

All state lives in plain dicts keyed by parameter name, so optimizer
moments can be inspected and the loop stays easy to reason about. Metrics
append to ``metrics.jsonl`` (one JSON object per line) every
``log_interval`` steps and at every epoch boundary; identical runs produce
byte-identical metrics files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tape, Tensor
from .data import DataBundle, make_batches
from .errors import ConfigError, DomainError, TrainingError
from .model import FpbModel, save_checkpoint
from .seeding import derive_seed, rng_for


@dataclass
class TrainConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    epochs: int = 15
    batch_size: int = 64
    seed: int = 1
    log_interval: int = 50
    patience: int = 3
    max_decode_len: int = 64

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ConfigError(f"train: alpha must be positive, got {self.alpha}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"train: {name} must be in [0, 1), got {v}")
        if self.eps <= 0:
            raise ConfigError(f"train: eps must be positive, got {self.eps}")
        if self.clip_norm <= 0:
            raise ConfigError(f"train: clip_norm must be positive, got {self.clip_norm}")
        for name in ("epochs", "batch_size", "log_interval", "patience", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train: {name} must be >= 1")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: Mapping[str, Tensor]):
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0


def clip_global_norm(
    grads: dict[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients by max_norm/norm when the global L2 norm across
    every buffer exceeds max_norm. Returns (possibly rescaled grads, the
    pre-clip norm)."""
    with np.errstate(over="ignore"):
        sq = math.fsum(float((g * g).sum()) for g in grads.values())
    norm = math.sqrt(sq) if math.isfinite(sq) else sq
    if not math.isfinite(norm):
        # scaling by max_norm/inf would silently zero every gradient and
        # disguise an exploding gradient as a no-op step
        raise TrainingError(f"clip_global_norm: gradient norm is {norm}")
    if norm > max_norm:
        factor = max_norm / norm
        grads = {n: g * factor for n, g in grads.items()}
    return grads, norm


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, applied in place.

    All gradients are checked for finiteness before anything mutates, so a
    raised TrainingError leaves parameters at their pre-step values.
    """
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"adam_step: non-finite gradient in {name}")
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.alpha * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if not np.all(np.isfinite(p.data)):
            raise TrainingError(f"adam_step: non-finite parameter {name}")


def train_step(
    model: FpbModel,
    batch,
    adam: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator | None,
) -> dict:
    """Forward, backward, clip, update on one batch. Returns the per-batch
    scalars used for metrics."""
    model.zero_grad()
    params = model.parameters()
    try:
        with Tape() as tape:
            fwd = model.forward_teacher(batch, training=True, rng=rng)
            loss_val = float(fwd.total.data[0])
            if not math.isfinite(loss_val):
                raise TrainingError(f"train_step: loss is {loss_val}")
            tape.backward(fwd.total)
    except DomainError as e:
        # a reference token's probability underflowed to exactly zero: the
        # run has diverged, which is a training failure, not caller misuse
        raise TrainingError(f"train_step: {e}") from e
    grads = {
        n: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for n, p in params.items()
    }
    grads, norm = clip_global_norm(grads, cfg.clip_norm)
    adam_step(params, grads, adam, cfg)
    return {
        "loss_total": loss_val,
        "loss_nll": float(fwd.nll.data[0]),
        "loss_bow": None if fwd.bow_loss is None else float(fwd.bow_loss.data[0]),
        "loss_len": None if fwd.len_loss is None else float(fwd.len_loss.data[0]),
        "grad_norm": norm,
    }


class _Interval:
    """Running means of per-batch scalars between metric records."""

    KEYS = ("loss_total", "loss_nll", "loss_bow", "loss_len", "grad_norm")

    def __init__(self):
        self.reset()

    def reset(self):
        self.n = 0
        self.sums = {k: 0.0 for k in self.KEYS}
        self.seen = {k: 0 for k in self.KEYS}

    def add(self, scalars: dict) -> None:
        self.n += 1
        for k in self.KEYS:
            if scalars[k] is not None:
                self.sums[k] += scalars[k]
                self.seen[k] += 1

    def means(self) -> dict:
        return {
            k: (self.sums[k] / self.seen[k] if self.seen[k] else None) for k in self.KEYS
        }


@dataclass
class TrainResult:
    """Outcome of a training run. ``history`` mirrors metrics.jsonl;
    ``best_state`` is the parameter snapshot with the highest dev BLEU
    (initial parameters if no epoch improved on -inf, which cannot happen
    since the first eval always improves)."""

    history: list[dict]
    best_state: dict[str, np.ndarray]
    best_bleu: float
    best_epoch: int
    epochs_run: int


def train(
    model: FpbModel,
    bundle: DataBundle,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Full training run with greedy dev-BLEU evaluation each epoch.

    Early-stops after ``patience`` consecutive epochs without a dev BLEU
    improvement. On return the model holds the best-dev parameters. When
    ``out_dir`` is given, writes metrics.jsonl, checkpoint.fpb (best dev)
    and last.fpb (final parameters); if training aborts on a non-finite
    loss or gradient, last.fpb holds the last finite parameters.
    """
    from .decoding import corpus_bleu, greedy_decode_batch  # deferred to avoid a cycle

    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    writer = open(out / "metrics.jsonl", "w", encoding="utf-8") if out is not None else None

    params = model.parameters()
    adam = AdamState(params)
    drop_rng = rng_for(cfg.seed, "dropout")
    history: list[dict] = []
    interval = _Interval()
    step = 0
    best_bleu = -1.0
    best_state = model.state_dict()
    best_epoch = 0
    bad_evals = 0
    epochs_run = 0

    dev_src = [bundle.vocab_src.encode(s) for s in bundle.dev.sources()]
    dev_refs = bundle.dev.targets()

    def emit(epoch: int, dev_bleu: float | None) -> None:
        rec = {"step": step, "epoch": epoch, **interval.means(), "dev_bleu": dev_bleu}
        history.append(rec)
        if writer is not None:
            writer.write(json.dumps(rec) + "\n")
            writer.flush()
        interval.reset()

    try:
        for epoch in range(1, cfg.epochs + 1):
            batches = make_batches(
                bundle.train,
                bundle.vocab_src,
                bundle.vocab_tgt,
                cfg.batch_size,
                model.config.k_len,
                seed=derive_seed(cfg.seed, f"epoch-{epoch}"),
            )
            for batch in batches:
                try:
                    scalars = train_step(model, batch, adam, cfg, drop_rng)
                except TrainingError:
                    if out is not None:
                        model.save(out / "last.fpb")
                    raise
                step += 1
                interval.add(scalars)
                if step % cfg.log_interval == 0:
                    emit(epoch, None)
            epochs_run = epoch

            hyps = greedy_decode_batch(model, dev_src, max_len=cfg.max_decode_len)
            hyp_tokens = [bundle.vocab_tgt.decode(h) for h in hyps]
            dev_bleu = corpus_bleu(hyp_tokens, dev_refs)
            emit(epoch, dev_bleu)

            if dev_bleu > best_bleu:
                best_bleu = dev_bleu
                best_state = model.state_dict()
                best_epoch = epoch
                bad_evals = 0
                if out is not None:
                    save_checkpoint(out / "checkpoint.fpb", model.config, best_state)
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    break
        if out is not None:
            model.save(out / "last.fpb")
            save_checkpoint(out / "checkpoint.fpb", model.config, best_state)
    finally:
        if writer is not None:
            writer.close()

    model.load_state_dict(best_state)
    return TrainResult(
        history=history,
        best_state=best_state,
        best_bleu=best_bleu,
        best_epoch=best_epoch,
        epochs_run=epochs_run,
    )
