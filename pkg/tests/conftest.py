"""Shared helpers for the test suite: tiny deterministic instances."""

import numpy as np
import pytest

from fpb import (
    FpbConfig,
    FpbModel,
    build_vocab,
    gen_synthetic,
    make_batches,
)
from fpb.data import TrainingBatch
from fpb.seeding import rng_for


def tiny_config(vocab: int, **overrides) -> FpbConfig:
    """Small dims everywhere so forward/backward run in milliseconds."""
    base = dict(
        vocab_src=vocab,
        vocab_tgt=vocab,
        d_emb=4,
        d_hidden=5,
        k_heads=2,
        k_len=6,
        dropout_rate=0.0,
    )
    base.update(overrides)
    return FpbConfig(**base)


def tiny_batch(seed=3, n=4, gen_vocab=6, lengths=(4, 6), k_len=6, batch_size=8):
    """A single deterministic copy-task batch plus its shared vocabulary."""
    corpus = gen_synthetic("copy", n, gen_vocab, lengths, seed=seed)
    vocab = build_vocab(corpus.sources(), 50)
    batch = make_batches(corpus, vocab, vocab, batch_size, k_len, seed=0)[0]
    return batch, vocab


def one_step_batch(full: TrainingBatch) -> TrainingBatch:
    """Truncate a batch to its first decode step (targets keep <bos> + one
    token; every supervision column keeps index 0 only)."""
    return TrainingBatch(
        src=full.src,
        src_mask=full.src_mask,
        tgt=full.tgt[:, :2].copy(),
        step_mask=full.step_mask[:, :1].copy(),
        bow_targets=full.bow_targets[:, :1].copy(),
        len_targets=full.len_targets[:, :1].copy(),
    )


def randomize_params(model: FpbModel, seed: int, scale=0.5, att_scale=None):
    """Overwrite every parameter with uniform noise; attention parameters can
    be scaled separately to keep their score tanh away from its linear
    regime (where query gradients nearly cancel)."""
    rng = rng_for(seed, "grad-check-params")
    for name, p in model.parameters().items():
        s = att_scale if att_scale is not None and name.startswith("enc_att.") else scale
        p.data[...] = rng.uniform(-s, s, p.data.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
