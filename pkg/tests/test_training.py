"""Optimizer hand cases, the train-step contract, and whole-run behavior:
convergence, determinism, early stopping, and divergence handling."""

import json

import numpy as np
import pytest

from fpb.autodiff import Tensor
from fpb.data import build_task
from fpb.errors import ConfigError, TrainingError
from fpb.model import FpbModel
from fpb.training import (
    AdamState,
    TrainConfig,
    adam_step,
    clip_global_norm,
    train,
    train_step,
)

from conftest import tiny_batch, tiny_config


def quick_train_config(**overrides):
    base = dict(epochs=2, batch_size=16, seed=1, log_interval=1000, patience=3,
                max_decode_len=12)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# gradient clipping
# ---------------------------------------------------------------------------


def test_clip_rescales_above_threshold():
    grads = {"w": np.array([30.0, 40.0])}
    clipped, norm = clip_global_norm(grads, 10.0)
    assert norm == pytest.approx(50.0, abs=1e-12)
    np.testing.assert_allclose(clipped["w"], [6.0, 8.0], atol=1e-12)


def test_clip_leaves_small_gradients_alone():
    grads = {"w": np.array([3.0, 4.0])}
    clipped, norm = clip_global_norm(grads, 10.0)
    assert norm == pytest.approx(5.0, abs=1e-12)
    assert clipped["w"] is grads["w"]


def test_clip_zero_gradients_unchanged():
    grads = {"w": np.zeros(3)}
    clipped, norm = clip_global_norm(grads, 10.0)
    assert norm == 0.0
    np.testing.assert_array_equal(clipped["w"], np.zeros(3))


def test_clip_spans_multiple_buffers():
    grads = {"a": np.array([30.0]), "b": np.array([40.0])}
    clipped, norm = clip_global_norm(grads, 10.0)
    assert norm == pytest.approx(50.0)
    assert clipped["a"][0] == pytest.approx(6.0, abs=1e-12)
    assert clipped["b"][0] == pytest.approx(8.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_hand_case():
    # bias correction makes the first update -alpha * g/(|g| + eps') exactly
    p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
    state = AdamState(p)
    cfg = TrainConfig()
    adam_step(p, {"w": np.array([1.0])}, state, cfg)
    want = 1.0 - cfg.alpha * 1.0 / (1.0 + cfg.eps)
    assert p["w"].data[0] == pytest.approx(want, abs=1e-12)
    assert p["w"].data[0] == pytest.approx(0.999, abs=1e-6)
    assert state.t == 1


def test_adam_zero_gradients_leave_params_fixed():
    p = {"w": Tensor(np.array([2.0, -3.0]), requires_grad=True)}
    state = AdamState(p)
    for _ in range(5):
        adam_step(p, {"w": np.zeros(2)}, state, TrainConfig())
    np.testing.assert_array_equal(p["w"].data, [2.0, -3.0])
    assert state.t == 5


def test_adam_rejects_nonfinite_gradient_before_mutating():
    p = {
        "a": Tensor(np.array([1.0]), requires_grad=True),
        "b": Tensor(np.array([2.0]), requires_grad=True),
    }
    state = AdamState(p)
    grads = {"a": np.array([0.5]), "b": np.array([np.nan])}
    with pytest.raises(TrainingError, match="b"):
        adam_step(p, grads, state, TrainConfig())
    # nothing moved: parameters, moments, and the step counter are untouched
    assert p["a"].data[0] == 1.0 and p["b"].data[0] == 2.0
    assert state.t == 0
    np.testing.assert_array_equal(state.m["a"], np.zeros(1))
    np.testing.assert_array_equal(state.v["a"], np.zeros(1))


def test_adam_descends_a_quadratic():
    p = {"w": Tensor(np.array([5.0]), requires_grad=True)}
    state = AdamState(p)
    cfg = TrainConfig(alpha=0.1)
    for _ in range(200):
        adam_step(p, {"w": 2.0 * p["w"].data}, state, cfg)
    assert abs(p["w"].data[0]) < 0.5


def test_train_config_validation():
    for bad in (
        dict(alpha=0.0),
        dict(beta1=1.0),
        dict(beta2=-0.1),
        dict(eps=0.0),
        dict(clip_norm=0.0),
        dict(epochs=0),
        dict(batch_size=0),
        dict(patience=0),
        dict(log_interval=0),
        dict(max_decode_len=0),
    ):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    TrainConfig().validate()


# ---------------------------------------------------------------------------
# single optimization steps
# ---------------------------------------------------------------------------


def test_train_step_reduces_loss_over_iterations():
    batch, vocab = tiny_batch(n=6, batch_size=8)
    model = FpbModel(tiny_config(vocab=len(vocab), d_emb=8, d_hidden=8), seed=0)
    adam = AdamState(model.parameters())
    cfg = TrainConfig(alpha=0.02)
    losses = [train_step(model, batch, adam, cfg, None)["loss_total"] for _ in range(100)]
    assert losses[-1] < losses[0] * 0.7
    assert all(np.isfinite(l) for l in losses)


def test_train_step_reports_all_scalars():
    batch, vocab = tiny_batch()
    model = FpbModel(tiny_config(vocab=len(vocab)), seed=0)
    scalars = train_step(model, batch, AdamState(model.parameters()), TrainConfig(), None)
    assert set(scalars) == {"loss_total", "loss_nll", "loss_bow", "loss_len", "grad_norm"}
    assert scalars["grad_norm"] > 0.0


def poison_output_bias(model):
    # a huge bias on one token drives every other token's probability to
    # exactly zero, so scoring any reference token underflows the log
    model.parameters()["out_proj.b"].data[0] = 1e308


def test_train_step_aborts_on_diverged_model_without_update():
    batch, vocab = tiny_batch()
    model = FpbModel(tiny_config(vocab=len(vocab)), seed=0)
    poison_output_bias(model)
    snapshot = {n: p.data.copy() for n, p in model.parameters().items()}
    with pytest.raises(TrainingError):
        train_step(model, batch, AdamState(model.parameters()), TrainConfig(), None)
    for n, p in model.parameters().items():
        np.testing.assert_array_equal(p.data, snapshot[n])


def test_clip_rejects_overflowing_norm():
    with pytest.raises(TrainingError):
        clip_global_norm({"w": np.array([1e200, 1e200])}, 10.0)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def small_bundle(seed=3):
    return build_task("copy", n_train=200, n_dev=20, n_test=20, vocab_size=10,
                      len_range=(2, 5), seed=seed)


def test_two_epoch_convergence_smoke():
    bundle = small_bundle()
    model = FpbModel(
        tiny_config(vocab=len(bundle.vocab_src), d_emb=16, d_hidden=16), seed=0
    )
    result = train(model, bundle, quick_train_config(alpha=0.005))
    first = result.history[0]["loss_nll"]
    last = [r for r in result.history if r["loss_nll"] is not None][-1]["loss_nll"]
    assert last < first
    assert result.epochs_run == 2
    assert 0.0 <= result.best_bleu <= 1.0


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    bundle = small_bundle()

    def run(out):
        model = FpbModel(
            tiny_config(vocab=len(bundle.vocab_src), d_emb=8, d_hidden=8), seed=4
        )
        return train(model, bundle, quick_train_config(), out_dir=out)

    r1 = run(tmp_path / "a")
    r2 = run(tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
        tmp_path / "b" / "metrics.jsonl"
    ).read_bytes()
    assert (tmp_path / "a" / "checkpoint.fpb").exists()
    assert (tmp_path / "a" / "last.fpb").exists()
    assert r1.best_bleu == r2.best_bleu
    for n, v in r1.best_state.items():
        np.testing.assert_array_equal(v, r2.best_state[n])
    records = [
        json.loads(line)
        for line in (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()
    ]
    assert records, "no metrics emitted"
    assert all("dev_bleu" in r for r in records)


def test_train_restores_best_parameters():
    bundle = small_bundle()
    model = FpbModel(tiny_config(vocab=len(bundle.vocab_src), d_emb=8, d_hidden=8), seed=4)
    result = train(model, bundle, quick_train_config())
    for n, p in model.parameters().items():
        np.testing.assert_array_equal(p.data, result.best_state[n])


def test_train_early_stops_on_patience():
    # dropout off and a saturating tiny task: once dev BLEU stops improving,
    # the run must halt after `patience` flat evaluations
    bundle = build_task("copy", n_train=60, n_dev=10, n_test=10, vocab_size=5,
                        len_range=(1, 2), seed=5)
    model = FpbModel(tiny_config(vocab=len(bundle.vocab_src), d_emb=12, d_hidden=12), seed=0)
    cfg = quick_train_config(epochs=30, alpha=0.02, patience=2)
    result = train(model, bundle, cfg)
    assert result.epochs_run < 30
    assert result.best_epoch <= result.epochs_run


def test_train_saves_last_checkpoint_on_divergence(tmp_path):
    bundle = small_bundle()
    model = FpbModel(tiny_config(vocab=len(bundle.vocab_src), d_emb=8, d_hidden=8), seed=4)
    poison_output_bias(model)
    out = tmp_path / "run"
    with pytest.raises(TrainingError):
        train(model, bundle, quick_train_config(), out_dir=out)
    assert (out / "last.fpb").exists()
    assert (out / "metrics.jsonl").exists()
