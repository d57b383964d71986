import math

import numpy as np
import pytest
from oracles import fd_grad, rel_err

from intentfuse import tensor as T
from intentfuse.fusion import FusionConfig
from intentfuse.model import IntentModel, ModelConfig
from intentfuse.tensor import Parameter, Tensor
from intentfuse.text import CLS, TextEncoderConfig, pad_batch
from intentfuse.training import (
    HISTORY_FIELDS,
    Adam,
    Split,
    TrainConfig,
    cross_entropy,
    early_stopping,
    lr_schedule,
    read_history,
    train,
    write_history,
)
from intentfuse.vision import VisionEncoderConfig

# -- loss --------------------------------------------------------------------


def test_cross_entropy_perfect_prediction():
    logits = Tensor(np.array([[1000.0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1000.0]]))
    assert cross_entropy(logits, [0, 5]).item() == 0.0


def test_cross_entropy_uniform_is_log6():
    assert abs(cross_entropy(Tensor(np.zeros((3, 6))), [0, 2, 4]).item() - math.log(6)) < 1e-15
    assert abs(math.log(6) - 1.7918) < 1e-4


def test_cross_entropy_gradient(rng):
    x = Parameter(rng.normal(size=(5, 6)))
    labels = rng.integers(0, 6, size=5)
    T.backward(cross_entropy(x, labels))
    num = fd_grad(lambda: cross_entropy(x, labels).item(), x.data)
    assert rel_err(x.grad, num) < 1e-5
    # closed form: (softmax - onehot) / B
    p = np.exp(x.data) / np.exp(x.data).sum(axis=1, keepdims=True)
    p[np.arange(5), labels] -= 1
    np.testing.assert_allclose(x.grad, p / 5, atol=1e-15)


def test_cross_entropy_empty_batch():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((0, 6))), [])


# -- schedule ----------------------------------------------------------------


def test_lr_schedule_examples():
    cfg = TrainConfig(warmup_steps=100)
    assert lr_schedule(0, cfg, 1000) == 0.0
    assert lr_schedule(100, cfg, 1000) == 2e-5
    assert abs(lr_schedule(50, cfg, 1000) - 1e-5) < 1e-20
    assert lr_schedule(900, cfg, 1000) == 2e-5


def test_default_warmup_is_tenth_of_steps():
    cfg = TrainConfig()
    assert cfg.resolved_warmup(380) == 38
    assert lr_schedule(19, cfg, 380) == pytest.approx(1e-5, rel=1e-12)


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(epochs=5, patience=6)
    with pytest.raises(ValueError):
        TrainConfig(peak_lr=0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=-1)


# -- Adam --------------------------------------------------------------------


def test_adam_zero_gradient_no_decay_is_noop(rng):
    p = Parameter(rng.normal(size=4))
    before = p.data.copy()
    p.grad = np.zeros(4)
    Adam([("p", p)], TrainConfig(weight_decay=0.0)).step(0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_scalar_hand_trace():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([0.5])
    Adam([("w", p)], TrainConfig(weight_decay=0.0)).step(0.1)
    # m_hat = 0.5, v_hat = 0.25 -> step = 0.1 * 0.5 / (0.5 + 1e-8)
    assert abs(p.data[0] - 0.9) < 1e-6


def test_adam_decay_only_step():
    p = Parameter(np.array([2.0, -3.0]))
    p.grad = np.zeros(2)
    Adam([("w", p)], TrainConfig(weight_decay=0.01)).step(0.1)
    np.testing.assert_allclose(p.data, np.array([2.0, -3.0]) * (1 - 0.001), rtol=1e-15)


def test_adam_skips_decay_for_flagged_params():
    p = Parameter(np.array([2.0]), decay=False)
    p.grad = np.zeros(1)
    Adam([("ln.gain", p)], TrainConfig(weight_decay=0.5)).step(0.1)
    assert p.data[0] == 2.0


def test_adam_two_steps_match_reference():
    cfg = TrainConfig(weight_decay=0.01)
    p = Parameter(np.array([0.3, -0.7]))
    opt = Adam([("w", p)], cfg)
    w, m, v = p.data.copy(), np.zeros(2), np.zeros(2)
    for t, g in enumerate([np.array([0.2, -1.0]), np.array([-0.4, 0.5])], start=1):
        p.grad = g
        opt.step(0.05)
        w = w - 0.05 * 0.01 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, w, rtol=1e-14)


def test_adam_nan_names_parameter():
    p = Parameter(np.zeros(3))
    p.grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="head.W"):
        Adam([("head.W", p)], TrainConfig()).step(0.1)


# -- early stopping ----------------------------------------------------------


def test_early_stopping_patience_arithmetic():
    seq = [0.5, 0.6] + [0.6, 0.55, 0.6, 0.3, 0.6, 0.6, 0.59, 0.6, 0.2, 0.6]
    assert early_stopping(seq, patience=10) == (2, 12)


def test_early_stopping_monotone_runs_out():
    seq = list(np.linspace(0.1, 0.9, 50))
    assert early_stopping(seq, patience=50) == (50, None)


def test_early_stopping_ties_keep_earliest_and_min_delta():
    assert early_stopping([0.5, 0.5, 0.50005, 0.4], patience=5)[0] == 1
    assert early_stopping([0.5, 0.5002], patience=5)[0] == 2


# -- the loop ----------------------------------------------------------------

TEXT = TextEncoderConfig(16, d_model=8, n_layers=1, n_heads=2, max_len=6)
VISION = VisionEncoderConfig(image_size=8, patch_size=4, d_model=8, n_layers=1, n_heads=2)


def toy_split(rng, n, names):
    # class k is signalled by token 3 + k and a bright channel k % 3
    labels = np.arange(n) % 6
    ids = pad_batch([[CLS, 3 + int(k), *rng.integers(9, 16, size=3)] for k in labels], 6)
    imgs = rng.normal(0, 0.3, size=(n, 3, 8, 8))
    for j, k in enumerate(labels):
        imgs[j, k % 3] += 1.0 if k < 3 else -1.0
    return Split([f"{names}{j}" for j in range(n)], ids, None, labels, _eval_cache=imgs)


def make_model(strategy="intermediate", seed=0):
    cfg = ModelConfig("both", TEXT, VISION, FusionConfig(strategy, 8, 8))
    return IntentModel(cfg, np.random.default_rng(seed))


def test_train_restores_best_and_matches_stopping_rule(rng):
    tr, va = toy_split(rng, 24, "t"), toy_split(rng, 12, "v")
    # a pre-filled eval cache stands in for the image pipeline
    tr.images = va.images = np.zeros((1,))
    model = make_model()
    res = train(model, tr, va, TrainConfig(epochs=6, patience=2, peak_lr=3e-3, seed=1), pipeline=object(), augment=False)
    f1s = [h["val_f1"] for h in res.history]
    best, stop = early_stopping(f1s, 2)
    assert res.best_epoch == best
    assert res.epochs_run == (stop or 6)
    for name, p in model.named_parameters():
        assert np.array_equal(p.data, res.best_state[name])
    assert [h["epoch"] for h in res.history] == list(range(1, res.epochs_run + 1))


def test_last_partial_batch_is_kept(rng):
    tr, va = toy_split(rng, 10, "t"), toy_split(rng, 6, "v")
    tr.images = va.images = np.zeros((1,))
    cfg = TrainConfig(epochs=1, patience=1, batch_size=4, warmup_steps=1000, peak_lr=1.0)
    res = train(make_model(), tr, va, cfg, pipeline=object(), augment=False)
    # ceil(10 / 4) = 3 optimiser steps -> lr = 3 / 1000 at the end of the epoch
    assert res.history[0]["lr"] == pytest.approx(3e-3, rel=1e-12)


def test_empty_split_rejected(rng):
    tr = toy_split(rng, 6, "t")
    empty = tr.subset(np.array([], dtype=int))
    with pytest.raises(ValueError):
        train(make_model(), tr, empty, TrainConfig(epochs=1, patience=1))


def test_loss_decreases_on_fixed_batch_desk_model(rng):
    text = TextEncoderConfig(40)  # desk defaults: d=64, 2 layers, 4 heads, max_len 64
    vision = VisionEncoderConfig()  # 32x32, patch 4, d=48
    model = IntentModel(ModelConfig("both", text, vision, FusionConfig("intermediate", 64, 48)), rng)
    ids = pad_batch([[CLS, *rng.integers(3, 40, size=10)] for _ in range(6)], 64)
    imgs = rng.normal(size=(6, 3, 32, 32))
    labels = np.arange(6)
    opt = Adam(model.named_parameters(), TrainConfig())
    losses = []
    for _ in range(20):
        model.zero_grad()
        loss = cross_entropy(model.logits(ids, imgs), labels)
        losses.append(loss.item())
        T.backward(loss)
        opt.step(1e-3)
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_history_round_trip(tmp_path):
    hist = [
        {"epoch": 1, "train_loss": 1.0 / 3, "train_acc": 0.5, "train_f1": 0.25, "val_loss": 2.0, "val_acc": 0.1, "val_f1": 1e-17, "lr": 3e-4},
        {"epoch": 2, "train_loss": 0.1, "train_acc": 0.75, "train_f1": 0.7, "val_loss": 1.5, "val_acc": 0.2, "val_f1": 0.3, "lr": 6e-4},
    ]
    write_history(tmp_path / "h.tsv", hist)
    lines = (tmp_path / "h.tsv").read_text().splitlines()
    assert lines[0].split("\t") == list(HISTORY_FIELDS)
    assert read_history(tmp_path / "h.tsv") == hist
