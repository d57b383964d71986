"""Finite-difference verification of every parameter gradient of the model."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .fusion import STRATEGIES, FusionConfig
from .model import IntentModel, ModelConfig
from .text import CLS, PAD, TextEncoderConfig
from .training import cross_entropy
from .vision import VisionEncoderConfig

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a| + |n|, 1e-12)`` with Frobenius norms over the tensor."""
    num = np.linalg.norm(analytic - numeric)
    return float(num / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))


def numeric_grad(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. every entry of ``x`` (modified in place, then restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def tiny_configs(vocab_size: int = 16, d: int = 8, pooling: str = "global_average"):
    """Text and vision configs small enough for exhaustive checking."""
    text = TextEncoderConfig(vocab_size, d_model=d, n_layers=1, n_heads=2, max_len=6, dropout_p=0.1)
    vision = VisionEncoderConfig(image_size=8, patch_size=4, d_model=d, n_layers=1, n_heads=2, pooling=pooling)
    return text, vision


def probe_batch(text: TextEncoderConfig, vision: VisionEncoderConfig, batch: int = 3, seed: int = 0):
    """Random ids (with varied padding), pipeline-shaped images and labels."""
    rng = np.random.default_rng(seed)
    ids = np.full((batch, text.max_len), PAD, dtype=np.int64)
    for b in range(batch):
        n = int(rng.integers(2, text.max_len + 1))
        ids[b, 0] = CLS
        ids[b, 1:n] = rng.integers(3, text.vocab_size, size=n - 1)
    images = rng.normal(size=(batch, vision.channels, vision.image_size, vision.image_size))
    labels = rng.integers(0, 6, size=batch)
    return ids, images, labels


@dataclass
class GroupResult:
    strategy: str
    group: str  # top-level module: text, vision or head
    max_error: float
    worst_param: str
    n_params: int

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def check_model(model: IntentModel, ids, images, labels, tag: str = "") -> list[GroupResult]:
    """Compare backprop against central differences for every parameter tensor.

    Runs in eval mode so the loss is a deterministic function of the weights.
    """

    def loss_value() -> float:
        with T.no_grad():
            return cross_entropy(model.logits(ids, images), labels).item()

    model.zero_grad()
    T.backward(cross_entropy(model.logits(ids, images), labels))
    analytic = {name: p.grad.copy() for name, p in model.named_parameters()}

    groups: dict[str, GroupResult] = {}
    for name, p in model.named_parameters():
        err = relative_error(analytic[name], numeric_grad(loss_value, p.data))
        group = name.split(".", 1)[0]
        cur = groups.get(group)
        if cur is None:
            groups[group] = GroupResult(tag, group, err, name, p.data.size)
            continue
        cur.n_params += p.data.size
        if err > cur.max_error:
            cur.max_error, cur.worst_param = err, name
    return list(groups.values())


def run_gradcheck(
    text: TextEncoderConfig,
    vision: VisionEncoderConfig,
    strategies=STRATEGIES,
    seed: int = 0,
    activation: str = "gelu",
) -> tuple[list[GroupResult], dict[str, int]]:
    """Check each fusion strategy; returns the group results and parameter counts."""
    ids, images, labels = probe_batch(text, vision, seed=seed)
    results, counts = [], {}
    for strategy in strategies:
        fusion = FusionConfig(strategy, text.d_model, vision.d_model, activation=activation)
        model = IntentModel(ModelConfig("both", text, vision, fusion), np.random.default_rng(seed))
        # push the combiner and biases off their init values so every path is exercised
        prng = np.random.default_rng(seed + 1)
        for _, p in model.named_parameters():
            p.data = p.data + prng.normal(0.0, 0.1, size=p.data.shape)
        counts[strategy] = model.num_parameters()
        results += check_model(model, ids, images, labels, strategy)
    return results, counts


def format_results(results: list[GroupResult], counts: dict[str, int] | None = None, elapsed: float | None = None) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.strategy:<12} {r.group:<7} max_rel_err={r.max_error:.3e} worst={r.worst_param}")
    if counts:
        lines.append("parameters: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    if elapsed is not None:
        lines.append(f"elapsed: {elapsed:.1f}s")
    return "\n".join(lines) + "\n"


def timed_gradcheck(text, vision, **kw):
    t0 = time.perf_counter()
    results, counts = run_gradcheck(text, vision, **kw)
    return results, counts, time.perf_counter() - t0


def degenerate(text: TextEncoderConfig, vision: VisionEncoderConfig):
    """Same configs with the encoder stacks removed."""
    return replace(text, n_layers=0), replace(vision, n_layers=0)
