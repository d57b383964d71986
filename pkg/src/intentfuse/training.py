"""Cross-entropy training with Adam, decoupled weight decay, linear warmup and
early stopping on validation macro-F1."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .metrics import evaluate
from .model import IntentModel
from .tensor import Tensor
from .text import Vocabulary, pad_batch
from .vision import ImagePipeline, resize_bilinear

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "train_f1", "val_loss", "val_acc", "val_f1", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    patience: int = 10
    batch_size: int = 16
    peak_lr: float = 2e-5
    warmup_steps: int | None = None  # None -> warmup_frac of all optimiser steps
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 1 or self.batch_size < 1:
            problems.append("epochs and batch_size must be >= 1")
        if not 0 <= self.patience <= self.epochs:
            problems.append(f"patience={self.patience} must lie in [0, epochs={self.epochs}]")
        if self.peak_lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            problems.append("peak_lr and eps must be positive, weight_decay non-negative")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            problems.append("warmup_steps must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("betas must lie in [0, 1)")
        if problems:
            raise ValueError("; ".join(problems))

    def resolved_warmup(self, total_steps: int) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return int(round(self.warmup_frac * total_steps))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood, via log-softmax of the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cross_entropy on an empty batch")
    if logits.shape[0] != labels.size:
        raise ValueError(f"{logits.shape[0]} logit rows for {labels.size} labels")
    picked = T.log_softmax(logits)[np.arange(labels.size), labels]
    return -picked.mean()


def lr_schedule(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Linear ramp 0 -> peak over the warmup, constant afterwards."""
    warmup = cfg.resolved_warmup(total_steps)
    if warmup == 0:
        return cfg.peak_lr
    return cfg.peak_lr * min(step, warmup) / warmup


class Adam:
    """Bias-corrected Adam; weight decay is decoupled (``p -= lr * wd * p``)
    and skipped for parameters flagged ``decay=False``."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        cfg = self.cfg
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
                raise FloatingPointError(f"non-finite gradient in parameter {name} ({bad} entries)")
        self.t += 1
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if p.decay and cfg.weight_decay:
                p.data = p.data - lr * cfg.weight_decay * p.data
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# ---------------------------------------------------------------------------
# early stopping


def early_stopping(val_f1: Sequence[float], patience: int, min_delta: float = 1e-4) -> tuple[int, int | None]:
    """Replay a validation-F1 sequence.

    Returns ``(best_epoch, stop_epoch)`` (1-based); ``stop_epoch`` is None if
    the sequence never exhausts the patience.  Ties keep the earliest epoch.
    """
    best, best_epoch, waited = -np.inf, 0, 0
    for epoch, f1 in enumerate(val_f1, start=1):
        if f1 > best + min_delta:
            best, best_epoch, waited = f1, epoch, 0
        else:
            waited += 1
            if waited >= patience:
                return best_epoch, epoch
    return best_epoch, None


# ---------------------------------------------------------------------------
# data feeding


@dataclass
class Split:
    """One split tokenised and with images resized, ready for batching."""

    sample_ids: list[str]
    ids: np.ndarray | None  # (N, max_len)
    images: np.ndarray | None  # (N, H, W, 3) in [0, 1], already resized
    labels: np.ndarray
    _eval_cache: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Split":
        idx = np.asarray(idx)
        return Split(
            [self.sample_ids[i] for i in idx],
            None if self.ids is None else self.ids[idx],
            None if self.images is None else self.images[idx],
            self.labels[idx],
        )


def prepare_split(
    samples,
    images: dict[str, np.ndarray],
    vocab: Vocabulary | None,
    max_len: int,
    image_size: int | None,
    log_lines: list[str] | None = None,
) -> Split:
    ids = None
    if vocab is not None:
        ids = pad_batch([vocab.encode(s.text, max_len, s.id, log_lines) for s in samples], max_len)
    imgs = None
    if image_size is not None:
        imgs = np.stack([resize_bilinear(images[s.id], (image_size, image_size)) for s in samples])
    return Split([s.id for s in samples], ids, imgs, np.array([int(s.label) for s in samples], dtype=np.int64))


def processed_images(split: Split, pipeline: ImagePipeline | None, idx=None, rng=None) -> np.ndarray | None:
    """Pipeline output (B, C, H, W); augmented when ``rng`` is given, cached otherwise."""
    if split.images is None or pipeline is None:
        return None
    if rng is not None:
        idx = np.arange(len(split)) if idx is None else idx
        return np.stack([pipeline(split.images[i], split.sample_ids[i], train=True, rng=rng) for i in idx])
    if split._eval_cache is None:
        split._eval_cache = np.stack(
            [pipeline(img, sid) for img, sid in zip(split.images, split.sample_ids)]
        )
    return split._eval_cache if idx is None else split._eval_cache[idx]


def predict(model: IntentModel, split: Split, pipeline: ImagePipeline | None, batch_size: int = 64):
    """Eval-mode ``(mean loss, predicted labels, probabilities)``."""
    probs, losses = [], []
    with T.no_grad():
        for start in range(0, len(split), batch_size):
            idx = np.arange(start, min(start + batch_size, len(split)))
            ids = None if split.ids is None else split.ids[idx]
            logits = model.logits(ids, processed_images(split, pipeline, idx))
            losses.append(cross_entropy(logits, split.labels[idx]).item() * len(idx))
            probs.append(T.softmax(logits).data)
    p = np.concatenate(probs)
    return float(np.sum(losses) / len(split)), p.argmax(axis=1), p


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "shuffle", "dropout", "augment")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    epochs_run: int
    history: list[dict]


def train(
    model: IntentModel,
    train_split: Split,
    val_split: Split,
    cfg: TrainConfig,
    pipeline: ImagePipeline | None = None,
    augment: bool = True,
) -> TrainResult:
    """Fit ``model`` in place; afterwards it holds the best-validation weights."""
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError("train and validation splits must be non-empty")
    rngs = make_rngs(cfg.seed)
    steps_per_epoch = -(-len(train_split) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    opt = Adam(model.named_parameters(), cfg)
    history: list[dict] = []
    best_f1, best_epoch, waited = -np.inf, 0, 0
    best_state = model.state_dict()
    use_aug = augment and pipeline is not None and train_split.images is not None
    step, lr = 0, 0.0
    for epoch in range(1, cfg.epochs + 1):
        order = rngs["shuffle"].permutation(len(train_split))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            ids = None if train_split.ids is None else train_split.ids[idx]
            imgs = processed_images(train_split, pipeline, idx, rngs["augment"] if use_aug else None)
            model.zero_grad()
            loss = cross_entropy(model.logits(ids, imgs, training=True, rng=rngs["dropout"]), train_split.labels[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step + 1}")
            T.backward(loss)
            step += 1
            lr = lr_schedule(step, cfg, total_steps)
            opt.step(lr)
        tr_loss, tr_pred, _ = predict(model, train_split, pipeline)
        va_loss, va_pred, _ = predict(model, val_split, pipeline)
        tr, va = evaluate(tr_pred, train_split.labels), evaluate(va_pred, val_split.labels)
        history.append(
            dict(
                epoch=epoch,
                train_loss=tr_loss,
                train_acc=tr.accuracy,
                train_f1=tr.macro_f1,
                val_loss=va_loss,
                val_acc=va.accuracy,
                val_f1=va.macro_f1,
                lr=lr,
            )
        )
        log.info("epoch %d loss %.4f train_f1 %.4f val_f1 %.4f", epoch, tr_loss, tr.macro_f1, va.macro_f1)
        if va.macro_f1 > best_f1 + cfg.min_delta:
            best_f1, best_epoch, waited = va.macro_f1, epoch, 0
            best_state = model.state_dict()
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state, best_epoch, len(history), history)


def write_history(path: str | Path, history: list[dict]) -> None:
    lines = ["\t".join(HISTORY_FIELDS)]
    for row in history:
        lines.append("\t".join(str(row["epoch"]) if k == "epoch" else repr(float(row[k])) for k in HISTORY_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_history(path: str | Path) -> list[dict]:
    rows = Path(path).read_text(encoding="utf-8").strip("\n").split("\n")
    header = tuple(rows[0].split("\t"))
    if header != HISTORY_FIELDS:
        raise ValueError(f"{path}: unexpected history header {header}")
    out = []
    for r in rows[1:]:
        vals = r.split("\t")
        out.append({k: int(v) if k == "epoch" else float(v) for k, v in zip(HISTORY_FIELDS, vals)})
    return out
