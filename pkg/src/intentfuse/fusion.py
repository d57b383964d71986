"""Early, intermediate and late fusion of text and image features.

Shapes: text features are (..., d_t), image features (..., d_i).  Early and
intermediate fusion produce a (..., d_fuse) vector that goes through the
shared dropout -> linear -> softmax head; late fusion produces class logits
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import tensor as T
from .nn import Linear, Module, normal_param, zeros_param
from .tensor import Parameter, Tensor

STRATEGIES = ("early", "intermediate", "late")
LATE_WEIGHTINGS = ("learned_scalar", "learned_matrix")


class IntentLabel(IntEnum):
    INFORMATIVE = 0
    ADVOCATIVE = 1
    PROMOTIVE = 2
    EXHIBITIONIST = 3
    EXPRESSIVE = 4
    CONTROVERSIAL = 5

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value: str | int) -> "IntentLabel":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = value.strip()
        if text.isdigit():
            return cls(int(text))
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown intent label {value!r}") from None


LABEL_NAMES = tuple(lbl.title for lbl in IntentLabel)
N_CLASSES = len(IntentLabel)


@dataclass(frozen=True)
class FusionConfig:
    strategy: str
    d_t: int
    d_i: int
    d_fuse: int | None = None
    n_classes: int = N_CLASSES
    dropout_p: float = 0.1
    late_weighting: str = "learned_scalar"
    activation: str = "gelu"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"fusion strategy must be one of {', '.join(STRATEGIES)}; got {self.strategy!r}")
        if self.late_weighting not in LATE_WEIGHTINGS:
            raise ValueError(f"late_weighting must be one of {LATE_WEIGHTINGS}; got {self.late_weighting!r}")
        if self.activation not in T.ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(T.ACTIVATIONS)}; got {self.activation!r}")
        if self.d_fuse is None:
            object.__setattr__(self, "d_fuse", self.d_t)
        if self.d_fuse < 1 or self.n_classes != N_CLASSES:
            raise ValueError("d_fuse must be >= 1 and n_classes must be 6")


def expected_param_count(cfg: FusionConfig) -> int:
    n = cfg.n_classes
    if cfg.strategy == "late":
        combiner = 2 if cfg.late_weighting == "learned_scalar" else 2 * n * n
        return n * cfg.d_t + n + n * cfg.d_i + n + combiner + n
    return cfg.d_fuse * (cfg.d_t + cfg.d_i) + cfg.d_fuse + n * cfg.d_fuse + n


class FusionHead(Module):
    """Parameters of one fusion strategy plus its classifier."""

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = cfg.n_classes
        if cfg.strategy == "early":
            self.W_T = normal_param(rng, (cfg.d_fuse, cfg.d_t))
            self.W_I = normal_param(rng, (cfg.d_fuse, cfg.d_i))
            self.b = zeros_param(cfg.d_fuse)
        elif cfg.strategy == "intermediate":
            self.W = normal_param(rng, (cfg.d_fuse, cfg.d_t + cfg.d_i))
            self.b = zeros_param(cfg.d_fuse)
        else:
            self.head_T = Linear(cfg.d_t, n, rng)
            self.head_I = Linear(cfg.d_i, n, rng)
            # combiner starts as a plain sum of the two logit vectors
            init = np.ones(1) if cfg.late_weighting == "learned_scalar" else np.eye(n)
            self.w_T = Parameter(init, decay=False)
            self.w_I = Parameter(init, decay=False)
            self.b = zeros_param(n)
        if cfg.strategy != "late":
            self.C = normal_param(rng, (n, cfg.d_fuse))
            self.c_b = zeros_param(n)

    @property
    def activation(self):
        return T.ACTIVATIONS[self.cfg.activation]


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.shape[-1] != width:
        raise ValueError(f"{what}: expected last dimension {width}, got shape {x.shape}")


def fuse_early(text_shallow: Tensor, image_shallow: Tensor, head: FusionHead) -> Tensor:
    """``f(W_T T + W_I I + b)`` on shallow (input-stage) features."""
    if head.cfg.strategy != "early":
        raise ValueError(f"fuse_early needs an early head, got {head.cfg.strategy}")
    _check_width(text_shallow, head.cfg.d_t, "text features")
    _check_width(image_shallow, head.cfg.d_i, "image features")
    z = T.linear(text_shallow, head.W_T) + T.linear(image_shallow, head.W_I) + head.b
    return head.activation(z)


def fuse_intermediate(phi_text: Tensor, phi_image: Tensor, head: FusionHead) -> Tensor:
    """``f(W [phi_T; phi_I] + b)``; text block first."""
    if head.cfg.strategy != "intermediate":
        raise ValueError(f"fuse_intermediate needs an intermediate head, got {head.cfg.strategy}")
    _check_width(phi_text, head.cfg.d_t, "text features")
    _check_width(phi_image, head.cfg.d_i, "image features")
    return head.activation(T.linear(T.concat([phi_text, phi_image], axis=-1), head.W, head.b))


def fuse_late(phi_text: Tensor, phi_image: Tensor, head: FusionHead) -> Tensor:
    """Per-modality class logits combined at decision level; returns logits."""
    cfg = head.cfg
    if cfg.strategy != "late":
        raise ValueError(f"fuse_late needs a late head, got {cfg.strategy}")
    _check_width(phi_text, cfg.d_t, "text features")
    _check_width(phi_image, cfg.d_i, "image features")
    h_t = head.head_T(phi_text)
    h_i = head.head_I(phi_image)
    if cfg.late_weighting == "learned_scalar":
        z = head.w_T * h_t + head.w_I * h_i + head.b
    else:
        z = T.linear(h_t, head.w_T) + T.linear(h_i, head.w_I) + head.b
    return head.activation(z)


def head_logits(x: Tensor, head: FusionHead, training: bool = False, rng=None) -> Tensor:
    """Pre-softmax class scores from fused features (or pass-through late logits)."""
    cfg = head.cfg
    if cfg.strategy == "late":
        _check_width(x, cfg.n_classes, "late logits")
        return x
    _check_width(x, cfg.d_fuse, "fused features")
    return T.linear(T.dropout(x, cfg.dropout_p, training, rng), head.C, head.c_b)


def classify(x: Tensor, head: FusionHead, training: bool = False, rng=None) -> Tensor:
    """Probabilities over the six intents."""
    return T.softmax(head_logits(x, head, training, rng))


def fuse(text_feats, image_feats, head: FusionHead) -> Tensor:
    """Dispatch on strategy, picking shallow or deep features as each one needs."""
    if head.cfg.strategy == "early":
        return fuse_early(text_feats.shallow, image_feats.shallow, head)
    if head.cfg.strategy == "intermediate":
        return fuse_intermediate(text_feats.cls, image_feats.pooled, head)
    return fuse_late(text_feats.cls, image_feats.pooled, head)


class UnimodalHead(Module):
    """Dropout -> linear -> (softmax) over one modality's pooled features."""

    def __init__(self, d: int, rng: np.random.Generator, dropout_p: float = 0.1, n_classes: int = N_CLASSES):
        self.out = Linear(d, n_classes, rng)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return self.out(T.dropout(x, self.dropout_p, training, rng))
