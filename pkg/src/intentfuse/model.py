"""Encoders + fusion head assembled into one classifier, and its checkpoint."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .fusion import LABEL_NAMES, FusionConfig, FusionHead, UnimodalHead, fuse, head_logits
from .nn import Module
from .tensor import Tensor
from .text import TextEncoder, TextEncoderConfig, Vocabulary
from .vision import VisionEncoder, VisionEncoderConfig

MODALITIES = ("text", "image", "both")
MANIFEST_KEY = "__manifest__"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    modality: str = "both"
    text: TextEncoderConfig | None = None
    vision: VisionEncoderConfig | None = None
    fusion: FusionConfig | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}; got {self.modality!r}")
        if self.modality != "image" and self.text is None:
            raise ValueError("text config required")
        if self.modality != "text" and self.vision is None:
            raise ValueError("vision config required")
        if self.modality == "both" and self.fusion is None:
            raise ValueError("fusion config required for multimodal models")

    @property
    def strategy(self) -> str | None:
        return self.fusion.strategy if self.modality == "both" else None

    @property
    def row_label(self) -> str:
        if self.modality == "text":
            return "Text-only"
        if self.modality == "image":
            return "Image-only"
        return f"{self.strategy.capitalize()} fusion"

    @property
    def group(self) -> str:
        """Report group key: 'text', 'image' or the fusion strategy."""
        return self.strategy or self.modality

    @property
    def model_id(self) -> str:
        img = f"patch-{self.vision.pooling}" if self.vision is not None else ""
        if self.modality == "text":
            return "text-transformer"
        if self.modality == "image":
            return img
        return f"text-transformer+{img}"

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "text": asdict(self.text) if self.text else None,
            "vision": asdict(self.vision) if self.vision else None,
            "fusion": asdict(self.fusion) if self.fusion else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            modality=d["modality"],
            text=TextEncoderConfig(**d["text"]) if d.get("text") else None,
            vision=VisionEncoderConfig(**d["vision"]) if d.get("vision") else None,
            fusion=FusionConfig(**d["fusion"]) if d.get("fusion") else None,
        )


class IntentModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        # early fusion reads input-stage features only, so no encoder stacks are built
        shallow_only = cfg.strategy == "early"
        if cfg.text is not None and cfg.modality != "image":
            tcfg = replace(cfg.text, n_layers=0) if shallow_only else cfg.text
            self.text = TextEncoder(tcfg, rng)
        if cfg.vision is not None and cfg.modality != "text":
            vcfg = replace(cfg.vision, n_layers=0) if shallow_only else cfg.vision
            self.vision = VisionEncoder(vcfg, rng)
        if cfg.modality == "both":
            self.head = FusionHead(cfg.fusion, rng)
        elif cfg.modality == "text":
            self.head = UnimodalHead(cfg.text.d_model, rng, cfg.text.dropout_p)
        else:
            self.head = UnimodalHead(cfg.vision.d_model, rng, cfg.vision.dropout_p)

    def logits(self, ids: np.ndarray | None, images: np.ndarray | None, training: bool = False, rng=None) -> Tensor:
        cfg = self.cfg
        deep = cfg.strategy != "early"
        if cfg.modality == "text":
            return self.head(self.text(ids, training, rng).cls, training, rng)
        if cfg.modality == "image":
            return self.head(self.vision(images, training, rng).pooled, training, rng)
        tf = self.text(ids, training, rng, deep=deep)
        vf = self.vision(images, training, rng, deep=deep)
        return head_logits(fuse(tf, vf, self.head), self.head, training, rng)

    def predict_proba(self, ids, images) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.logits(ids, images)).data


def save_checkpoint(path: str | Path, model: IntentModel, vocab: Vocabulary | None, extra: dict | None = None) -> None:
    manifest = {
        "version": CHECKPOINT_VERSION,
        "strategy": model.cfg.strategy,
        "config": model.cfg.to_dict(),
        "labels": list(LABEL_NAMES),
        "vocab": list(vocab.tokens) if vocab is not None else None,
    }
    if extra:
        manifest.update(extra)
    raw = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tensors = dict(model.state_dict())
    tensors[MANIFEST_KEY] = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    T.save_tensors(path, tensors)


def read_manifest(tensors: dict[str, np.ndarray]) -> dict:
    if MANIFEST_KEY not in tensors:
        raise ValueError("checkpoint has no manifest entry")
    return json.loads(tensors[MANIFEST_KEY].astype(np.uint8).tobytes().decode("utf-8"))


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None):
    """Return ``(model, vocab, manifest)``; a config mismatch is a hard error."""
    tensors = T.load_tensors(path)
    manifest = read_manifest(tensors)
    if manifest.get("labels") != list(LABEL_NAMES):
        raise ValueError(f"{path}: label ordering {manifest.get('labels')} differs from {list(LABEL_NAMES)}")
    cfg = ModelConfig.from_dict(manifest["config"])
    if expected is not None and expected != cfg:
        raise ValueError(f"{path}: checkpoint config {cfg} does not match requested {expected}")
    model = IntentModel(cfg, np.random.default_rng(0))
    model.load_state_dict({k: v for k, v in tensors.items() if k != MANIFEST_KEY})
    vocab = Vocabulary(tuple(manifest["vocab"])) if manifest.get("vocab") is not None else None
    return model, vocab, manifest
