"""Image I/O, preprocessing chain and the patch-embedding image encoder.

Images are float64 arrays shaped (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .nn import EncoderBlock, Linear, Module, normal_param
from .tensor import Tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_PPM_HEADER = re.compile(rb"\AP6(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255)


def decode_ppm(buf: bytes) -> np.ndarray:
    m = _PPM_HEADER.match(buf)
    if m is None:
        raise ValueError("not a binary P6 PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    raw = buf[m.end() : m.end() + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError("truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / 255.0


def encode_ppm(img: np.ndarray) -> bytes:
    img = check_image(img)
    h, w, _ = img.shape
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


# ---------------------------------------------------------------------------
# geometry


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample at float coordinates already clipped to the valid range."""
    H, W = img.shape[:2]
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _axis_positions(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize to ``size`` = (height, width)."""
    img = check_image(img)
    h, w = size
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if (h, w) == img.shape[:2]:
        return img.copy()
    ys = _axis_positions(h, img.shape[0])
    xs = _axis_positions(w, img.shape[1])
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, yy, xx)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the centre; pixels mapped from outside the frame are 0."""
    H, W = img.shape[:2]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)))
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    t = np.deg2rad(degrees)
    yy, xx = np.meshgrid(np.arange(H) - cy, np.arange(W) - cx, indexing="ij")
    sy = np.cos(t) * yy - np.sin(t) * xx + cy + 1
    sx = np.sin(t) * yy + np.cos(t) * xx + cx + 1
    return _bilinear_sample(padded, np.clip(sy, 0, H + 1), np.clip(sx, 0, W + 1))


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


@dataclass(frozen=True)
class AugmentPolicy:
    rotate: bool = True
    hflip: bool = True
    brightness: bool = True
    max_degrees: float = 15.0
    flip_p: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.2)

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(rotate=False, hflip=False, brightness=False)


def augment(img: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Random rotation, horizontal flip and brightness scaling, clamped to [0, 1]."""
    out = check_image(img)
    if policy.rotate:
        out = rotate(out, rng.uniform(-policy.max_degrees, policy.max_degrees))
    if policy.hflip and rng.random() < policy.flip_p:
        out = hflip(out)
    if policy.brightness:
        out = out * rng.uniform(*policy.brightness_range)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# filters


def gaussian_blur(img: np.ndarray) -> np.ndarray:
    """3x3 [1,2,1] x [1,2,1] / 16 kernel with reflect padding."""
    # reflect needs at least two pixels per axis
    mode = "reflect" if min(img.shape[:2]) > 1 else "edge"
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode=mode)
    rows = (p[:-2] + 2 * p[1:-1] + p[2:]) / 4.0
    return (rows[:, :-2] + 2 * rows[:, 1:-1] + rows[:, 2:]) / 4.0


def sharpen(img: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Unsharp mask: ``clamp(img + alpha * (img - blur(img)))``."""
    return np.clip(img + alpha * (img - gaussian_blur(img)), 0.0, 1.0)


def filter_chain(img: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Gaussian denoise followed by unsharp-mask sharpening."""
    return sharpen(gaussian_blur(check_image(img)), alpha)


def normalize_stats(img: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    """Per-channel standardisation; returns a (C, H, W) array."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError(f"std must be positive per channel, got {std.tolist()}")
    return ((check_image(img) - mean) / std).transpose(2, 0, 1)


def denormalize_stats(t: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    return np.asarray(t).transpose(1, 2, 0) * np.asarray(std) + np.asarray(mean)


@dataclass
class ImagePipeline:
    """Fixed-order preprocessing: resize -> augment (train) -> filter -> normalise."""

    image_size: int = 32
    mean: tuple[float, ...] = IMAGENET_MEAN
    std: tuple[float, ...] = IMAGENET_STD
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    sharpen_alpha: float = 1.0
    trace: list[str] | None = None

    def _stage(self, name: str, sample_id: str, img: np.ndarray) -> None:
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError(f"stage {name} left [0, 1] for sample {sample_id}")
        if self.trace is not None:
            self.trace.append(f"STAGE {name} {sample_id}")

    def __call__(
        self,
        img: np.ndarray,
        sample_id: str = "-",
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        out = resize_bilinear(img, (self.image_size, self.image_size))
        self._stage("resize", sample_id, out)
        if train:
            out = augment(out, rng, self.policy)
            self._stage("augment", sample_id, out)
        out = filter_chain(out, self.sharpen_alpha)
        self._stage("filter", sample_id, out)
        out = normalize_stats(out, self.mean, self.std)
        if self.trace is not None:
            self.trace.append(f"STAGE normalize {sample_id}")
        return out


# ---------------------------------------------------------------------------
# encoder

POOLING = ("cls_token", "global_average")


@dataclass(frozen=True)
class VisionEncoderConfig:
    image_size: int = 32
    patch_size: int = 4
    d_model: int = 48
    n_layers: int = 2
    n_heads: int = 4
    pooling: str = "global_average"
    channels: int = 3
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size={self.image_size} not divisible by patch_size={self.patch_size}")
        if self.d_model % self.n_heads:
            raise ValueError(f"vision d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.pooling not in POOLING:
            raise ValueError(f"pooling must be one of {POOLING}, got {self.pooling!r}")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2


class ImageFeatures(NamedTuple):
    shallow: Tensor  # mean of pre-encoder patch embeddings
    pooled: Tensor  # CLS state or global average of final patch states


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, H, W) -> (B, n_patches, C * patch * patch), row-major patch order."""
    B, C, H, W = images.shape
    gh, gw = H // patch, W // patch
    x = images.reshape(B, C, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(B, gh * gw, C * patch * patch)


class VisionEncoder(Module):
    def __init__(self, cfg: VisionEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = Linear(cfg.patch_dim, cfg.d_model, rng)
        self.pos_emb = normal_param(rng, (cfg.n_patches, cfg.d_model))
        if cfg.pooling == "cls_token":
            self.cls_token = normal_param(rng, (1, 1, cfg.d_model))
        self.blocks = [EncoderBlock(cfg.d_model, cfg.n_heads, rng, cfg.dropout_p) for _ in range(cfg.n_layers)]

    def __call__(self, images: np.ndarray, training: bool = False, rng=None, deep: bool = True) -> ImageFeatures:
        cfg = self.cfg
        images = np.asarray(images, dtype=np.float64)
        if images.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"expected images (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), got {images.shape}")
        x = self.patch_embed(patchify(images, cfg.patch_size)) + self.pos_emb
        shallow = x.mean(axis=1)
        if not deep:
            return ImageFeatures(shallow, None)
        use_cls = cfg.pooling == "cls_token"
        if use_cls:
            x = T.concat([self.cls_token + np.zeros((x.shape[0], 1, cfg.d_model)), x], axis=1)
        for block in self.blocks:
            x = block(x, None, training, rng)
        pooled = x[:, 0] if use_cls else x.mean(axis=1)
        return ImageFeatures(shallow, pooled)


def encode_image(encoder: VisionEncoder, t: np.ndarray) -> ImageFeatures:
    """Inference encoding of one (C, H, W) tensor; returns 1-D features."""
    with T.no_grad():
        feats = encoder(np.asarray(t)[None])
    return ImageFeatures(feats.shallow[0], feats.pooled[0])
