"""Run configuration: a line-oriented ``key = value`` file with dotted sections.

Example::

    dataset = data/manifest.tsv
    output_dir = runs/demo
    seed = 0
    model.modality = both
    fusion.strategy = intermediate
    text.d_model = 32
    train.peak_lr = 3e-3

Blank lines and ``#`` comments are ignored.  Every problem found while
parsing or validating is collected so a bad file is reported in one go.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .fusion import FusionConfig
from .model import MODALITIES, ModelConfig
from .text import TextEncoderConfig
from .training import TrainConfig
from .vision import IMAGENET_MEAN, IMAGENET_STD, AugmentPolicy, ImagePipeline, VisionEncoderConfig

OUTPUT_ENV = "INTENTFUSE_OUTPUT_DIR"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class ModelSection:
    modality: str = "both"


@dataclass
class TextSection:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    dropout_p: float = 0.1
    max_vocab: int = 5000


@dataclass
class VisionSection:
    image_size: int = 32
    patch_size: int = 4
    d_model: int = 48
    n_layers: int = 2
    n_heads: int = 4
    pooling: str = "global_average"
    dropout_p: float = 0.1


@dataclass
class FusionSection:
    strategy: str = "intermediate"
    d_fuse: int | None = None
    dropout_p: float = 0.1
    late_weighting: str = "learned_scalar"
    activation: str = "gelu"


@dataclass
class TrainSection:
    epochs: int = 50
    patience: int = 10
    batch_size: int = 16
    peak_lr: float = 2e-5
    warmup_steps: int | None = None
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_delta: float = 1e-4


@dataclass
class AugmentSection:
    enabled: bool = True
    rotate: bool = True
    hflip: bool = True
    brightness: bool = True
    max_degrees: float = 15.0
    flip_p: float = 0.5
    brightness_range: tuple[float, ...] = (0.8, 1.2)


@dataclass
class ImageSection:
    mean: tuple[float, ...] = IMAGENET_MEAN
    std: tuple[float, ...] = IMAGENET_STD
    sharpen_alpha: float = 1.0


SECTION_TYPES = {
    "model": ModelSection,
    "text": TextSection,
    "vision": VisionSection,
    "fusion": FusionSection,
    "train": TrainSection,
    "augment": AugmentSection,
    "image": ImageSection,
}
TOP_LEVEL = {"dataset": str, "output_dir": str, "seed": int, "verbosity": int}


def _coerce(raw: str, typ):
    """Convert ``raw`` to the annotated field type."""
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if raw.lower() in ("none", ""):
            return None
        return _coerce(raw, next(a for a in args if a is not type(None)))
    if origin is tuple:
        return tuple(_coerce(p.strip(), args[0]) for p in raw.split(",") if p.strip())
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


@dataclass
class RunConfig:
    dataset: str = ""
    output_dir: str = "runs"
    seed: int = 0
    verbosity: int = 1
    model: ModelSection = field(default_factory=ModelSection)
    text: TextSection = field(default_factory=TextSection)
    vision: VisionSection = field(default_factory=VisionSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    image: ImageSection = field(default_factory=ImageSection)
    base_dir: Path = field(default=Path("."), repr=False)

    # -- builders -----------------------------------------------------------

    @property
    def dataset_path(self) -> Path:
        p = Path(self.dataset)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_path(self) -> Path:
        override = os.environ.get(OUTPUT_ENV)
        p = Path(override) if override else Path(self.output_dir)
        return p if p.is_absolute() or override else self.base_dir / p

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        t = self.text
        return TextEncoderConfig(vocab_size, t.d_model, t.n_layers, t.n_heads, t.max_len, t.dropout_p)

    def vision_config(self) -> VisionEncoderConfig:
        v = self.vision
        return VisionEncoderConfig(v.image_size, v.patch_size, v.d_model, v.n_layers, v.n_heads, v.pooling, 3, v.dropout_p)

    def model_config(self, vocab_size: int, modality: str | None = None, strategy: str | None = None) -> ModelConfig:
        modality = modality or self.model.modality
        f = self.fusion
        fusion = FusionConfig(
            strategy or f.strategy, self.text.d_model, self.vision.d_model, f.d_fuse,
            dropout_p=f.dropout_p, late_weighting=f.late_weighting, activation=f.activation,
        )
        return ModelConfig(
            modality,
            self.text_config(vocab_size) if modality != "image" else None,
            self.vision_config() if modality != "text" else None,
            fusion if modality == "both" else None,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(**dataclasses.asdict(self.train), seed=self.seed)

    def augment_policy(self) -> AugmentPolicy:
        a = self.augment
        return AugmentPolicy(a.rotate, a.hflip, a.brightness, a.max_degrees, a.flip_p, tuple(a.brightness_range))

    def pipeline(self, trace=None) -> ImagePipeline:
        im = self.image
        return ImagePipeline(self.vision.image_size, im.mean, im.std, self.augment_policy(), im.sharpen_alpha, trace)

    # -- validation ---------------------------------------------------------

    def problems(self, check_paths: bool = True) -> list[str]:
        out = []
        if self.model.modality not in MODALITIES:
            out.append(f"model.modality must be one of {', '.join(MODALITIES)}; got {self.model.modality!r}")
        if self.text.max_vocab < 4:
            out.append("text.max_vocab must be >= 4")
        checks = [
            ("text", lambda: self.text_config(4)),
            ("vision", self.vision_config),
            ("fusion", lambda: self.model_config(4, "both")),
            ("train", self.train_config),
            ("augment", self.augment_policy),
            ("image", lambda: ImagePipeline(self.vision.image_size, self.image.mean, self.image.std)),
        ]
        for name, build in checks:
            try:
                build()
            except (ValueError, TypeError) as exc:
                out.append(f"{name}: {exc}")
        if len(self.augment.brightness_range) != 2:
            out.append("augment.brightness_range needs exactly two values")
        if len(self.image.mean) != 3 or len(self.image.std) != 3:
            out.append("image.mean and image.std need three values")
        if any(x <= 0 for x in self.image.std):
            out.append("image.std values must be positive")
        if check_paths:
            if not self.dataset:
                out.append("dataset is not set")
            elif not self.dataset_path.is_file():
                out.append(f"dataset: no such file {self.dataset_path}")
        return out

    def validate(self, check_paths: bool = True) -> "RunConfig":
        problems = self.problems(check_paths)
        if problems:
            raise ConfigError(problems)
        return self


def parse_config(text: str, base_dir: str | Path = ".", overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse config text; syntax and type errors are raised together as ConfigError."""
    cfg = RunConfig(base_dir=Path(base_dir))
    problems: list[str] = []
    seen: dict[str, int] = {}
    entries: list[tuple[int, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            problems.append(f"line {lineno}: duplicate key {key} (first set on line {seen[key]})")
            continue
        seen[key] = lineno
        entries.append((lineno, key, value))
    entries += [(0, k, str(v)) for k, v in (overrides or {}).items()]

    for lineno, key, value in entries:
        where = f"line {lineno}: " if lineno else "override: "
        section, _, name = key.rpartition(".")
        if not section:
            if key not in TOP_LEVEL:
                problems.append(f"{where}unknown key {key}")
                continue
            target, typ = cfg, TOP_LEVEL[key]
        else:
            if section not in SECTION_TYPES:
                problems.append(f"{where}unknown section {section} in key {key}")
                continue
            target = getattr(cfg, section)
            hints = typing.get_type_hints(type(target))
            if name not in hints:
                problems.append(f"{where}unknown key {key}")
                continue
            typ = hints[name]
        try:
            setattr(target, name, _coerce(value, typ))
        except ValueError as exc:
            problems.append(f"{where}{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path, overrides: dict[str, str] | None = None, check_paths: bool = True) -> RunConfig:
    """Read, parse and validate; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
    cfg = parse_config(text, path.parent, overrides)
    return cfg.validate(check_paths)


def format_config(cfg: RunConfig) -> str:
    lines = [f"{k} = {getattr(cfg, k)}" for k in TOP_LEVEL]
    for section in SECTION_TYPES:
        for f in dataclasses.fields(getattr(cfg, section)):
            v = getattr(getattr(cfg, section), f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{section}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
