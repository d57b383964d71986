"""Dataset manifests, stratified splitting and the planted-signal generator."""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fusion import N_CLASSES, IntentLabel
from .vision import read_ppm, write_ppm

SPLITS = ("train", "test", "val")
UNASSIGNED = "-"
MANIFEST_HEADER = "# id\tsplit\tlabel\timage_path\ttext"


class ManifestError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    label: IntentLabel
    text: str
    image_path: str
    split: str = UNASSIGNED


# ---------------------------------------------------------------------------
# manifest


def format_manifest(samples: Iterable[Sample]) -> str:
    lines = [MANIFEST_HEADER]
    for s in samples:
        lines.append("\t".join([s.id, s.split, s.label.title, s.image_path, s.text]))
    return "\n".join(lines) + "\n"


def save_manifest(path: str | Path, samples: Iterable[Sample]) -> None:
    Path(path).write_text(format_manifest(samples), encoding="utf-8")


def load_manifest(path: str | Path, check_images: bool = True, images: dict | None = None) -> list[Sample]:
    """Parse and validate a manifest; every problem found is reported at once.

    ``image_path`` is relative to the manifest's directory.  Pass a dict as
    ``images`` to keep the decoded pixels, keyed by sample id.
    """
    path = Path(path)
    root = path.parent
    samples: list[Sample] = []
    problems: list[str] = []
    first_line: dict[str, int] = {}
    missing: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            problems.append(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
            continue
        sid, split, label, image_path, text = parts
        if split not in SPLITS and split != UNASSIGNED:
            problems.append(f"line {lineno}: unknown split {split!r}")
            continue
        try:
            lbl = IntentLabel.parse(label)
        except ValueError:
            problems.append(f"line {lineno}: unknown label {label!r}")
            continue
        if sid in first_line:
            problems.append(f"duplicate id {sid!r} on lines {first_line[sid]} and {lineno}")
            continue
        first_line[sid] = lineno
        if check_images:
            img_file = root / image_path
            if not img_file.is_file():
                missing.append(image_path)
            else:
                try:
                    pixels = read_ppm(img_file)
                    if images is not None:
                        images[sid] = pixels
                except ValueError as exc:
                    problems.append(f"line {lineno}: image {image_path} does not decode ({exc})")
        samples.append(Sample(sid, lbl, text, image_path, split))
    if missing:
        problems.append("missing image files: " + ", ".join(missing))
    if problems:
        raise ManifestError(problems)
    return samples


# ---------------------------------------------------------------------------
# stratified split


@dataclass(frozen=True)
class SplitRatios:
    """Defaults are the exact proportions 2423:313:312 of 3048
    (79.5% / 10.3% / 10.2% when rounded)."""

    train: float = 2423 / 3048
    test: float = 313 / 3048
    val: float = 312 / 3048

    def __post_init__(self):
        vals = (self.train, self.test, self.val)
        if any(v < 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {vals}")

    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(v).limit_denominator(10**9) for v in (self.train, self.test, self.val))


def _largest_remainder(n: int, ratios: Sequence[Fraction]) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_counts(class_sizes: dict, ratios: SplitRatios = SplitRatios(), class_keys: dict | None = None) -> dict:
    """Per-class (train, test, val) counts.

    Each class is rounded by largest remainder.  If a split total then falls
    outside the floor/ceiling of its dataset-level quota, single units are
    moved between splits inside one class, choosing the move that gives up
    the least fractional part (ties by ``class_keys``), until every total is
    in range.  Every per-class count stays within one sample of its quota.
    """
    r = ratios.fractions()
    keys = class_keys or {}
    classes = sorted(class_sizes, key=lambda c: (keys.get(c, c), c))
    quota = {c: [class_sizes[c] * x for x in r] for c in classes}
    counts = {c: _largest_remainder(class_sizes[c], r) for c in classes}
    total_quota = [sum(class_sizes.values()) * x for x in r]
    lo = [int(q) for q in total_quota]
    hi = [q if q.denominator == 1 else int(q) + 1 for q in total_quota]

    def total(s):
        return sum(counts[c][s] for c in classes)

    for _ in range(sum(class_sizes.values()) + 1):
        over = [s for s in range(3) if total(s) > hi[s]]
        under = [s for s in range(3) if total(s) < lo[s]]
        if not over and not under:
            return {c: tuple(counts[c]) for c in classes}
        if over:
            srcs, dsts = over, [t for t in range(3) if total(t) < hi[t]]
        else:
            srcs, dsts = [s for s in range(3) if total(s) > lo[s]], under
        best = None
        for ci, c in enumerate(classes):
            for s in srcs:
                for t in dsts:
                    if s == t or counts[c][s] <= quota[c][s] or counts[c][t] >= quota[c][t]:
                        continue
                    # move one unit from a rounded-up cell to a rounded-down one
                    loss = (quota[c][s] - counts[c][s] + 1) - (quota[c][t] - counts[c][t])
                    cand = (loss, ci, s, t)
                    best = cand if best is None or cand < best else best
        if best is None:
            raise ValueError("cannot balance split totals with per-class rounding")
        _, ci, s, t = best
        counts[classes[ci]][s] -= 1
        counts[classes[ci]][t] += 1
    raise ValueError("split balancing did not converge")


def stratified_split(samples: Sequence[Sample], ratios: SplitRatios = SplitRatios(), seed: int = 0) -> list[Sample]:
    """Assign train/test/val per class; returns samples in input order.

    Each class is shuffled with a generator keyed on (seed, the class's member
    ids), so relabelling classes relabels the splits identically.
    """
    by_class: dict[int, list[Sample]] = {}
    for s in samples:
        by_class.setdefault(int(s.label), []).append(s)
    for c, members in by_class.items():
        if len(members) < 3:
            raise ValueError(f"class {IntentLabel(c).title} has {len(members)} samples; at least 3 are needed")
    keys = {c: min(s.id for s in m) for c, m in by_class.items()}
    counts = split_counts({c: len(m) for c, m in by_class.items()}, ratios, keys)
    assigned: dict[str, str] = {}
    for c, members in by_class.items():
        ids = sorted(s.id for s in members)
        digest = zlib.crc32("\n".join(ids).encode("utf-8"))
        order = np.random.default_rng([seed, digest]).permutation(len(ids))
        n_train, n_test, _ = counts[c]
        for rank, j in enumerate(order):
            split = "train" if rank < n_train else "test" if rank < n_train + n_test else "val"
            assigned[ids[j]] = split
    return [replace(s, split=assigned[s.id]) for s in samples]


# ---------------------------------------------------------------------------
# planted-signal generator

PALETTE = (
    (0.90, 0.15, 0.15),
    (0.15, 0.80, 0.25),
    (0.20, 0.30, 0.90),
    (0.90, 0.80, 0.15),
    (0.80, 0.20, 0.85),
    (0.15, 0.80, 0.85),
)


def _pairs_str(pairs) -> str:
    return ",".join(f"{a}-{b}" for a, b in pairs)


def _parse_pairs(text: str) -> tuple[tuple[int, int], ...]:
    text = text.strip()
    if not text:
        return ()
    out = []
    for item in text.split(","):
        a, b = item.strip().split("-")
        out.append((int(a), int(b)))
    return tuple(out)


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 126
    noise_vocab: int = 200
    min_len: int = 8
    max_len: int = 24
    image_size: int = 32
    p_text_signal: float = 0.9
    p_image_signal: float = 0.9
    text_ambiguous: tuple[tuple[int, int], ...] = ((0, 1), (2, 3))
    image_ambiguous: tuple[tuple[int, int], ...] = ((1, 2), (4, 5))
    n_colors: int = 2
    signal_tokens: int = 2
    noise_std: float = 0.08
    seed: int = 0

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={_pairs_str(v) if f.name.endswith('_ambiguous') else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SynthSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in kinds:
                raise SpecError(f"line {lineno}: unknown spec key {key!r}")
            try:
                if key.endswith("_ambiguous"):
                    kw[key] = _parse_pairs(val)
                elif key.startswith("p_") or key == "noise_std":
                    kw[key] = float(val)
                else:
                    kw[key] = int(val)
            except ValueError:
                raise SpecError(f"line {lineno}: bad value for {key}: {val!r}") from None
        return cls(**kw)


def _groups(pairs, n: int = N_CLASSES) -> list[int]:
    """Group index per class from the ambiguity pairs (union-find), numbered by smallest member."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        parent[find(a)] = find(b)
    roots: dict[int, int] = {}
    return [roots.setdefault(find(c), len(roots)) for c in range(n)]


def _image_patterns(spec: SynthSpec) -> list[tuple[int, int]]:
    """(quadrant, colour) per image group."""
    n_groups = max(_groups(spec.image_ambiguous)) + 1
    return [(g % 4, (g * spec.n_colors) // n_groups) for g in range(n_groups)]


def validate_spec(spec: SynthSpec) -> None:
    problems = []
    for name in ("p_text_signal", "p_image_signal"):
        if not 0.0 <= getattr(spec, name) <= 1.0:
            problems.append(f"{name} must lie in [0, 1]")
    if spec.n_per_class < 3:
        problems.append(f"n_per_class={spec.n_per_class} is below the split minimum of 3")
    for a, b in (*spec.text_ambiguous, *spec.image_ambiguous):
        if not (0 <= a < N_CLASSES and 0 <= b < N_CLASSES) or a == b:
            problems.append(f"invalid ambiguous pair {a}-{b}")
    if not 1 <= spec.min_len <= spec.max_len:
        problems.append("need 1 <= min_len <= max_len")
    if spec.image_size < 2 or spec.image_size % 2:
        problems.append("image_size must be an even number >= 2")
    if not 1 <= spec.n_colors <= len(PALETTE) or spec.signal_tokens < 1 or spec.noise_vocab < 1:
        problems.append("n_colors, signal_tokens and noise_vocab must be positive (n_colors <= 6)")
    if problems:
        raise SpecError("; ".join(problems))
    tg, ig = _groups(spec.text_ambiguous), _groups(spec.image_ambiguous)
    for a, b in itertools.combinations(range(N_CLASSES), 2):
        if tg[a] == tg[b] and ig[a] == ig[b]:
            raise SpecError(f"classes {a} and {b} are ambiguous in both modalities; spec is unsatisfiable")
    patterns = _image_patterns(spec)
    if len(set(patterns)) != len(patterns):
        raise SpecError("image patterns collide; raise n_colors")


def signal_vocabulary(spec: SynthSpec) -> dict[int, list[str]]:
    """Signal tokens per text group."""
    n_groups = max(_groups(spec.text_ambiguous)) + 1
    return {g: [f"s{g}x{k}" for k in range(spec.signal_tokens)] for g in range(n_groups)}


def _make_text(rng: np.random.Generator, spec: SynthSpec, group: int, signals: dict) -> str:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    words = [f"w{int(i):03d}" for i in rng.integers(0, spec.noise_vocab, size=length)]
    if rng.random() < spec.p_text_signal:
        words[int(rng.integers(length))] = signals[group][int(rng.integers(spec.signal_tokens))]
    return " ".join(words)


def _make_image(rng: np.random.Generator, spec: SynthSpec, pattern: tuple[int, int]) -> np.ndarray:
    n = spec.image_size
    img = 0.5 + rng.normal(0.0, spec.noise_std, size=(n, n, 3))
    if rng.random() < spec.p_image_signal:
        quadrant, colour = pattern
        h = n // 2
        r0, c0 = (quadrant // 2) * h, (quadrant % 2) * h
        img[r0 : r0 + h, c0 : c0 + h] = PALETTE[colour] + rng.normal(0.0, spec.noise_std, size=(h, h, 3))
    return np.clip(img, 0.0, 1.0)


def gen_synthetic(spec: SynthSpec, out_dir: str | Path | None = None, ratios: SplitRatios = SplitRatios()):
    """Generate, split and (optionally) write a planted-signal dataset.

    Returns ``(samples, images)`` where ``images`` maps sample id to its
    quantised (H, W, 3) array.  With ``out_dir`` the manifest, the PPM files
    and a ``SPEC`` file are written there.
    """
    validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    tg, ig = _groups(spec.text_ambiguous), _groups(spec.image_ambiguous)
    signals = signal_vocabulary(spec)
    patterns = _image_patterns(spec)
    samples, images = [], {}
    for c in range(N_CLASSES):
        for i in range(spec.n_per_class):
            sid = f"c{c}n{i:04d}"
            text = _make_text(rng, spec, tg[c], signals)
            # round-trip through 8-bit so in-memory pixels equal decoded files
            images[sid] = np.rint(_make_image(rng, spec, patterns[ig[c]]) * 255.0) / 255.0
            samples.append(Sample(sid, IntentLabel(c), text, f"images/{sid}.ppm"))
    samples = stratified_split(samples, ratios, seed=spec.seed)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for s in samples:
            write_ppm(out / s.image_path, images[s.id])
        save_manifest(out / "manifest.tsv", samples)
        (out / "SPEC").write_text(spec.to_text(), encoding="utf-8")
    return samples, images


# ---------------------------------------------------------------------------
# Bayes oracle

VIEWS = ("text", "image", "both", "early")


def bayes_accuracy(spec: SynthSpec, view: str = "both", classes: Sequence[int] | None = None) -> float:
    """Bayes-optimal accuracy under a uniform class prior, by enumerating the
    finite observation space (which signal, if any, each modality shows).

    ``early`` observes the text signal and only the colour of the image block,
    which is all a mean over patch embeddings retains.  ``classes`` restricts
    the prior to a subset.
    """
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}")
    classes = list(range(N_CLASSES)) if classes is None else list(classes)
    tg, ig = _groups(spec.text_ambiguous), _groups(spec.image_ambiguous)
    patterns = _image_patterns(spec)
    pt, pi = spec.p_text_signal, spec.p_image_signal

    def text_obs(c):
        return [(tg[c], pt), (None, 1 - pt)]

    def image_obs(c):
        seen = patterns[ig[c]][1] if view == "early" else ig[c]
        return [(seen, pi), (None, 1 - pi)]

    joint: dict[tuple, dict[int, float]] = {}
    for c in classes:
        for (ot, qt), (oi, qi) in itertools.product(text_obs(c), image_obs(c)):
            key = (
                ot if view in ("text", "both", "early") else None,
                oi if view in ("image", "both", "early") else None,
            )
            cell = joint.setdefault(key, {})
            cell[c] = cell.get(c, 0.0) + qt * qi / len(classes)
    return sum(max(cell.values()) for cell in joint.values())
