"""Text normalisation, whitespace vocabulary and the transformer text encoder."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .nn import EncoderBlock, Module, normal_param
from .tensor import Tensor

PAD, CLS, UNK = 0, 1, 2
RESERVED = ("[PAD]", "[CLS]", "[UNK]")


def normalize_text(raw: str) -> str:
    """NFC-compose, drop punctuation, collapse whitespace.  Case is kept."""
    composed = unicodedata.normalize("NFC", raw)
    kept = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in composed)
    return " ".join(kept.split())


@dataclass(frozen=True)
class Vocabulary:
    """Ids 0..2 are PAD/CLS/UNK; ``tokens[i]`` has id ``i + 3``."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", {tok: i + len(RESERVED) for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + len(RESERVED)

    @property
    def size(self) -> int:
        return len(self)

    def token_id(self, token: str) -> int:
        if token in RESERVED:
            return RESERVED.index(token)
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]

    def ids_for(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_id(t) for t in tokens]

    def tokens_for(self, ids: Iterable[int]) -> list[str]:
        return [self.token(int(i)) for i in ids]

    def encode(
        self,
        text: str,
        max_len: int,
        sample_id: str | None = None,
        log: list[str] | None = None,
    ) -> list[int]:
        """CLS-prefixed ids, truncated to ``max_len``; truncation is logged."""
        ids = [CLS] + self.ids_for(text.split())
        if len(ids) > max_len:
            if log is not None:
                log.append(f"TRUNCATED {sample_id if sample_id is not None else '-'} {len(ids)}")
            ids = ids[:max_len]
        return ids

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{t}\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary; ties broken lexicographically."""
    if max_size < 4:
        raise ValueError(f"max_size must be >= 4, got {max_size}")
    counts = Counter(tok for line in corpus for tok in line.split() if tok not in RESERVED)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(tuple(ranked[: max_size - len(RESERVED)]))


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 64
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"text d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            raise ValueError(f"text max_len must be >= 2, got {self.max_len}")
        if self.vocab_size < len(RESERVED) or self.n_layers < 0:
            raise ValueError("invalid text encoder config")


class TextFeatures(NamedTuple):
    shallow: Tensor  # masked mean of pre-encoder embeddings
    cls: Tensor  # final hidden state at position 0


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    """Right-pad every sequence to ``max_len``.

    A fixed width keeps each sample's arithmetic identical regardless of the
    batch it lands in, which is what makes padding invariance exact.
    """
    out = np.full((len(seqs), max_len), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s) > max_len:
            raise ValueError(f"sequence of length {len(s)} exceeds max_len={max_len}")
        out[i, : len(s)] = s
    return out


class TextEncoder(Module):
    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.token_emb = normal_param(rng, (cfg.vocab_size, cfg.d_model))
        self.pos_emb = normal_param(rng, (cfg.max_len, cfg.d_model))
        self.blocks = [EncoderBlock(cfg.d_model, cfg.n_heads, rng, cfg.dropout_p) for _ in range(cfg.n_layers)]

    def embed(self, ids: np.ndarray) -> Tensor:
        L = ids.shape[1]
        return T.embedding(ids, self.token_emb) + self.pos_emb[:L]

    def __call__(self, ids: np.ndarray, training: bool = False, rng=None, deep: bool = True) -> TextFeatures:
        """Encode a (B, L) batch of padded ids.  ``deep=False`` skips the encoder
        stack and returns ``cls=None`` (early fusion only needs ``shallow``)."""
        ids = np.asarray(ids, dtype=np.int64)
        mask = ids != PAD
        x = self.embed(ids)
        shallow = T.masked_mean(x, mask, axis=1)
        if not deep:
            return TextFeatures(shallow, None)
        for block in self.blocks:
            x = block(x, mask, training, rng)
        return TextFeatures(shallow, x[:, 0])


def encode_text(encoder: TextEncoder, ids: Sequence[int]) -> TextFeatures:
    """Inference encoding of one CLS-prefixed sequence; returns 1-D features.

    Trailing PAD ids are ignored and the sequence is truncated to ``max_len``.
    """
    ids = list(ids)
    while ids and ids[-1] == PAD:
        ids.pop()
    if not ids or ids[0] != CLS:
        raise ValueError("sequence must start with the CLS id")
    ids = ids[: encoder.cfg.max_len]
    with T.no_grad():
        feats = encoder(pad_batch([ids], encoder.cfg.max_len))
    return TextFeatures(feats.shallow[0], feats.cls[0])
