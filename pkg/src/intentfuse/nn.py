"""Parameter containers and transformer building blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

INIT_STD = 0.02


class Module:
    """Walks attributes in definition order to find parameters and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def normal_param(rng: np.random.Generator, shape, decay: bool = True) -> Parameter:
    return Parameter(rng.normal(0.0, INIT_STD, size=shape), decay=decay)


def zeros_param(shape) -> Parameter:
    return Parameter(np.zeros(shape), decay=False)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = normal_param(rng, (d_out, d_in))
        self.bias = zeros_param(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d), decay=False)
        self.bias = zeros_param(d)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.proj = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        B, L, D = x.shape
        H, dh = self.n_heads, D // self.n_heads
        qkv = self.qkv(x).reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        if key_mask is not None:
            scores = T.masked_fill(scores, key_mask[:, None, None, :].astype(bool), -1e9)
        attn = T.softmax(scores)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
        return self.proj(ctx)


class EncoderBlock(Module):
    """Post-LN transformer block (BERT layout) with residual dropout."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dropout_p: float = 0.1):
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln1 = LayerNorm(d_model)
        self.fc1 = Linear(d_model, 4 * d_model, rng)
        self.fc2 = Linear(4 * d_model, d_model, rng)
        self.ln2 = LayerNorm(d_model)
        self.dropout_p = dropout_p

    def __call__(self, x: Tensor, key_mask=None, training: bool = False, rng=None) -> Tensor:
        a = T.dropout(self.attn(x, key_mask), self.dropout_p, training, rng)
        x = self.ln1(x + a)
        h = T.dropout(self.fc2(T.gelu(self.fc1(x))), self.dropout_p, training, rng)
        return self.ln2(x + h)


def block_param_count(d: int) -> int:
    attn = 3 * d * d + 3 * d + d * d + d
    mlp = d * 4 * d + 4 * d + 4 * d * d + d
    return attn + mlp + 4 * d
