"""Trainable building blocks shared by the brain encoder and the seq2seq model.

Weight matrices are initialized fan-in-scaled uniform from an explicit
generator; biases start at zero. Constructors draw from the generator in a
fixed order, so a single seeded generator threaded through a model makes the
whole parameter set reproducible.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal parameter container.

    Attributes that are Parameters, Modules, or lists/dicts of them are
    discovered in insertion order, which keeps checkpoint naming stable.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            self._collect(key, value, out)
        return out

    @staticmethod
    def _collect(key: str, value, out: dict[str, Parameter]) -> None:
        if isinstance(value, Parameter):
            out[key] = value
        elif isinstance(value, Module):
            out.update(value.named_parameters(prefix=f"{key}."))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                Module._collect(f"{key}.{i}", item, out)
        elif isinstance(value, dict):
            for sub, item in value.items():
                Module._collect(f"{key}.{sub}", item, out)

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def load_state(self, params: dict[str, np.ndarray]) -> None:
        """Copy named arrays into this module's parameters; names must match."""
        own = self.named_parameters()
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, p in own.items():
            arr = np.asarray(params[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
                )
            p.data = arr.copy()


class Linear(Module):
    """Affine map stored input-major: y = x @ w + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.w = Parameter(fan_in_uniform(rng, (n_in, n_out), n_in, dtype), dtype=dtype)
        self.b = Parameter(np.zeros(n_out, dtype=dtype), dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gain = Parameter(np.ones(dim, dtype=dtype), dtype=dtype)
        self.bias = Parameter(np.zeros(dim, dtype=dtype), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Dropout(Module):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        return T.dropout(x, self.p, rng, training)


class GRUDirection(Module):
    """One direction of a GRU; stacked gate weights, order update/reset/candidate."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.hidden = hidden
        self.wx = Parameter(fan_in_uniform(rng, (3 * hidden, n_in), n_in, dtype), dtype=dtype)
        self.wh = Parameter(fan_in_uniform(rng, (3 * hidden, hidden), hidden, dtype), dtype=dtype)
        self.bx = Parameter(np.zeros(3 * hidden, dtype=dtype), dtype=dtype)
        self.bh = Parameter(np.zeros(3 * hidden, dtype=dtype), dtype=dtype)

    def final_state(self, signal: Tensor, reverse: bool = False) -> Tensor:
        return T.gru_sequence(signal, self.wx, self.wh, self.bx, self.bh, reverse=reverse)


class BiGRU(Module):
    """Forward and backward GRU passes over a channels x time signal,
    concatenated final states."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fwd = GRUDirection(n_in, hidden, rng, dtype=dtype)
        self.bwd = GRUDirection(n_in, hidden, rng, dtype=dtype)

    def encode(self, signal: Tensor) -> Tensor:
        ahead = self.fwd.final_state(signal, reverse=False)
        behind = self.bwd.final_state(signal, reverse=True)
        return T.concat([ahead, behind], axis=0)

    def encode_many(self, signals: list[np.ndarray]) -> Tensor:
        """Packed equivalent of ``encode`` per signal, one row each."""
        ahead = T.gru_pack(signals, self.fwd.wx, self.fwd.wh, self.fwd.bx,
                           self.fwd.bh, reverse=False)
        behind = T.gru_pack(signals, self.bwd.wx, self.bwd.wh, self.bwd.bx,
                            self.bwd.bh, reverse=True)
        return T.concat([ahead, behind], axis=1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head slicing.

    ``mask`` is an additive float array broadcastable to (queries, keys);
    use large negative values to block positions.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        # a key bias shifts every score in a row equally and cancels in the
        # softmax, so it is omitted
        self.wk = Linear(d_model, d_model, rng, bias=False, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng, dtype=dtype)

    def __call__(self, queries: Tensor, keys_values: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q = self.wq(queries)
        k = self.wk(keys_values)
        v = self.wv(keys_values)
        scale = 1.0 / math.sqrt(self.d_head)
        per_head = []
        for h in range(self.heads):
            lo = h * self.d_head
            qh = T.narrow(q, 1, lo, self.d_head)
            kh = T.narrow(k, 1, lo, self.d_head)
            vh = T.narrow(v, 1, lo, self.d_head)
            scores = T.matmul(qh, kh.t()) * scale
            if mask is not None:
                scores = scores + Tensor(mask.astype(scores.dtype))
            weights = T.softmax(scores, axis=-1)
            per_head.append(T.matmul(weights, vh))
        return self.wo(T.concat(per_head, axis=1))


def causal_mask(n: int, dtype=np.float32) -> np.ndarray:
    """Additive mask blocking attention to later positions."""
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -1e9
    return mask


class FeedForward(Module):
    def __init__(self, d_model: int, mult: int, rng: np.random.Generator, dtype=np.float32):
        self.lin1 = Linear(d_model, mult * d_model, rng, dtype=dtype)
        self.lin2 = Linear(mult * d_model, d_model, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.gelu(self.lin1(x)))


class EncoderLayer(Module):
    """Post-norm: self-attention, add & norm, feed-forward, add & norm."""

    def __init__(self, d_model: int, heads: int, ffn_mult: int, dropout_p: float,
                 rng: np.random.Generator, dtype=np.float32):
        self.attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, ffn_mult, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.drop = Dropout(dropout_p)

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        x = self.norm1(x + self.drop(self.attn(x, x), training, rng))
        x = self.norm2(x + self.drop(self.ffn(x), training, rng))
        return x


class DecoderLayer(Module):
    """Post-norm: masked self-attention, cross-attention over the encoded
    source, then feed-forward, each with add & norm."""

    def __init__(self, d_model: int, heads: int, ffn_mult: int, dropout_p: float,
                 rng: np.random.Generator, dtype=np.float32):
        self.self_attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, ffn_mult, rng, dtype=dtype)
        self.norm3 = LayerNorm(d_model, dtype=dtype)
        self.drop = Dropout(dropout_p)

    def __call__(self, x: Tensor, memory: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        n = x.data.shape[0]
        x = self.norm1(x + self.drop(self.self_attn(x, x, causal_mask(n)), training, rng))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory), training, rng))
        x = self.norm3(x + self.drop(self.ffn(x), training, rng))
        return x


class ResidualMLP(Module):
    """Two affine maps with a nonlinearity between, plus a shortcut.

    The shortcut is the identity when input and output widths match,
    otherwise a dedicated bias-free projection.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.lin1 = Linear(d_in, d_in, rng, dtype=dtype)
        self.lin2 = Linear(d_in, d_out, rng, dtype=dtype)
        self.shortcut = None if d_in == d_out else Linear(d_in, d_out, rng, bias=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        inner = self.lin2(T.gelu(self.lin1(x)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return inner + skip
