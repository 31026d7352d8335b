"""Dense tensors with recorded-graph reverse-mode gradients.

Training and inference run in single precision. Every op is dtype-generic,
so the same graphs can be rebuilt in double precision for gradient
verification. Softmax-family ops reduce internally in double precision
regardless of the working dtype.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class GradCheckError(RuntimeError):
    """Gradient verification could not be carried out (non-finite values)."""


_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager: ops inside record no graph (inference mode)."""

    def __enter__(self) -> None:
        self._prev = grad_enabled()
        _grad_state.enabled = False

    def __exit__(self, *exc) -> bool:
        _grad_state.enabled = self._prev
        return False


class Tensor:
    """An immutable dense array, optionally a node in a recorded graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar; all graph recording happens in the module functions
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def t(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("grad",)

    def __init__(self, data, dtype=DEFAULT_DTYPE):
        super().__init__(np.array(data, dtype=dtype))
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _lift(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-d operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_nd(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid_nd(x: np.ndarray) -> np.ndarray:
    # exact identity sigma(x) = (1 + tanh(x/2)) / 2: one call, stable at any |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gelu(a: Tensor) -> Tensor:
    """tanh-form Gaussian error linear unit; the derivative matches the
    same approximation exactly."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner
        return (g * dx,)

    return _make(out, (a,), bw)


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def tlog(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (
            (np.broadcast_to(g, a.data.shape) / n).astype(a.data.dtype, copy=False),
        )

    return _make(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), bw)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into a matrix, one per row."""
    data = np.stack([t.data for t in tensors], axis=0)

    def bw(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _make(data, tuple(tensors), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = _norm_axis(axis, a.data.ndim)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(data, (a,), bw)


def embedding_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; backward scatter-adds into the table rows."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(data, (table,), bw)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a generator")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions with stabilized internals
# ---------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; internal math in float64."""
    axis = _norm_axis(axis, a.data.ndim)
    x = a.data.astype(np.float64, copy=False)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y64 = e / e.sum(axis=axis, keepdims=True)
    out = y64.astype(a.data.dtype, copy=False)

    def bw(g):
        g64 = g.astype(np.float64, copy=False)
        dot = (g64 * y64).sum(axis=axis, keepdims=True)
        return ((y64 * (g64 - dot)).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, a.data.ndim)
    x = a.data.astype(np.float64, copy=False)
    shifted = x - x.max(axis=axis, keepdims=True)
    ls64 = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = ls64.astype(a.data.dtype, copy=False)

    def bw(g):
        g64 = g.astype(np.float64, copy=False)
        soft = np.exp(ls64)
        total = g64.sum(axis=axis, keepdims=True)
        return ((g64 - soft * total).astype(a.data.dtype, copy=False),)

    return _make(out, (a,), bw)


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-array log-softmax in float64, for inference-time scoring."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared elementwise differences; zero iff pred == target."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size
    data = np.asarray((diff.astype(np.float64) ** 2).mean(), dtype=pred.data.dtype)

    def bw(g):
        base = (2.0 / n) * diff * g
        return base.astype(pred.data.dtype, copy=False), (-base).astype(
            target.data.dtype, copy=False
        )

    return _make(data, (pred, target), bw)


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """Negative log probability of ``target_index`` under softmax(logits)."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-d logit vector, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= target_index < n:
        raise IndexError(f"target index {target_index} out of range for {n} logits")
    x = logits.data.astype(np.float64, copy=False)
    shifted = x - x.max()
    logz = np.log(np.exp(shifted).sum())
    loss = logz - shifted[target_index]
    p64 = np.exp(shifted - logz)

    def bw(g):
        grad = p64.copy()
        grad[target_index] -= 1.0
        return ((g * grad).astype(logits.data.dtype, copy=False),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


def cross_entropy_rows(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log probability over rows of ``logits``."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_rows expects 2-d logits, got {logits.data.shape}")
    ids = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if ids.shape != (n,):
        raise ShapeError(f"{n} logit rows but {ids.shape} targets")
    if ids.min() < 0 or ids.max() >= v:
        raise IndexError("target index out of range")
    x = logits.data.astype(np.float64, copy=False)
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = logz[:, 0] - shifted[np.arange(n), ids]
    p64 = np.exp(shifted - logz)

    def bw(g):
        grad = p64.copy()
        grad[np.arange(n), ids] -= 1.0
        return ((float(g) * grad / n).astype(logits.data.dtype, copy=False),)

    return _make(np.asarray(losses.mean(), dtype=logits.data.dtype), (logits,), bw)


# ---------------------------------------------------------------------------
# fused layer ops
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        dg = _unbroadcast(g * xhat, gain.data.shape)
        db = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx.astype(x.data.dtype, copy=False), dg, db

    return _make(out.astype(x.data.dtype, copy=False), (x, gain, bias), bw)


def gru_sequence(
    x: Tensor,
    wx: Tensor,
    wh: Tensor,
    bx: Tensor,
    bh: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Run a GRU over the columns of ``x`` (channels x time) and return the
    final hidden state.

    Gate rows in the stacked weights are ordered update, reset, candidate;
    the reset gate scales the recurrent half of the candidate pre-activation.
    Backpropagation through time is fused into a single graph node.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"gru_sequence expects a 2-d signal, got {x.data.shape}")
    c, t_len = x.data.shape
    if t_len < 1:
        raise ShapeError("gru_sequence: empty time axis")
    h_dim = wh.data.shape[1]
    if wx.data.shape != (3 * h_dim, c):
        raise ShapeError(
            f"gru_sequence weight shape {wx.data.shape} does not match signal {x.data.shape}"
        )
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    order = list(order)

    pre = wx.data @ x.data + bx.data[:, None]  # (3H, T)
    h = np.zeros(h_dim, dtype=x.data.dtype)
    h_prev = np.empty((h_dim, t_len), dtype=x.data.dtype)
    zs = np.empty_like(h_prev)
    rs = np.empty_like(h_prev)
    cs = np.empty_like(h_prev)
    ucs = np.empty_like(h_prev)
    for step, t in enumerate(order):
        u = wh.data @ h + bh.data
        z = _sigmoid_nd(pre[:h_dim, t] + u[:h_dim])
        r = _sigmoid_nd(pre[h_dim : 2 * h_dim, t] + u[h_dim : 2 * h_dim])
        uc = u[2 * h_dim :]
        cand = np.tanh(pre[2 * h_dim :, t] + r * uc)
        h_prev[:, step] = h
        zs[:, step] = z
        rs[:, step] = r
        cs[:, step] = cand
        ucs[:, step] = uc
        h = (1.0 - z) * cand + z * h

    def bw(g):
        dh = np.asarray(g, dtype=x.data.dtype)
        d_pre = np.zeros_like(pre)
        d_u = np.zeros((3 * h_dim, t_len), dtype=x.data.dtype)
        for step in range(t_len - 1, -1, -1):
            t = order[step]
            hp = h_prev[:, step]
            z = zs[:, step]
            r = rs[:, step]
            cand = cs[:, step]
            uc = ucs[:, step]
            dz = dh * (hp - cand)
            dc = dh * (1.0 - z)
            dh = dh * z
            da_c = dc * (1.0 - cand * cand)
            dr = da_c * uc
            duc = da_c * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            d_pre[:h_dim, t] = da_z
            d_pre[h_dim : 2 * h_dim, t] = da_r
            d_pre[2 * h_dim :, t] = da_c
            du_step = np.concatenate([da_z, da_r, duc])
            d_u[:, step] = du_step
            dh = dh + wh.data.T @ du_step
        d_wx = d_pre @ x.data.T
        d_bx = d_pre.sum(axis=1)
        d_wh = d_u @ h_prev.T
        d_bh = d_u.sum(axis=1)
        d_x = wx.data.T @ d_pre if x.requires_grad else None
        return d_x, d_wx, d_wh, d_bx, d_bh

    return _make(h, (x, wx, wh, bx, bh), bw)


def gru_pack(
    signals: Sequence[np.ndarray],
    wx: Tensor,
    wh: Tensor,
    bx: Tensor,
    bh: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Packed GRU over many channels x time signals of varying length.

    Computes, for every signal, the same final hidden state as
    :func:`gru_sequence`, but vectorizes the recurrence across signals by
    sorting them longest-first and stepping a shrinking active prefix.
    Returns a (num_signals, hidden) tensor in the original signal order.
    Signals are consumed as plain arrays: gradients flow to the weights only.
    """
    n = len(signals)
    if n == 0:
        raise ShapeError("gru_pack needs at least one signal")
    dtype = wx.data.dtype
    h_dim = wh.data.shape[1]
    lens = np.array([s.shape[1] for s in signals], dtype=np.int64)
    if (lens < 1).any():
        raise ShapeError("gru_pack: empty time axis in at least one signal")
    c = signals[0].shape[0]
    for s in signals:
        if s.ndim != 2 or s.shape[0] != c:
            raise ShapeError(f"gru_pack: inconsistent signal shape {s.shape}")
    if wx.data.shape != (3 * h_dim, c):
        raise ShapeError(
            f"gru_pack weight shape {wx.data.shape} does not match {c}-channel signals"
        )

    order = np.argsort(-lens, kind="stable")
    t_sorted = lens[order]
    tmax = int(t_sorted[0])
    # words with T > t form a prefix of the sorted order
    counts = (t_sorted[:, None] > np.arange(tmax)[None, :]).sum(axis=0)

    cat = np.concatenate(
        [
            (signals[i][:, ::-1] if reverse else signals[i]).astype(dtype, copy=False)
            for i in order
        ],
        axis=1,
    )
    pre_cat = wx.data @ cat + bx.data[:, None]
    offs = np.concatenate([[0], np.cumsum(t_sorted)])
    pre_pad = np.zeros((3 * h_dim, n, tmax), dtype=dtype)
    for k in range(n):
        pre_pad[:, k, : t_sorted[k]] = pre_cat[:, offs[k] : offs[k + 1]]

    h = np.zeros((h_dim, n), dtype=dtype)
    h_prev = np.zeros((h_dim, n, tmax), dtype=dtype)
    zs = np.zeros_like(h_prev)
    rs = np.zeros_like(h_prev)
    cs = np.zeros_like(h_prev)
    ucs = np.zeros_like(h_prev)
    finals = np.zeros((h_dim, n), dtype=dtype)
    for t in range(tmax):
        a = int(counts[t])
        hb = h[:, :a]
        u = wh.data @ hb + bh.data[:, None]
        gates = _sigmoid_nd(pre_pad[: 2 * h_dim, :a, t] + u[: 2 * h_dim])
        z = gates[:h_dim]
        r = gates[h_dim:]
        uc = u[2 * h_dim :]
        cand = np.tanh(pre_pad[2 * h_dim :, :a, t] + r * uc)
        h_prev[:, :a, t] = hb
        zs[:, :a, t] = z
        rs[:, :a, t] = r
        cs[:, :a, t] = cand
        ucs[:, :a, t] = uc
        h_new = (1.0 - z) * cand + z * hb
        h[:, :a] = h_new
        next_a = int(counts[t + 1]) if t + 1 < tmax else 0
        if next_a < a:
            finals[:, next_a:a] = h_new[:, next_a:a]

    out_sorted = finals.T
    out = np.empty_like(out_sorted)
    out[order] = out_sorted

    def bw(g):
        g_sorted = np.asarray(g, dtype=dtype)[order]
        dh = np.zeros((h_dim, n), dtype=dtype)
        d_pre = np.zeros_like(pre_pad)
        d_u = np.zeros_like(pre_pad)
        for t in range(tmax - 1, -1, -1):
            a = int(counts[t])
            next_a = int(counts[t + 1]) if t + 1 < tmax else 0
            if next_a < a:
                dh[:, next_a:a] += g_sorted[next_a:a].T
            dhb = dh[:, :a]
            hp = h_prev[:, :a, t]
            z = zs[:, :a, t]
            r = rs[:, :a, t]
            cand = cs[:, :a, t]
            uc = ucs[:, :a, t]
            dz = dhb * (hp - cand)
            dc = dhb * (1.0 - z)
            dhb = dhb * z
            da_c = dc * (1.0 - cand * cand)
            dr = da_c * uc
            duc = da_c * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            d_pre[:h_dim, :a, t] = da_z
            d_pre[h_dim : 2 * h_dim, :a, t] = da_r
            d_pre[2 * h_dim :, :a, t] = da_c
            du_step = np.concatenate([da_z, da_r, duc], axis=0)
            d_u[:, :a, t] = du_step
            dh[:, :a] = dhb + wh.data.T @ du_step
        d_pre_cat = np.empty_like(pre_cat)
        for k in range(n):
            d_pre_cat[:, offs[k] : offs[k + 1]] = d_pre[:, k, : t_sorted[k]]
        d_wx = d_pre_cat @ cat.T
        d_bx = d_pre_cat.sum(axis=1)
        d_wh = d_u.reshape(3 * h_dim, -1) @ h_prev.reshape(h_dim, -1).T
        d_bh = d_u.sum(axis=(1, 2))
        return d_wx, d_wh, d_bx, d_bh

    return _make(out, (wx, wh, bx, bh), bw)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate grads of every Parameter reachable from a scalar loss.

    Gradients sum into ``Parameter.grad`` both across multiple uses within
    one graph and across repeated backward calls.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
