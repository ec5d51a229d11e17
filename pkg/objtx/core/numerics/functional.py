import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from objtx.core.models.models import Mode
from objtx.core.numerics.tensor import Tensor, _unbroadcast
from objtx.utils.errors import ConfigError, DimensionError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Added to attention logits of masked keys; exp() of it underflows to exactly 0.
MASKED_LOGIT = -1e9


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """c[..., i, j] = sum_l a[..., i, l] * b[..., l, j] for rank-2 or batched rank-3 operands."""
    if a.ndim not in (2, 3) or b.ndim not in (2, 3):
        raise DimensionError(f"matmul needs rank-2 or rank-3 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(b_data, -1, -2)
        gb = np.swapaxes(a_data, -1, -2) @ g
        return _unbroadcast(ga, a_data.shape), _unbroadcast(gb, b_data.shape)

    return Tensor._result(a_data @ b_data, (a, b), vjp, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(data, tuple(tensors), vjp, "concat")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally-shaped tensors along a new leading axis."""

    def vjp(g):
        return tuple(g[i] for i in range(g.shape[0]))

    data = np.stack([t.data for t in tensors], axis=0)
    return Tensor._result(data, tuple(tensors), vjp, "stack")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (x,), vjp, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), vjp, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit (population) variance, then scale and shift."""
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got {d}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match {d}")
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    g_data = gamma.data
    reduce_axes = tuple(range(a.ndim - 1))

    def vjp(g):
        g_hat = g * g_data
        gx = inv_std * (
            g_hat - g_hat.mean(axis=-1, keepdims=True) - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * x_hat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._result(x_hat * g_data + beta.data, (x, gamma, beta), vjp, "layer_norm")


def gelu(x: Union[Tensor, np.ndarray, float]) -> Union[Tensor, np.ndarray, float]:
    """Exact GELU, x * Phi(x). Plain numbers and arrays are evaluated without a graph."""
    if not isinstance(x, Tensor):
        a = np.asarray(x, dtype=np.float64)
        out = a * 0.5 * (1.0 + erf(a / _SQRT2))
        return float(out) if out.ndim == 0 else out
    a = x.data
    cdf = 0.5 * (1.0 + erf(a / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)

    def vjp(g):
        return (g * (cdf + a * pdf),)

    return Tensor._result((a * cdf).astype(a.dtype), (x,), vjp, "gelu")


def softplus(x: Tensor) -> Tensor:
    a = x.data
    out = np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a))

    def vjp(g):
        return (g * sig,)

    return Tensor._result(out, (x,), vjp, "softplus")


def dropout(x: Tensor, rate: float = 0.1, mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: train mode zeroes elements with probability `rate` and rescales survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if Mode(mode) is Mode.EVAL or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) * (1.0 / (1.0 - rate))
    return x * Tensor(keep, dtype=x.dtype)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else out + b
