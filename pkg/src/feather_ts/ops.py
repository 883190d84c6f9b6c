"""Numeric kernels with hand-derived adjoints.

Every array is time-major: shape ``(..., T, C)`` with any number of leading
batch axes. Each forward kernel ``f`` has a companion ``f_vjp`` that takes the
forward inputs plus the output cotangent and returns the input (and
parameter) cotangents. Nothing here keeps hidden state.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError, ShapeError

EPS = 1e-5


@dataclass(frozen=True)
class NormStats:
    """Per-window, per-channel statistics from :func:`instance_normalize`.

    ``mean`` and ``std`` have shape ``(..., 1, C)`` so they broadcast against
    the window they came from. ``std`` is already clamped to ``eps``.
    """

    mean: np.ndarray
    std: np.ndarray

    @property
    def channels(self):
        return self.mean.shape[-1]


def _check_time_major(x, name="x", min_length=1):
    if x.ndim < 2:
        raise ShapeError(f"{name} must be at least 2-D (time, channels), got shape {x.shape}")
    if x.shape[-2] < min_length:
        raise ShapeError(f"{name} needs length >= {min_length}, got {x.shape[-2]}")


# ---------------------------------------------------------------------------
# instance normalization


def instance_normalize(x, eps=EPS):
    """Z-score each channel of each window over its time axis.

    Uses the population standard deviation, clamped below at ``eps``.

    Returns:
        ``(x_norm, stats)``.

    Raises:
        DataError: if ``x`` contains NaN or Inf.
    """
    x = np.asarray(x, dtype=float)
    _check_time_major(x, min_length=2)
    if not np.all(np.isfinite(x)):
        raise DataError("instance_normalize received non-finite input")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.sqrt(((x - mean) ** 2).mean(axis=-2, keepdims=True))
    std = np.maximum(std, eps)
    return (x - mean) / std, NormStats(mean, std)


def instance_normalize_vjp(x, stats, d_xn, d_mean=None, d_std=None, eps=EPS):
    """Cotangent of ``x`` given cotangents of the normalized output and stats."""
    x = np.asarray(x, dtype=float)
    length = x.shape[-2]
    centered = x - stats.mean
    xn = centered / stats.std
    live = stats.std > eps  # clamped channels have a constant denominator
    dx = (d_xn - d_xn.mean(axis=-2, keepdims=True)) / stats.std
    dx = dx - np.where(live, xn * (d_xn * xn).mean(axis=-2, keepdims=True) / stats.std, 0.0)
    if d_mean is not None:
        dx = dx + d_mean / length
    if d_std is not None:
        dx = dx + np.where(live, d_std * centered / (length * stats.std), 0.0)
    return dx


def instance_denormalize(y, stats):
    """Inverse of :func:`instance_normalize` using stored statistics."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != stats.channels:
        raise ShapeError(f"y has {y.shape[-1]} channels but stats describe {stats.channels}")
    return y * stats.std + stats.mean


def instance_denormalize_vjp(y, stats, d_out):
    """Returns ``(d_y, d_mean, d_std)``; stat cotangents keep the ``(..., 1, C)`` shape."""
    d_y = d_out * stats.std
    d_mean = d_out.sum(axis=-2, keepdims=True)
    d_std = (d_out * y).sum(axis=-2, keepdims=True)
    return d_y, d_mean, d_std


# ---------------------------------------------------------------------------
# causal depthwise convolution


def _taps_for(x, taps):
    taps = np.asarray(taps, dtype=float)
    if taps.ndim != 2:
        raise ShapeError(f"taps must be (channels, k), got shape {taps.shape}")
    if taps.shape[1] < 1:
        raise ShapeError("kernel width must be >= 1")
    if taps.shape[0] not in (1, x.shape[-1]):
        raise ShapeError(f"taps have {taps.shape[0]} rows for {x.shape[-1]} channels")
    return taps


def causal_pad(x, k):
    """Prepend ``k - 1`` zero steps along the time axis."""
    pad = [(0, 0)] * x.ndim
    pad[-2] = (k - 1, 0)
    return np.pad(x, pad)


def depthwise_conv_causal(x, taps):
    """Per-channel causal convolution that preserves length.

    ``out[t, c] = sum_j taps[c, j] * xp[t + j, c]`` where ``xp`` is ``x`` with
    ``k - 1`` zeros prepended, so ``taps[c, k - 1]`` weighs the current sample.
    A single tap row (``taps.shape[0] == 1``) is shared by all channels.
    """
    x = np.asarray(x, dtype=float)
    _check_time_major(x)
    taps = _taps_for(x, taps)
    k = taps.shape[1]
    length = x.shape[-2]
    xp = causal_pad(x, k)
    out = taps[:, 0] * xp[..., 0:length, :]
    for j in range(1, k):
        out = out + taps[:, j] * xp[..., j:j + length, :]
    return out


def depthwise_conv_causal_vjp(x, taps, d_out):
    """Returns ``(d_x, d_taps)``; ``d_taps`` matches the shape of ``taps``."""
    x = np.asarray(x, dtype=float)
    taps = _taps_for(x, taps)
    k = taps.shape[1]
    length = x.shape[-2]
    xp = causal_pad(x, k)
    d_xp = np.zeros_like(xp)
    d_taps = np.empty((x.shape[-1], k))
    batch_axes = tuple(range(x.ndim - 1))
    for j in range(k):
        d_xp[..., j:j + length, :] += taps[:, j] * d_out
        d_taps[:, j] = (xp[..., j:j + length, :] * d_out).sum(axis=batch_axes)
    if taps.shape[0] == 1:
        d_taps = d_taps.sum(axis=0, keepdims=True)
    return d_xp[..., k - 1:, :], d_taps


# ---------------------------------------------------------------------------
# pooling and interpolation (fixed linear maps along time)


@lru_cache(maxsize=64)
def pool_matrix(length, stride):
    """``(ceil(length/stride), length)`` averaging matrix; the tail window may be short."""
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    n_out = -(-length // stride)
    m = np.zeros((n_out, length))
    for i in range(n_out):
        lo, hi = i * stride, min((i + 1) * stride, length)
        m[i, lo:hi] = 1.0 / (hi - lo)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def upsample_matrix(source_length, target_length):
    """``(target_length, source_length)`` linear interpolation with aligned endpoints."""
    if source_length < 1 or target_length < 1:
        raise ShapeError("lengths must be positive")
    m = np.zeros((target_length, source_length))
    if source_length == 1:
        m[:, 0] = 1.0
    elif target_length == 1:
        m[0, 0] = 1.0
    else:
        pos = np.arange(target_length) * (source_length - 1) / (target_length - 1)
        lo = np.minimum(np.floor(pos).astype(int), source_length - 2)
        frac = pos - lo
        rows = np.arange(target_length)
        m[rows, lo] = 1.0 - frac
        m[rows, lo + 1] += frac
    m.setflags(write=False)
    return m


def avg_pool_downsample(x, stride):
    """Mean over consecutive blocks of ``stride`` steps; output length ``ceil(T/stride)``."""
    x = np.asarray(x, dtype=float)
    _check_time_major(x)
    return pool_matrix(x.shape[-2], stride) @ x


def avg_pool_downsample_vjp(x_shape, stride, d_out):
    return pool_matrix(x_shape[-2], stride).T @ d_out


def linear_upsample(x, target_length):
    """Linear interpolation of each channel onto ``target_length`` points."""
    x = np.asarray(x, dtype=float)
    _check_time_major(x)
    return upsample_matrix(x.shape[-2], target_length) @ x


def linear_upsample_vjp(x_shape, target_length, d_out):
    return upsample_matrix(x_shape[-2], target_length).T @ d_out


# ---------------------------------------------------------------------------
# spectrum


def rfft_magnitude(x):
    """One-sided, unnormalized DFT magnitude along time: ``floor(T/2) + 1`` bins."""
    x = np.asarray(x, dtype=float)
    _check_time_major(x, min_length=2)
    return np.abs(np.fft.rfft(x, axis=-2))


def rfft_magnitude_vjp(x, d_mag):
    """Cotangent of ``x``; bins with zero magnitude contribute nothing."""
    x = np.asarray(x, dtype=float)
    length = x.shape[-2]
    spec = np.fft.rfft(x, axis=-2)
    mag = np.abs(spec)
    unit = np.divide(spec, mag, out=np.zeros_like(spec), where=mag > 0)
    coeffs = d_mag * unit
    # sum_m c_m exp(+2 pi i m t / L), m over the one-sided bins only
    full_shape = list(coeffs.shape)
    full_shape[-2] = length
    full = np.zeros(full_shape, dtype=complex)
    full[..., :coeffs.shape[-2], :] = coeffs
    return (np.fft.ifft(full, axis=-2) * length).real


# ---------------------------------------------------------------------------
# softmax and linear maps


def softmax(v, axis=-1):
    """Numerically safe softmax (max-subtracted)."""
    v = np.asarray(v, dtype=float)
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_vjp(p, d_p, axis=-1):
    """Cotangent of the logits given the softmax output ``p``."""
    return p * (d_p - (p * d_p).sum(axis=axis, keepdims=True))


def linear_map(x, w):
    """``x[..., t, :] @ w`` for every time step; no bias."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"cannot map {x.shape[-1]} channels through a {w.shape} matrix")
    return x @ w


def linear_map_vjp(x, w, d_out):
    """Returns ``(d_x, d_w)``."""
    d_x = d_out @ w.T
    x2 = np.reshape(x, (-1, x.shape[-1]))
    d_w = x2.T @ np.reshape(d_out, (-1, d_out.shape[-1]))
    return d_x, d_w
