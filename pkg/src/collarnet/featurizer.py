"""Whole-segment inference: normalization, feature calculation and the MLP head.

Every reduction here runs strictly left to right (``np.cumsum`` or explicit
loops) and every FIR output accumulates taps in order k = 0..K-1, starting
from ``h[0] * newest``.  The streaming engine follows the same order, which is
what makes the two paths agree bit for bit.  ``tanh`` is evaluated with
``math.tanh`` on each element for the same reason.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset, DegenerateDataError, DimensionError, DomainError, ModelParams, NormStats,
    Segment, Variant,
)


@dataclass
class ForwardCache:
    abar: np.ndarray        # normalized readings, (3, N)
    atil: np.ndarray        # IIR outputs, (3, N)
    u: np.ndarray | None    # first FIR outputs, (3, N-K1+1)
    v: np.ndarray | None    # tanh(u)
    w: np.ndarray | None    # second FIR (or the single linear FIR) outputs
    f: np.ndarray           # feature vector, (9,)
    hidden_pre: np.ndarray  # (L,)
    logits: np.ndarray      # (C,)


def fit_norm_stats(dataset: Dataset) -> NormStats:
    """Per-axis mean and inverse population standard deviation over all samples."""
    readings = dataset.readings if isinstance(dataset, Dataset) else np.asarray(dataset)
    if readings.size == 0:
        raise DegenerateDataError("cannot fit normalization on an empty dataset")
    per_axis = np.moveaxis(readings, 1, 0).reshape(3, -1).astype(np.float64)
    m = per_axis.mean(axis=1)
    std = per_axis.std(axis=1)
    if np.any(std == 0) or not np.all(np.isfinite(std)):
        bad = [ax for ax, v in zip("xyz", std) if not v > 0]
        raise DegenerateDataError(f"zero variance on axis {', '.join(bad)}")
    return NormStats(m, 1.0 / std)


def _readings(segment) -> np.ndarray:
    return segment.readings if isinstance(segment, Segment) else np.asarray(segment)


def normalize(segment, norm: NormStats, dtype=np.float64) -> np.ndarray:
    a = _readings(segment).astype(dtype)
    m = np.asarray(norm.m, dtype=dtype)
    s = np.asarray(norm.s, dtype=dtype)
    return s[..., :, None] * (a - m[..., :, None])


def _seq_sum(x: np.ndarray) -> np.ndarray:
    """Left-to-right sum along the last axis."""
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1], dtype=x.dtype)
    return np.cumsum(x, axis=-1)[..., -1]


def mean_feature(abar: np.ndarray) -> np.ndarray:
    abar = np.asarray(abar)
    return _seq_sum(abar) / abar.dtype.type(abar.shape[-1])


def mean_abs(x: np.ndarray, divisor: int | None = None) -> np.ndarray:
    """Sum of |x| along the last axis divided by ``divisor`` (default: its length).

    The feature calculation passes the segment length N as divisor for both
    the IIR and the FIR outputs.
    """
    x = np.asarray(x)
    n = x.shape[-1] if divisor is None else divisor
    if n < 1:
        raise DomainError("divisor must be >= 1")
    return _seq_sum(np.abs(x)) / x.dtype.type(n)


def iir_highpass(x: np.ndarray, gamma) -> np.ndarray:
    """First-order high-pass y[n] = gamma*y[n-1] + (x[n] - x[n-1]), zero initial state.

    Works on a single signal (N,) with scalar gamma or on stacked axes (3, N)
    with one gamma per row.
    """
    x = np.asarray(x)
    gamma = np.asarray(gamma, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    if np.any(gamma < 0) or np.any(gamma >= 1) or not np.all(np.isfinite(gamma)):
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if x.dtype.kind != "f":
        x = x.astype(gamma.dtype)
    y = np.empty_like(x)
    y_prev = np.zeros(x.shape[:-1], dtype=x.dtype)
    x_prev = np.zeros(x.shape[:-1], dtype=x.dtype)
    for n in range(x.shape[-1]):
        xn = x[..., n]
        y_prev = gamma * y_prev + (xn - x_prev)
        y[..., n] = y_prev
        x_prev = xn
    return y


def fir_valid_conv(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Valid true convolution: y[n] = sum_k h[k] * x[n + K - 1 - k], n = 0..M-K.

    ``h`` may be (K,) or one kernel per row of ``x``, e.g. (3, K) against (3, M).
    """
    x = np.asarray(x)
    h = np.asarray(h, dtype=x.dtype)
    K, M = h.shape[-1], x.shape[-1]
    if M < K:
        raise DimensionError(f"signal length {M} shorter than kernel length {K}")
    out_len = M - K + 1
    hk = h[..., None]
    acc = hk[..., 0, :] * x[..., K - 1:K - 1 + out_len]
    for k in range(1, K):
        s = K - 1 - k
        acc = acc + hk[..., k, :] * x[..., s:s + out_len]
    return acc


def _tanh(x: np.ndarray) -> np.ndarray:
    flat = [math.tanh(float(t)) for t in x.ravel()]
    return np.array(flat, dtype=x.dtype).reshape(x.shape)


def _relu(x):
    return np.maximum(x, x.dtype.type(0))


def mlp_logits(f: np.ndarray, params: ModelParams, dtype=None) -> tuple[np.ndarray, np.ndarray]:
    """Return (hidden pre-activation, logits) of the one-hidden-layer ReLU MLP."""
    f = np.asarray(f)
    dtype = dtype or (f.dtype if f.dtype.kind == "f" else np.float64)
    W1, b1 = params.W1.astype(dtype), params.b1.astype(dtype)
    W2, b2 = params.W2.astype(dtype), params.b2.astype(dtype)
    pre = W1 @ f.astype(dtype) + b1
    return pre, W2 @ _relu(pre) + b2


def argmax_lowest(logits: np.ndarray) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    return int(np.argmax(logits))


def features(segment, params: ModelParams, dtype=np.float64) -> tuple[np.ndarray, ForwardCache]:
    """Compute the 9 features [f1x f1y f1z f2x f2y f2z f3x f3y f3z] of one segment."""
    a = _readings(segment)
    d = params.dims
    if a.shape != (3, d.N):
        raise DimensionError(f"segment shape {a.shape} does not match dims N={d.N}")
    dt = np.dtype(dtype).type
    N = dt(d.N)
    abar = normalize(a, params.norm, dtype)
    f1 = _seq_sum(abar) / N
    gamma = params.gamma.astype(dtype)
    atil = iir_highpass(abar, gamma)
    f2 = _seq_sum(np.abs(atil)) / N
    u = v = w = None
    if params.variant == Variant.NONLINEAR:
        u = fir_valid_conv(atil, params.h1.astype(dtype))
        v = _tanh(u)
        w = fir_valid_conv(v, params.h2.astype(dtype))
        f3 = _seq_sum(np.abs(w)) / N
    elif params.variant == Variant.LINEAR:
        w = fir_valid_conv(atil, params.h_lin.astype(dtype))
        f3 = _seq_sum(np.abs(w)) / N
    else:
        f3 = np.zeros(3, dtype=dtype)
    f = np.concatenate([f1, f2, f3])
    pre, logits = mlp_logits(f, params, dtype)
    return f, ForwardCache(abar, atil, u, v, w, f, pre, logits)


def infer(segment, params: ModelParams, dtype=np.float64) -> int:
    _, cache = features(segment, params, dtype)
    return argmax_lowest(cache.logits)
