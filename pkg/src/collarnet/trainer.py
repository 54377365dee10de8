"""Loss, hand-written reverse-mode gradients, Adam and the training loop.

The batched forward pass flattens each axis of a (3, B, N) batch into one long
signal so that every FIR filter, and its adjoint, is a single ``np.convolve``
or ``np.correlate`` call.  FIR outputs that straddle a segment boundary are
computed but masked out of the features and the backward pass.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from .core import (
    ConfigurationError, Dataset, Dims, DomainError, ModelParams, NormStats, NumericError,
    Variant, init_model, logistic,
)
from .featurizer import fit_norm_stats, normalize

log = logging.getLogger(__name__)

Gradients = dict  # name -> array, same keys/shapes as ModelParams.trainable()

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class Hyper:
    learning_rate: float = 2e-4
    weight_decay: float = 2e-3
    batch_size: int = 1024
    iterations: int = 60_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise ConfigurationError("learning rate and eps must be positive, decay >= 0")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigurationError("batch_size must be >= 1 and iterations >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.precision not in DTYPES:
            raise ConfigurationError(f"precision must be one of {sorted(DTYPES)}")

    @property
    def dtype(self):
        return DTYPES[self.precision]


# Tuned values per setting: (hyperparameters, model dims).
PROFILES = {
    "5class": (Hyper(2e-4, 2e-3, 1024, 60_000), dict(K1=8, K2=8, L=6, C=5)),
    "6class": (Hyper(5e-4, 4e-3, 1024, 40_000), dict(K1=8, K2=8, L=7, C=6)),
}


def profile(name: str, N: int = 256) -> tuple[Hyper, Dims]:
    try:
        hyper, dims = PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return hyper, Dims(N=N, **dims)


@dataclass
class BatchCache:
    """Intermediates of one batched forward pass, kept for the backward pass."""

    variant: Variant
    dims: Dims
    labels: np.ndarray
    gamma: np.ndarray
    atil: np.ndarray             # (3, B, N)
    v: list | None               # per axis, flat tanh outputs (nonlinear only)
    w: list | None               # per axis, flat outputs of the last FIR
    f: np.ndarray                # (B, 9)
    pre: np.ndarray              # (B, L)
    logits: np.ndarray           # (B, C)
    probs: np.ndarray            # (B, C)


def _iir(x, g):
    dt = x.dtype
    return lfilter(np.array([1, -1], dt), np.array([1, -g], dt), x, axis=-1)


def _segment_mask(total: int, N: int, valid: int) -> np.ndarray:
    """True at flat positions j (< total) whose in-segment offset j % N is < valid."""
    return (np.arange(total) % N) < valid


def _segment_abs_sum(flat: np.ndarray, B: int, N: int, valid: int) -> np.ndarray:
    padded = np.zeros(B * N, dtype=flat.dtype)
    padded[:flat.size] = flat
    return np.abs(padded.reshape(B, N)[:, :valid]).sum(axis=1)


def batch_forward(abar: np.ndarray, labels: np.ndarray, theta: dict, variant: Variant,
                  dims: Dims) -> tuple[float, BatchCache]:
    """Mean cross-entropy of a normalized batch ``abar`` with shape (3, B, N)."""
    dt = abar.dtype.type
    _, B, N = abar.shape
    gamma = logistic(theta["gamma_logit"]).astype(abar.dtype)
    f1 = abar.mean(axis=-1)
    atil = np.stack([_iir(abar[d], gamma[d]) for d in range(3)])
    f2 = np.abs(atil).sum(axis=-1) / dt(N)
    f3 = np.zeros((3, B), dtype=abar.dtype)
    vs = ws = None
    if variant == Variant.NONLINEAR:
        vs, ws = [], []
        for d in range(3):
            u = np.convolve(atil[d].ravel(), theta["h1"][d], "valid")
            v = np.tanh(u)
            w = np.convolve(v, theta["h2"][d], "valid")
            f3[d] = _segment_abs_sum(w, B, N, dims.len_w) / dt(N)
            vs.append(v)
            ws.append(w)
    elif variant == Variant.LINEAR:
        ws = []
        for d in range(3):
            w = np.convolve(atil[d].ravel(), theta["h_lin"][d], "valid")
            f3[d] = _segment_abs_sum(w, B, N, dims.len_u) / dt(N)
            ws.append(w)
    f = np.concatenate([f1, f2, f3]).T
    pre = f @ theta["W1"].T + theta["b1"]
    logits = np.maximum(pre, 0) @ theta["W2"].T + theta["b2"]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    probs = ez / sez
    nll = np.log(sez[:, 0]) - z[np.arange(B), labels]
    loss = float(nll.mean())
    cache = BatchCache(variant, dims, labels, gamma, atil, vs, ws, f, pre, logits, probs)
    return loss, cache


def batch_backward(cache: BatchCache, theta: dict) -> Gradients:
    """Exact reverse-mode gradient of the mean loss with respect to ``theta``."""
    dims, variant = cache.dims, cache.variant
    atil = cache.atil
    dtype = atil.dtype
    dt = dtype.type
    _, B, N = atil.shape
    grads = {}

    dlogits = cache.probs.copy()
    dlogits[np.arange(B), cache.labels] -= 1
    dlogits /= dt(B)
    hid = np.maximum(cache.pre, 0)
    grads["W2"] = dlogits.T @ hid
    grads["b2"] = dlogits.sum(axis=0)
    dpre = (dlogits @ theta["W2"]) * (cache.pre > 0)
    grads["W1"] = dpre.T @ cache.f
    grads["b1"] = dpre.sum(axis=0)
    df = dpre @ theta["W1"]
    df2, df3 = df[:, 3:6].T / dt(N), df[:, 6:9].T / dt(N)

    datil = df2[:, :, None] * np.sign(atil)

    def weight_output(w, coeff, valid):
        # d loss / d w at every flat position; zero where w straddles segments
        padded = np.zeros((B, N), dtype=dtype)
        flat_pad = np.zeros(B * N, dtype=dtype)
        flat_pad[:w.size] = w
        padded[:, :valid] = np.sign(flat_pad.reshape(B, N)[:, :valid]) * coeff[:, None]
        return padded.ravel()[:w.size]

    if variant == Variant.NONLINEAR:
        K1, K2 = dims.K1, dims.K2
        dh1 = np.empty((3, K1), dtype=dtype)
        dh2 = np.empty((3, K2), dtype=dtype)
        for d in range(3):
            a = atil[d].ravel()
            v, w = cache.v[d], cache.w[d]
            dw = weight_output(w, df3[d], dims.len_w)
            dh2[d] = np.correlate(v, dw, "valid")[::-1]
            dv = np.correlate(dw, theta["h2"][d], "full")
            du = dv * (1 - v * v)
            dh1[d] = np.correlate(a, du, "valid")[::-1]
            datil[d] += np.correlate(du, theta["h1"][d], "full").reshape(B, N)
        grads["h1"], grads["h2"] = dh1, dh2
    elif variant == Variant.LINEAR:
        dh = np.empty((3, dims.K1), dtype=dtype)
        for d in range(3):
            a = atil[d].ravel()
            dw = weight_output(cache.w[d], df3[d], dims.len_u)
            dh[d] = np.correlate(a, dw, "valid")[::-1]
            datil[d] += np.correlate(dw, theta["h_lin"][d], "full").reshape(B, N)
        grads["h_lin"] = dh

    # adjoint of y[n] = g*y[n-1] + x[n] - x[n-1]:  lam[n] = datil[n] + g*lam[n+1],
    # dL/dg = sum_n lam[n] * y[n-1]
    dgamma = np.empty(3, dtype=dtype)
    one = np.ones(1, dtype=dtype)
    for d in range(3):
        g = cache.gamma[d]
        lam = lfilter(one, np.array([1, -g], dtype), datil[d][:, ::-1], axis=-1)[:, ::-1]
        dgamma[d] = np.dot(lam[:, 1:].ravel(), atil[d][:, :-1].ravel())
    gam = cache.gamma
    grads["gamma_logit"] = dgamma * gam * (1 - gam)
    return {k: grads[k] for k in theta}


def _batch_arrays(batch, params: ModelParams, dtype):
    readings = batch.readings if isinstance(batch, Dataset) else np.asarray(
        [getattr(s, "readings", s) for s in batch] if isinstance(batch, list) else batch)
    abar = normalize(readings, params.norm, dtype)          # (B, 3, N)
    return np.ascontiguousarray(np.moveaxis(abar, 1, 0))    # (3, B, N)


def _theta(params: ModelParams, dtype) -> dict:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.trainable().items()}


def forward_loss(batch, labels, params: ModelParams, dtype=np.float64):
    """Mean softmax cross-entropy over a batch of raw segments.

    ``batch`` is a (B, 3, N) array of raw readings, a list of segments, or a Dataset.
    Returns ``(loss, cache)``; pass the cache to :func:`backward`.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DomainError("empty batch")
    if labels.min() < 0 or labels.max() >= params.dims.C:
        raise DomainError("label out of range")
    abar = _batch_arrays(batch, params, dtype)
    return batch_forward(abar, labels, _theta(params, dtype), params.variant, params.dims)


def backward(params: ModelParams, cache: BatchCache) -> Gradients:
    return batch_backward(cache, _theta(params, cache.atil.dtype))


def finite_diff_grad(batch, labels, params: ModelParams, eps: float = 1e-6) -> Gradients:
    """Central-difference gradient of the mean loss, one scalar parameter at a time (float64)."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    abar = _batch_arrays(batch, params, np.float64)
    theta = _theta(params, np.float64)
    out = {}
    for name, arr in theta.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            lp, _ = batch_forward(abar, labels, theta, params.variant, params.dims)
            arr[idx] = orig - eps
            lm, _ = batch_forward(abar, labels, theta, params.variant, params.dims)
            arr[idx] = orig
            g[idx] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, theta: dict) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in theta.items()},
                   {k: np.zeros_like(a) for k, a in theta.items()}, 0)


NO_DECAY = frozenset({"gamma_logit"})


def adam_step(theta: dict, grads: Gradients, state: AdamState, hyper: Hyper):
    """One Adam update with L2 weight decay folded into the gradient.

    Returns new ``(theta, state)``; the inputs are left untouched.
    """
    t = state.step + 1
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new_theta, new_m, new_v = {}, {}, {}
    for k, p in theta.items():
        g = grads[k]
        if hyper.weight_decay and k not in NO_DECAY:
            g = g + hyper.weight_decay * p
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * (g * g)
        step = hyper.learning_rate * (m / c1) / (np.sqrt(v / c2) + hyper.adam_eps)
        new_theta[k] = (p - step).astype(p.dtype, copy=False)
        new_m[k], new_v[k] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)
    return new_theta, AdamState(new_m, new_v, t)


def train(train_set: Dataset, hyper: Hyper, dims: Dims, variant=Variant.NONLINEAR,
          callback: Callable[[int, float], None] | None = None):
    """Fit normalization on ``train_set`` and run ``hyper.iterations`` Adam steps.

    Mini-batches are drawn uniformly with replacement.  Returns
    ``(params, loss_history)``.
    """
    variant = Variant.parse(variant)
    if len(train_set) == 0:
        raise ConfigurationError("empty training set")
    if train_set.N != dims.N:
        raise ConfigurationError(f"dataset N={train_set.N} but dims.N={dims.N}")
    if train_set.C != dims.C:
        raise ConfigurationError(f"dataset has {train_set.C} classes but dims.C={dims.C}")
    dtype = hyper.dtype
    norm = fit_norm_stats(train_set)
    params = init_model(dims, hyper.seed, variant, norm)
    abar = _batch_arrays(train_set, params, dtype)
    labels = train_set.labels
    S = len(train_set)
    rng = np.random.default_rng([hyper.seed, 1])
    theta = _theta(params, dtype)
    state = AdamState.zeros_like(theta)
    history = np.empty(hyper.iterations)
    for it in range(hyper.iterations):
        idx = rng.integers(0, S, hyper.batch_size)
        loss, cache = batch_forward(abar[:, idx, :], labels[idx], theta, variant, dims)
        grads = batch_backward(cache, theta)
        theta, state = adam_step(theta, grads, state, hyper)
        history[it] = loss
        if callback is not None:
            callback(it, loss)
    final = params.with_trainable({k: a.astype(np.float64) for k, a in theta.items()})
    return final, history


def predict_logits(readings, params: ModelParams, dtype=np.float64,
                   chunk: int = 2048) -> np.ndarray:
    """Logits for many raw segments at once, shape (S, C)."""
    readings = readings.readings if isinstance(readings, Dataset) else np.asarray(readings)
    theta = _theta(params, dtype)
    out = []
    for start in range(0, len(readings), chunk):
        part = readings[start:start + chunk]
        abar = np.ascontiguousarray(np.moveaxis(normalize(part, params.norm, dtype), 1, 0))
        dummy = np.zeros(len(part), dtype=np.int64)
        _, cache = batch_forward(abar, dummy, theta, params.variant, params.dims)
        out.append(cache.logits)
    if not out:
        return np.zeros((0, params.dims.C))
    return np.concatenate(out)


def predict(readings, params: ModelParams, dtype=np.float64) -> np.ndarray:
    return np.argmax(predict_logits(readings, params, dtype), axis=1)


def write_loss_csv(history, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(float(loss))])


# --- gradient verification ----------------------------------------------------

@dataclass
class GradCheckResult:
    seed: int
    variant: Variant
    dims: Dims
    batch_size: int
    max_rel_error: float
    per_param: dict


def kink_margin(cache: BatchCache) -> float:
    """Smallest distance of any |.| or ReLU input from its kink."""
    parts = [np.abs(cache.atil).min(), np.abs(cache.pre).min()]
    if cache.w is not None:
        dims = cache.dims
        valid = dims.len_w if cache.variant == Variant.NONLINEAR else dims.len_u
        B, N = cache.atil.shape[1:]
        mask = _segment_mask(cache.w[0].size, N, valid)
        parts += [np.abs(w[mask]).min() for w in cache.w]
    return float(min(parts))


def random_gradcheck_problem(rng: np.random.Generator, variant=Variant.NONLINEAR,
                             max_N=32, max_K=4, max_L=4, max_C=4, max_batch=8,
                             min_margin=1e-4):
    """Draw a small random (params, readings, labels) problem away from kinks.

    Finite differences are only meaningful where the loss is smooth, so draws
    whose |.|/ReLU inputs come within ``min_margin`` of zero are redrawn.
    """
    variant = Variant.parse(variant)
    for _ in range(1000):
        K1, K2 = int(rng.integers(1, max_K + 1)), int(rng.integers(1, max_K + 1))
        N = int(rng.integers(max(K1 + K2 - 1, 8), max_N + 1))
        dims = Dims(N=N, K1=K1, K2=K2, L=int(rng.integers(1, max_L + 1)),
                    C=int(rng.integers(2, max_C + 1)))
        B = int(rng.integers(1, max_batch + 1))
        p = init_model(dims, int(rng.integers(2**31)), variant)
        norm = NormStats(rng.normal(0, 5, 3), rng.uniform(0.05, 0.2, 3))
        trainable = {k: v + rng.normal(0, 0.3, v.shape) for k, v in p.trainable().items()}
        trainable["gamma_logit"] = rng.normal(1.0, 1.0, 3)
        trainable["b1"] = rng.normal(0, 0.5, dims.L)
        params = p.with_trainable(trainable)
        params = replace(params, norm=norm)
        readings = rng.integers(-60, 61, (B, 3, N))
        labels = rng.integers(0, dims.C, B)
        _, cache = forward_loss(readings, labels, params, np.float64)
        if kink_margin(cache) >= min_margin:
            return params, readings, labels
    raise RuntimeError("could not draw a kink-free problem")


def relative_errors(analytic: Gradients, numeric: Gradients) -> dict:
    return {k: float(np.max(np.abs(analytic[k] - numeric[k]) / np.maximum(1.0, np.abs(numeric[k]))))
            for k in analytic}


def gradcheck(seed: int = 0, variant=Variant.NONLINEAR, eps: float = 1e-6,
              **limits) -> GradCheckResult:
    """Compare :func:`backward` against :func:`finite_diff_grad` on a random small problem."""
    rng = np.random.default_rng(seed)
    params, readings, labels = random_gradcheck_problem(rng, variant, **limits)
    _, cache = forward_loss(readings, labels, params, np.float64)
    analytic = backward(params, cache)
    numeric = finite_diff_grad(readings, labels, params, eps)
    errs = relative_errors(analytic, numeric)
    return GradCheckResult(seed, params.variant, params.dims, len(labels),
                           max(errs.values()), errs)
