"""Spectral views of the pipeline stages and feature export.

ASD estimator: for every segment the stage signal of length M is turned into
a one-sided periodogram (rectangular window, no detrending, density scaling
at fs = 50 Hz), the periodograms of one class are averaged, and the square
root of the average is the amplitude spectral density.  One-sided density
scaling makes ``sum(psd) * fs / M`` equal the mean square of the signal.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import periodogram

from .core import AXES, SAMPLE_RATE, ConfigurationError, Dataset, DomainError, ModelParams, Variant
from .featurizer import features, fir_valid_conv, iir_highpass, normalize

log = logging.getLogger(__name__)

STAGES = ("normalized", "iir_filtered", "nonlinear_filtered")
ASD_META = {"estimator": "periodogram", "window": "rectangular", "detrend": False,
            "scaling": "one-sided density", "fs_hz": SAMPLE_RATE, "average": "per-class mean PSD"}


@dataclass
class AsdCurve:
    frequencies: np.ndarray   # Hz, k * fs / M for k = 0..M//2
    amplitude: np.ndarray     # sqrt of class-averaged PSD
    class_index: int
    class_name: str
    axis: str
    stage: str


def stage_signals(readings, params: ModelParams, stage: str) -> np.ndarray:
    """Signals of one pipeline stage for raw readings (S, 3, N).

    ``nonlinear_filtered`` is the output of the last FIR filter (the single FIR
    for the linear variant), of length N - K1 - K2 + 2 (N - K1 + 1 if linear).
    """
    if stage not in STAGES:
        raise DomainError(f"unknown stage {stage!r}; choose from {STAGES}")
    abar = normalize(np.asarray(readings), params.norm)
    if stage == "normalized":
        return abar
    atil = iir_highpass(abar, params.gamma)
    if stage == "iir_filtered":
        return atil
    if params.variant == Variant.NONLINEAR:
        return fir_valid_conv(np.tanh(fir_valid_conv(atil, params.h1)), params.h2)
    if params.variant == Variant.LINEAR:
        return fir_valid_conv(atil, params.h_lin)
    raise ConfigurationError("the ablated variant has no FIR stage")


def psd(signals: np.ndarray, fs: float = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """One-sided rectangular-window periodogram along the last axis."""
    return periodogram(signals, fs=fs, window="boxcar", detrend=False,
                       scaling="density", return_onesided=True, axis=-1)


def asd(dataset: Dataset, params: ModelParams, stage: str,
        fs: float = SAMPLE_RATE) -> list[AsdCurve]:
    """Per-class, per-axis amplitude spectral density of one stage."""
    sig = stage_signals(dataset.readings, params, stage)
    freqs, p = psd(sig, fs)
    curves = []
    for c, name in enumerate(dataset.class_names):
        members = dataset.labels == c
        if not members.any():
            log.warning("class %r has no segments; skipped", name)
            continue
        mean_psd = p[members].mean(axis=0)
        for d, axis in enumerate(AXES):
            curves.append(AsdCurve(freqs, np.sqrt(mean_psd[d]), c, name, axis, stage))
    return curves


def fir_frequency_response(h, n_points: int = 512,
                           fs: float = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude |sum_k h[k] exp(-j w k)| on a uniform grid w in [0, pi].

    Returns ``(freq_hz, magnitude)`` with frequencies from 0 to fs/2.
    """
    if n_points < 2:
        raise DomainError("n_points must be >= 2")
    h = np.asarray(h, dtype=np.float64).ravel()
    omega = np.linspace(0.0, np.pi, n_points)
    H = np.zeros(n_points, dtype=complex)
    for k, hk in enumerate(h):  # in tap order, so H at DC is the plain sum of h
        H = H + hk * np.exp(-1j * omega * k)
    return omega / np.pi * (fs / 2), np.abs(H)


def export_features(dataset: Dataset, params: ModelParams, six: bool = False
                    ) -> tuple[list[str], list[list]]:
    """One row per segment: dataset_id, animal_id, label, then the features.

    With ``six=True`` the three FIR features are left out.
    """
    n_feat = 6 if six else 9
    header = ["dataset_id", "animal_id", "label"] + [f"f{i}" for i in range(1, n_feat + 1)]
    rows = []
    for seg in dataset:
        f, _ = features(seg, params)
        rows.append([seg.dataset_id, seg.animal_id, int(seg.label)] + f[:n_feat].tolist())
    return header, rows


def write_asd_csv(curves: list[AsdCurve], path) -> None:
    """CSV ``stage,class,axis,freq_hz,asd`` plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "class", "axis", "freq_hz", "asd"])
        for c in curves:
            for fz, a in zip(c.frequencies, c.amplitude):
                w.writerow([c.stage, c.class_name, c.axis, repr(float(fz)), repr(float(a))])
    path.with_name(path.name + ".meta.json").write_text(json.dumps(ASD_META, indent=2))


def write_freqz_csv(params: ModelParams, path, n_points: int = 512) -> None:
    """CSV ``filter,axis,freq_hz,magnitude`` for every FIR filter of the model."""
    if params.variant == Variant.NONLINEAR:
        filters = {"h1": params.h1, "h2": params.h2}
    elif params.variant == Variant.LINEAR:
        filters = {"h_lin": params.h_lin}
    else:
        raise ConfigurationError("the ablated variant has no FIR filters")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "axis", "freq_hz", "magnitude"])
        for name, bank in filters.items():
            for d, axis in enumerate(AXES):
                freq, mag = fir_frequency_response(bank[d], n_points)
                for fz, m in zip(freq, mag):
                    w.writerow([name, axis, repr(float(fz)), repr(float(m))])


def write_features_csv(header: list[str], rows: list[list], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row[:3] + [repr(float(v)) for v in row[3:]])
