"""Deterministic synthetic triaxial accelerometry with animal grouping.

Each segment is

    class mean + per-animal offset + sum of band sinusoids + white noise

rounded to integer counts.  Every band contributes one sinusoid whose
frequency is drawn uniformly inside the band, with a random phase and an
amplitude factor ``exp(sigma*z - sigma**2)``.  That factor has unit mean
square, so the expected per-band variance is exactly ``amp**2 / 2`` whatever
the spread.  Large spreads make absolute movement intensity a noisy cue while
leaving the spectral shape intact.

The default configuration has a "spectral twin" pair (ruminating/resting and
drinking): same means, same per-animal offsets, same x/y content, same
expected z power, but the z power sits in 2-3 Hz for one and 4-5 Hz for the
other.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import INT16_MAX, INT16_MIN, SAMPLE_RATE, ConfigurationError, Dataset, GenerationError


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float
    amp: float

    def __post_init__(self):
        if not (0 < self.lo <= self.hi <= SAMPLE_RATE / 2):
            raise ConfigurationError(f"band [{self.lo}, {self.hi}] Hz outside (0, 25]")
        if self.amp < 0:
            raise ConfigurationError("band amplitude must be >= 0")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    mean: tuple[float, float, float]
    bands: tuple[tuple[Band, ...], tuple[Band, ...], tuple[Band, ...]] = ((), (), ())
    jitter: float = 0.0       # std of the per-animal mean offset, counts
    amp_spread: float = 0.0   # log-std of the per-segment amplitude factor
    noise: float = 0.0        # white noise std, counts
    offset_group: str = ""    # classes sharing a non-empty group share per-animal offsets

    def band_variance(self) -> np.ndarray:
        """Expected per-axis variance contributed by the bands (counts^2)."""
        return np.array([sum(b.amp ** 2 / 2 for b in axis) for axis in self.bands])


@dataclass(frozen=True)
class SynthConfig:
    classes: tuple[ClassSpec, ...]
    animals: int = 8
    segments_per_class_per_animal: tuple[int, ...] = ()
    N: int = 256
    sample_rate: float = SAMPLE_RATE
    seed: int = 0
    dataset_id: str = "synth"

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigurationError("need at least two classes")
        if self.animals < 2:
            raise ConfigurationError("need at least two animals")
        if len(self.segments_per_class_per_animal) != len(self.classes):
            raise ConfigurationError("one segment count per class is required")
        if any(c < 1 for c in self.segments_per_class_per_animal):
            raise ConfigurationError("every animal needs at least one segment of every class")

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]


# Field-like class proportions (grazing, walking, ruminating/resting, drinking, other),
# scaled down by 32 and split over 8 animals.
DEFAULT_COUNTS = (192, 28, 128, 19, 7)
TWIN_PAIR = ("ruminating/resting", "drinking")


def _bands(*axes):
    return tuple(tuple(Band(*b) for b in axis) for axis in axes)


def default_config(seed: int = 0) -> SynthConfig:
    still_xy = [(0.5, 1.5, 8.0)]
    classes = (
        ClassSpec("grazing", (-120.0, 10.0, 200.0),
                  _bands([(0.8, 2.5, 70.0)], [(0.8, 2.5, 45.0)], [(0.8, 2.5, 60.0)]),
                  jitter=12.0, amp_spread=0.3, noise=3.0),
        ClassSpec("walking", (40.0, -5.0, 240.0),
                  _bands([(1.5, 2.5, 110.0)], [(0.8, 1.2, 70.0)], [(1.5, 2.5, 120.0)]),
                  jitter=12.0, amp_spread=0.3, noise=3.0),
        ClassSpec("ruminating/resting", (90.0, 30.0, 215.0),
                  _bands(still_xy, still_xy, [(2.0, 3.0, 20.0)]),
                  jitter=12.0, amp_spread=0.5, noise=3.0, offset_group="twins"),
        ClassSpec("drinking", (90.0, 30.0, 215.0),
                  _bands(still_xy, still_xy, [(4.0, 5.0, 20.0)]),
                  jitter=12.0, amp_spread=0.5, noise=3.0, offset_group="twins"),
        ClassSpec("other", (20.0, -60.0, 230.0),
                  _bands([(0.5, 1.5, 30.0), (5.0, 8.0, 15.0)], [(0.5, 1.5, 30.0)],
                         [(1.0, 3.0, 25.0), (5.0, 8.0, 15.0)]),
                  jitter=12.0, amp_spread=0.4, noise=3.0),
    )
    return SynthConfig(classes, animals=8, segments_per_class_per_animal=DEFAULT_COUNTS,
                       N=256, seed=seed)


def shift_means(config: SynthConfig, offset, seed: int | None = None,
                dataset_id: str | None = None) -> SynthConfig:
    """Copy of ``config`` with every class mean moved by ``offset`` (3 counts)."""
    offset = np.broadcast_to(np.asarray(offset, dtype=float), (3,))
    classes = tuple(replace(c, mean=tuple(np.add(c.mean, offset).tolist())) for c in config.classes)
    return replace(config, classes=classes,
                   seed=config.seed if seed is None else seed,
                   dataset_id=dataset_id or config.dataset_id)


def _segment(spec: ClassSpec, offset: np.ndarray, N: int, fs: float,
             rng: np.random.Generator) -> np.ndarray:
    t = np.arange(N) / fs
    out = np.empty((3, N))
    for d in range(3):
        x = np.full(N, spec.mean[d] + offset[d])
        for band in spec.bands[d]:
            freq = rng.uniform(band.lo, band.hi)
            phase = rng.uniform(0, 2 * np.pi)
            s = spec.amp_spread
            gain = np.exp(s * rng.standard_normal() - s * s)
            x += band.amp * gain * np.sin(2 * np.pi * freq * t + phase)
        if spec.noise:
            x += spec.noise * rng.standard_normal(N)
        out[d] = x
    return out


def _offset_keys(classes) -> list[int]:
    # index of the first class in each offset group; ungrouped classes use their own
    first = {}
    keys = []
    for c, spec in enumerate(classes):
        keys.append(first.setdefault(spec.offset_group, c) if spec.offset_group else c)
    return keys


def gen_dataset(config: SynthConfig) -> Dataset:
    """Generate the labeled dataset; identical output for identical configs."""
    N, fs = config.N, config.sample_rate
    keys = _offset_keys(config.classes)
    readings, labels, animals = [], [], []
    for a in range(config.animals):
        for c, spec in enumerate(config.classes):
            jitter = config.classes[keys[c]].jitter
            offset = np.random.default_rng([config.seed, a, keys[c]]).normal(0, jitter, 3)
            for i in range(config.segments_per_class_per_animal[c]):
                rng = np.random.default_rng([config.seed, a, c, i, 1])
                seg = np.rint(_segment(spec, offset, N, fs, rng))
                if seg.min() < INT16_MIN or seg.max() > INT16_MAX:
                    raise GenerationError(f"class {spec.name!r} overflows signed 16-bit counts")
                readings.append(seg)
                labels.append(c)
                animals.append(f"animal{a:02d}")
    return Dataset(np.array(readings, dtype=np.int32), labels, animals,
                   [config.dataset_id] * len(labels), config.class_names)
