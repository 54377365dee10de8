"""Domain types, parameter containers, initialization and model/dataset I/O."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

AXES = ("x", "y", "z")
N_FEATURES = 9
SAMPLE_RATE = 50.0
INT16_MIN, INT16_MAX = -32768, 32767

MAGIC = b"DBC1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHB6I")


class CollarNetError(Exception):
    """Base class for all package errors."""


class DimensionError(CollarNetError, ValueError):
    pass


class FormatError(CollarNetError, ValueError):
    pass


class CorruptionError(CollarNetError, ValueError):
    pass


class DegenerateDataError(CollarNetError, ValueError):
    pass


class DomainError(CollarNetError, ValueError):
    pass


class ConfigurationError(CollarNetError, ValueError):
    pass


class NumericError(CollarNetError, ArithmeticError):
    pass


class GenerationError(CollarNetError, ValueError):
    pass


class Variant(IntEnum):
    """Which third feature set the model computes.

    NONLINEAR: FIR -> tanh -> FIR, then mean absolute value.
    LINEAR: a single FIR filter, then mean absolute value.
    ABLATED: no third feature set; f3 is identically zero (6-feature baseline).
    """

    NONLINEAR = 0
    LINEAR = 1
    ABLATED = 2

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ConfigurationError(f"unknown variant {value!r}") from None
        return cls(value)


@dataclass(frozen=True)
class Dims:
    N: int = 256
    K1: int = 8
    K2: int = 8
    F: int = N_FEATURES
    L: int = 6
    C: int = 5

    def __post_init__(self):
        for name in ("N", "K1", "K2", "F", "L", "C"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise DimensionError(f"{name} must be an integer, got {v!r}")
        if self.K1 < 1 or self.K2 < 1:
            raise DimensionError("FIR lengths must be >= 1")
        if self.N < self.K1 + self.K2 - 1:
            raise DimensionError(f"N={self.N} too short for K1={self.K1}, K2={self.K2}")
        if self.F != N_FEATURES:
            raise DimensionError(f"F must be {N_FEATURES}")
        if self.L < 1:
            raise DimensionError("L must be >= 1")
        if self.C < 2:
            raise DimensionError("C must be >= 2")

    @property
    def len_u(self) -> int:
        """Length of the first FIR output (valid convolution)."""
        return self.N - self.K1 + 1

    @property
    def len_w(self) -> int:
        """Length of the second FIR output."""
        return self.N - self.K1 - self.K2 + 2

    def as_tuple(self):
        return (self.N, self.K1, self.K2, self.F, self.L, self.C)


@dataclass(frozen=True)
class Segment:
    readings: np.ndarray  # (3, N) raw integer counts
    label: int
    animal_id: str = ""
    dataset_id: str = ""


@dataclass
class Dataset:
    """Labeled segments stored as stacked arrays.

    ``readings`` has shape (S, 3, N); the other per-segment arrays have length S.
    """

    readings: np.ndarray
    labels: np.ndarray
    animal_ids: np.ndarray
    dataset_ids: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.readings = np.asarray(self.readings)
        if self.readings.ndim != 3 or self.readings.shape[1] != 3:
            raise DimensionError(f"readings must be (S, 3, N), got {self.readings.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.animal_ids = np.asarray(self.animal_ids, dtype=object)
        self.dataset_ids = np.asarray(self.dataset_ids, dtype=object)
        S = self.readings.shape[0]
        if not (len(self.labels) == len(self.animal_ids) == len(self.dataset_ids) == S):
            raise DimensionError("per-segment arrays disagree in length")
        C = len(self.class_names)
        if S and (self.labels.min() < 0 or self.labels.max() >= C):
            raise DimensionError("label out of range for class_names")
        if S and (self.readings.min() < INT16_MIN or self.readings.max() > INT16_MAX):
            raise DimensionError("raw readings outside signed 16-bit range")

    def __len__(self):
        return self.readings.shape[0]

    def __getitem__(self, i) -> Segment:
        return Segment(self.readings[i], int(self.labels[i]),
                       str(self.animal_ids[i]), str(self.dataset_ids[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def N(self) -> int:
        return self.readings.shape[2]

    @property
    def C(self) -> int:
        return len(self.class_names)

    @property
    def segments(self) -> list[Segment]:
        return list(self)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.readings[index], self.labels[index], self.animal_ids[index],
                       self.dataset_ids[index], list(self.class_names))

    def animals(self) -> list[str]:
        """Distinct animal ids in order of first appearance."""
        return list(dict.fromkeys(self.animal_ids.tolist()))

    @classmethod
    def from_segments(cls, segments, class_names) -> "Dataset":
        segments = list(segments)
        return cls(np.stack([s.readings for s in segments]),
                   [s.label for s in segments],
                   [s.animal_id for s in segments],
                   [s.dataset_id for s in segments],
                   list(class_names))


@dataclass(frozen=True)
class NormStats:
    m: np.ndarray  # per-axis means (raw units)
    s: np.ndarray  # per-axis inverse standard deviations

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.shape != (3,) or not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise DegenerateDataError("inverse standard deviations must be positive and finite")

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(3), np.ones(3))


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


# order of the serialized / trainable blocks
_FILTER_FIELDS = {
    Variant.NONLINEAR: ("h1", "h2"),
    Variant.LINEAR: ("h_lin",),
    Variant.ABLATED: (),
}
_MLP_FIELDS = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class ModelParams:
    dims: Dims
    norm: NormStats
    gamma_logit: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    variant: Variant = Variant.NONLINEAR
    h1: np.ndarray | None = None
    h2: np.ndarray | None = None
    h_lin: np.ndarray | None = None

    def __post_init__(self):
        d = self.dims
        expected = {"gamma_logit": (3,), "W1": (d.L, d.F), "b1": (d.L,),
                    "W2": (d.C, d.L), "b2": (d.C,)}
        if self.variant == Variant.NONLINEAR:
            expected.update(h1=(3, d.K1), h2=(3, d.K2))
        elif self.variant == Variant.LINEAR:
            expected["h_lin"] = (3, d.K1)
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr is None or np.shape(arr) != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {np.shape(arr)}")

    @property
    def gamma(self) -> np.ndarray:
        return logistic(self.gamma_logit)

    @property
    def trainable_names(self) -> tuple[str, ...]:
        return ("gamma_logit",) + _FILTER_FIELDS[self.variant] + _MLP_FIELDS

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.trainable_names}

    def with_trainable(self, values: dict) -> "ModelParams":
        return replace(self, **values)

    def is_finite(self) -> bool:
        arrays = [self.norm.m, self.norm.s] + list(self.trainable().values())
        return all(np.all(np.isfinite(a)) for a in arrays)


def init_model(dims: Dims, seed: int = 0, variant=Variant.NONLINEAR,
               norm: NormStats | None = None) -> ModelParams:
    """Draw a fresh model.

    gamma starts at 0.9 on every axis, FIR taps are uniform in +-1/sqrt(K),
    MLP weights uniform in +-1/sqrt(fan_in) and biases zero.
    """
    if not isinstance(dims, Dims):
        raise DimensionError("dims must be a Dims instance")
    variant = Variant.parse(variant)
    rng = np.random.default_rng(seed)
    taps = {}
    if variant == Variant.NONLINEAR:
        taps["h1"] = rng.uniform(-1, 1, (3, dims.K1)) / np.sqrt(dims.K1)
        taps["h2"] = rng.uniform(-1, 1, (3, dims.K2)) / np.sqrt(dims.K2)
    elif variant == Variant.LINEAR:
        taps["h_lin"] = rng.uniform(-1, 1, (3, dims.K1)) / np.sqrt(dims.K1)
    W1 = rng.uniform(-1, 1, (dims.L, dims.F)) / np.sqrt(dims.F)
    W2 = rng.uniform(-1, 1, (dims.C, dims.L)) / np.sqrt(dims.L)
    return ModelParams(
        dims=dims,
        norm=norm if norm is not None else NormStats.identity(),
        gamma_logit=np.full(3, logit(0.9)),
        W1=W1, b1=np.zeros(dims.L), W2=W2, b2=np.zeros(dims.C),
        variant=variant, **taps,
    )


def param_count(dims: Dims, variant=Variant.NONLINEAR):
    """Stored parameters per stage: (normalization, feature calculation, classification)."""
    variant = Variant.parse(variant)
    feat = {Variant.NONLINEAR: 3 * (dims.K1 + dims.K2 + 1),
            Variant.LINEAR: 3 * (dims.K1 + 1),
            Variant.ABLATED: 3}[variant]
    per_stage = (6, feat, dims.L * (dims.F + dims.C) + dims.C + dims.L)
    return per_stage, sum(per_stage)


def model_file_size(dims: Dims, variant=Variant.NONLINEAR) -> int:
    return _HEADER.size + 4 * param_count(dims, variant)[1]


def _blocks(params: ModelParams):
    yield params.norm.m
    yield params.norm.s
    for name in params.trainable_names:
        yield getattr(params, name)


def save_model(params: ModelParams) -> bytes:
    """Serialize to the binary model format (little-endian float32 payload)."""
    if not params.is_finite():
        raise CorruptionError("refusing to serialize non-finite parameters")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(params.variant), *params.dims.as_tuple())
    payload = np.concatenate([np.ravel(b) for b in _blocks(params)]).astype("<f4")
    return header + payload.tobytes()


def load_model(data: bytes) -> ModelParams:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, variant, *dims = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    try:
        variant = Variant(variant)
        dims = Dims(*dims)
    except (ValueError, DimensionError) as exc:
        raise FormatError(f"bad header: {exc}") from exc
    expected = model_file_size(dims, variant)
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(payload)):
        raise CorruptionError("non-finite value in model payload")
    shapes = [("m", (3,)), ("s", (3,)), ("gamma_logit", (3,))]
    if variant == Variant.NONLINEAR:
        shapes += [("h1", (3, dims.K1)), ("h2", (3, dims.K2))]
    elif variant == Variant.LINEAR:
        shapes += [("h_lin", (3, dims.K1))]
    shapes += [("W1", (dims.L, dims.F)), ("b1", (dims.L,)),
               ("W2", (dims.C, dims.L)), ("b2", (dims.C,))]
    values, pos = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        values[name] = payload[pos:pos + size].reshape(shape)
        pos += size
    try:
        norm = NormStats(values.pop("m"), values.pop("s"))
    except DegenerateDataError as exc:
        raise CorruptionError(str(exc)) from exc
    return ModelParams(dims=dims, norm=norm, variant=variant, **values)


def round_to_float32(params: ModelParams) -> ModelParams:
    """Parameters exactly as they would come back from ``load_model(save_model(p))``."""
    return load_model(save_model(params))


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bitwise equality of two models."""
    if a.dims != b.dims or a.variant != b.variant:
        return False
    for x, y in zip(_blocks(a), _blocks(b)):
        if x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return True


# --- dataset CSV ----------------------------------------------------------

def dataset_header(N: int) -> list[str]:
    return (["dataset_id", "animal_id", "label"]
            + [f"{ax}{i}" for ax in AXES for i in range(N)])


def write_dataset_csv(dataset: Dataset, path, names_path=None) -> None:
    """Write the dataset CSV and, optionally, the class-name sidecar file."""
    path = Path(path)
    S, _, N = dataset.readings.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dataset_header(N))
        flat = dataset.readings.reshape(S, 3 * N)
        for i in range(S):
            w.writerow([dataset.dataset_ids[i], dataset.animal_ids[i], int(dataset.labels[i])]
                       + flat[i].tolist())
    if names_path is None:
        names_path = class_names_path(path)
    Path(names_path).write_text("".join(f"{n}\n" for n in dataset.class_names))


def class_names_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".classes.txt")


def read_dataset_csv(path, names_path=None) -> Dataset:
    path = Path(path)
    names_path = Path(names_path) if names_path is not None else class_names_path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if header[:3] != ["dataset_id", "animal_id", "label"] or (len(header) - 3) % 3:
            raise FormatError(f"{path}: unexpected header")
        N = (len(header) - 3) // 3
        if header != dataset_header(N):
            raise FormatError(f"{path}: sample columns must be x0..x{N-1},y0..,z0..")
        ds_ids, an_ids, labels, rows = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                labels.append(int(row[2]))
                rows.append([int(v) for v in row[3:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            ds_ids.append(row[0])
            an_ids.append(row[1])
    readings = np.array(rows, dtype=np.int64).reshape(-1, 3, N)
    if names_path.exists():
        names = [ln.strip() for ln in names_path.read_text().splitlines() if ln.strip()]
    else:
        names = [str(i) for i in range(max(labels, default=-1) + 1)]
    return Dataset(readings.astype(np.int32), labels, an_ids, ds_ids, names)


__all__ = [
    "AXES", "N_FEATURES", "SAMPLE_RATE", "Variant", "Dims", "Segment", "Dataset",
    "NormStats", "ModelParams", "init_model", "param_count", "model_file_size",
    "save_model", "load_model", "round_to_float32", "params_equal", "logistic", "logit",
    "write_dataset_csv", "read_dataset_csv", "CollarNetError", "DimensionError",
    "FormatError", "CorruptionError", "DegenerateDataError", "DomainError",
    "ConfigurationError", "NumericError", "GenerationError",
]
