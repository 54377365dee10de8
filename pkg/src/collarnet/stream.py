"""Constant-memory per-sample inference and operation accounting.

The engine consumes one triaxial sample per call and emits a prediction on
every N-th call.  It keeps, per axis, the previous normalized input, the
previous IIR output, a ring buffer of the last K1 IIR outputs, a ring buffer
of the last K2 tanh outputs and three running sums; plus one global sample
counter.  Nothing depends on N.

Accumulation order matches :mod:`collarnet.featurizer` exactly:

* every running sum starts from its first term and adds left to right,
* every FIR output is ``h[0]*newest + h[1]*previous + ...`` in that order,
* tanh is ``math.tanh`` on the working-precision value,

so a streamed segment and the batch featurizer produce identical bits.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import Dims, DimensionError, FormatError, ModelParams, Variant, param_count
from .featurizer import argmax_lowest, mlp_logits


@dataclass
class OpCounts:
    """Operation counts for one single-segment inference."""

    adds: int = 0
    abs_evals: int = 0
    mults: int = 0
    tanh_evals: int = 0
    relu_ops: int = 0
    argmax_ops: int = 0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


STAGES = ("normalization", "features", "classification")


def op_count_report(dims: Dims) -> dict[str, OpCounts]:
    """Closed-form operation counts of the nonlinear model, per stage and in total.

    Subtractions count as additions and divisions as multiplications.  The
    feature-stage add and mult formulas (including their constant correction
    terms) are evaluated as published, not re-derived; the instrumented
    :class:`StreamEngine` counter is the independent check.
    """
    N, K1, K2, F, L, C = dims.as_tuple()
    norm = OpCounts(adds=3 * N, mults=3 * N)
    feat = OpCounts(
        adds=9 * N + 3 * (N - K1 + 2) * K1 + 3 * (N - K1 - K2 + 2) * K2 - 18,
        abs_evals=3 * (2 * N - K1 - K2 + 2),
        mults=3 * N + 3 * (N - K1 + 1) * K1 + 3 * (N - K1 - K2 + 2) * K2 + 6,
        tanh_evals=3 * (N - K1 + 1),
    )
    head = OpCounts(adds=L * F + C * L, mults=L * F + C * L, relu_ops=L, argmax_ops=1)
    return {"normalization": norm, "features": feat, "classification": head,
            "total": norm + feat + head}


def complexity_table(dims: Dims) -> str:
    """Plain-text table of parameters and operation counts per stage."""
    report = op_count_report(dims)
    (p_norm, p_feat, p_head), p_total = param_count(dims, Variant.NONLINEAR)
    params = {"normalization": p_norm, "features": p_feat, "classification": p_head,
              "total": p_total}
    cols = ["parameters", "adds", "abs_evals", "mults", "tanh_evals", "relu_ops", "argmax_ops"]
    lines = ["stage".ljust(15) + "".join(c.rjust(12) for c in cols)]
    for stage in (*STAGES, "total"):
        row = [params[stage], *report[stage].as_dict().values()]
        lines.append(stage.ljust(15) + "".join(str(v).rjust(12) for v in row))
    return "\n".join(lines)


@dataclass
class StreamState:
    """Mutable per-stream state; see the module docstring for the layout."""

    n: int
    x_prev: list          # previous normalized input, per axis
    y_prev: list          # previous IIR output, per axis
    buf1: list            # deque(maxlen=K1) of IIR outputs, per axis
    buf2: list            # deque(maxlen=K2) of tanh outputs, per axis
    sum_mean: list        # running sum of normalized inputs
    sum_iir: list         # running sum of |IIR output|
    sum_fir: list         # running sum of |last FIR output|

    def footprint(self) -> int:
        """Number of stored scalars."""
        per_axis = sum(len(getattr(self, k)) for k in
                       ("x_prev", "y_prev", "sum_mean", "sum_iir", "sum_fir"))
        rings = sum(b.maxlen for b in self.buf1) + sum(b.maxlen for b in self.buf2)
        return per_axis + rings + 1


def footprint(dims: Dims) -> int:
    """Scalars held by a stream state: 3*(2 + K1 + K2 + 3) + 1."""
    return 3 * (2 + dims.K1 + dims.K2 + 3) + 1


class StreamEngine:
    """Per-sample inference for one sensor stream.

    Parameters
    ----------
    params : ModelParams
        Trained model; any variant.
    dtype : numpy float type
        Working precision, ``np.float64`` (default) or ``np.float32``.
    count_ops : bool
        If true, every arithmetic operation of the current segment is tallied
        in :attr:`ops`, split by stage.
    """

    def __init__(self, params: ModelParams, dtype=np.float64, count_ops: bool = False):
        self.params = params
        self.dtype = np.dtype(dtype)
        d = params.dims
        # Python floats carry float64 exactly; float32 needs numpy scalars
        cast = float if self.dtype == np.float64 else self.dtype.type
        self._cast = cast
        self._m = [cast(v) for v in np.asarray(params.norm.m, dtype=self.dtype)]
        self._s = [cast(v) for v in np.asarray(params.norm.s, dtype=self.dtype)]
        self._gamma = [cast(v) for v in params.gamma.astype(self.dtype)]
        self._zero = cast(0)
        self._N = cast(d.N)
        if params.variant == Variant.NONLINEAR:
            self._h1 = [[cast(v) for v in row] for row in params.h1.astype(self.dtype)]
            self._h2 = [[cast(v) for v in row] for row in params.h2.astype(self.dtype)]
        elif params.variant == Variant.LINEAR:
            self._h1 = [[cast(v) for v in row] for row in params.h_lin.astype(self.dtype)]
            self._h2 = None
        else:
            self._h1 = self._h2 = None
        # sample index (within a segment) of the first output of the last FIR
        self._w_start = d.K1 + d.K2 - 2 if params.variant == Variant.NONLINEAR else d.K1 - 1
        self.count_ops = count_ops
        self.last_ops: dict[str, OpCounts] | None = None
        self.reset()

    def _fresh(self) -> StreamState:
        d = self.params.dims
        z = self._zero
        return StreamState(
            n=0,
            x_prev=[z] * 3, y_prev=[z] * 3,
            buf1=[deque(maxlen=d.K1) for _ in range(3)],
            buf2=[deque(maxlen=d.K2) for _ in range(3)],
            sum_mean=[z] * 3, sum_iir=[z] * 3, sum_fir=[z] * 3,
        )

    def reset(self) -> None:
        self.state = self._fresh()
        self.ops = {s: OpCounts() for s in STAGES}

    def _count(self, stage: str, **kw) -> None:
        c = self.ops[stage]
        for k, v in kw.items():
            setattr(c, k, getattr(c, k) + v)

    @staticmethod
    def _fir(buf: deque, h: list):
        # buf[-1] is the newest sample; taps run newest to oldest
        acc = h[0] * buf[-1]
        for k in range(1, len(h)):
            acc = acc + h[k] * buf[-1 - k]
        return acc

    def push(self, sample) -> tuple[int, np.ndarray] | None:
        """Consume one raw (ax, ay, az) sample.

        Returns ``(class_index, features)`` on the N-th sample of a segment,
        after which the state is reset; otherwise ``None``.
        """
        if len(sample) != 3:
            raise DimensionError(f"expected 3 axes per sample, got {len(sample)}")
        st = self.state
        first = st.n == 0
        counting = self.count_ops
        variant = self.params.variant
        for d in range(3):
            a = self._cast(sample[d])
            abar = self._s[d] * (a - self._m[d])
            st.sum_mean[d] = abar if first else st.sum_mean[d] + abar

            y = self._gamma[d] * st.y_prev[d] + (abar - st.x_prev[d])
            st.x_prev[d], st.y_prev[d] = abar, y
            st.sum_iir[d] = abs(y) if first else st.sum_iir[d] + abs(y)
            if counting:
                self._count("normalization", adds=1, mults=1)
                self._count("features", adds=2 + (not first) * 2, mults=1, abs_evals=1)

            if variant == Variant.ABLATED:
                continue
            b1 = st.buf1[d]
            b1.append(y)
            if len(b1) < b1.maxlen:
                continue
            u = self._fir(b1, self._h1[d])
            if counting:
                K = len(self._h1[d])
                self._count("features", mults=K, adds=K - 1)
            if variant == Variant.NONLINEAR:
                v = self._cast(math.tanh(u))
                b2 = st.buf2[d]
                b2.append(v)
                if counting:
                    self._count("features", tanh_evals=1)
                if len(b2) < b2.maxlen:
                    continue
                w = self._fir(b2, self._h2[d])
                if counting:
                    K = len(self._h2[d])
                    self._count("features", mults=K, adds=K - 1)
            else:
                w = u
            if st.n == self._w_start:
                st.sum_fir[d] = abs(w)
            else:
                st.sum_fir[d] = st.sum_fir[d] + abs(w)
                if counting:
                    self._count("features", adds=1)
            if counting:
                self._count("features", abs_evals=1)
        st.n += 1
        if st.n < self.params.dims.N:
            return None
        return self._finish()

    def _finish(self) -> tuple[int, np.ndarray]:
        st, N = self.state, self._N
        vals = [x / N for x in (*st.sum_mean, *st.sum_iir)]
        if self.params.variant == Variant.ABLATED:
            vals += [self._zero] * 3
        else:
            vals += [x / N for x in st.sum_fir]
        f = np.array(vals, dtype=self.dtype)
        _, logits = mlp_logits(f, self.params, self.dtype)
        cls = argmax_lowest(logits)
        if self.count_ops:
            dims = self.params.dims
            self._count("features", mults=9 if self.params.variant != Variant.ABLATED else 6)
            head = dims.L * dims.F + dims.C * dims.L
            self._count("classification", adds=head, mults=head, relu_ops=dims.L, argmax_ops=1)
            self.last_ops = dict(self.ops, total=sum(self.ops.values(), OpCounts()))
        self.reset()
        return cls, f

    def footprint(self) -> int:
        return self.state.footprint()


def stream_init(params: ModelParams, dtype=np.float64, count_ops: bool = False) -> StreamEngine:
    return StreamEngine(params, dtype, count_ops)


def stream_push(engine: StreamEngine, sample) -> tuple[int, np.ndarray] | None:
    return engine.push(sample)


def stream_segments(params: ModelParams, samples: Iterable, dtype=np.float64
                    ) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(segment_index, class_index, features)`` for every complete segment.

    A trailing partial segment produces no output.
    """
    engine = StreamEngine(params, dtype)
    index = 0
    for sample in samples:
        out = engine.push(sample)
        if out is not None:
            yield index, out[0], out[1]
            index += 1


def read_samples_csv(path) -> Iterator[tuple[int, int, int]]:
    """Read ``t,ax,ay,az`` rows (header optional) as integer triples."""
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (lineno == 1 and row[0].strip().lower() == "t"):
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns t,ax,ay,az")
            try:
                yield tuple(int(v) for v in row[1:])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer reading") from None


def write_samples_csv(readings, path, sample_rate: float = 50.0) -> None:
    """Write a (T, 3) or (S, 3, N) array of raw counts as ``t,ax,ay,az`` rows."""
    readings = np.asarray(readings)
    if readings.ndim == 3:
        readings = np.moveaxis(readings, 1, 2).reshape(-1, 3)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ax", "ay", "az"])
        for i, (x, y, z) in enumerate(readings.astype(np.int64).tolist()):
            w.writerow([f"{i / sample_rate:.2f}", x, y, z])


def write_stream_csv(rows: Iterable[tuple[int, int, np.ndarray]], path) -> int:
    """Write ``segment_index,class_index,f1..f9`` rows; returns the row count."""
    count = 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_index", "class_index"] + [f"f{i}" for i in range(1, 10)])
        for index, cls, f in rows:
            w.writerow([index, cls] + [repr(float(v)) for v in f])
            count += 1
    return count
