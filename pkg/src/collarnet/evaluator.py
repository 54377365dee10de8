"""Confusion matrices, Matthews correlation and the cross-validation harnesses."""
from __future__ import annotations

import json
import math
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, Dataset, Dims, DomainError, ModelParams, Variant
from .trainer import Hyper, predict, train

log = logging.getLogger(__name__)


def confusion(preds, labels, C: int) -> np.ndarray:
    """C x C counts, rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise DomainError("preds and labels differ in length")
    if preds.size and (min(preds.min(), labels.min()) < 0 or max(preds.max(), labels.max()) >= C):
        raise DomainError(f"class index outside [0, {C})")
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def mcc_multiclass(cm) -> float:
    """Multiclass MCC (Gorodkin's R_K) of a confusion matrix.

    Returns 0.0 when either factor of the denominator vanishes.
    """
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise DomainError("confusion matrix must be square and non-empty")
    s = int(cm.sum())
    if s == 0:
        raise DomainError("confusion matrix is empty")
    c = int(np.trace(cm))
    t = cm.sum(axis=1)  # true-class totals
    p = cm.sum(axis=0)  # predicted-class totals
    # exact integer arithmetic up to the final sqrt
    num = c * s - int(np.dot(p, t))
    den_p = s * s - int(np.dot(p, p))
    den_t = s * s - int(np.dot(t, t))
    if den_p == 0 or den_t == 0:
        return 0.0
    den = den_p if den_p == den_t else math.sqrt(den_p * den_t)
    return float(min(1.0, max(-1.0, num / den)))


def binary_mcc(tp, fn, fp, tn) -> float:
    """Classical two-class MCC; 0.0 on a zero denominator."""
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(den))


def mcc_per_class(cm, k: int) -> float:
    """One-vs-rest MCC of class ``k``."""
    cm = np.asarray(cm, dtype=np.int64)
    if not 0 <= k < cm.shape[0]:
        raise DomainError(f"class {k} out of range")
    tp = int(cm[k, k])
    fn = int(cm[k].sum()) - tp
    fp = int(cm[:, k].sum()) - tp
    tn = int(cm.sum()) - tp - fn - fp
    return binary_mcc(tp, fn, fp, tn)


@dataclass
class FoldRecord:
    held_out: str
    n_test: int
    confusion: np.ndarray
    mcc: float | None


@dataclass
class EvalReport:
    confusion: np.ndarray
    overall_mcc: float
    per_class_mcc: list[float]
    class_names: list[str] = field(default_factory=list)
    folds: list[FoldRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, preds, labels, class_names, **kw) -> "EvalReport":
        cm = confusion(preds, labels, len(class_names))
        return cls.from_confusion(cm, class_names, **kw)

    @classmethod
    def from_confusion(cls, cm, class_names, **kw) -> "EvalReport":
        overall = mcc_multiclass(cm) if cm.sum() else 0.0
        per_class = [mcc_per_class(cm, k) for k in range(cm.shape[0])]
        return cls(cm, overall, per_class, list(class_names), **kw)

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "confusion": self.confusion.tolist(),
            "overall_mcc": self.overall_mcc,
            "per_class_mcc": dict(zip(self.class_names, self.per_class_mcc)),
            "folds": [{"held_out": f.held_out, "n_test": f.n_test,
                       "confusion": f.confusion.tolist(), "mcc": f.mcc} for f in self.folds],
            "meta": self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        folds = [FoldRecord(f["held_out"], f["n_test"], np.array(f["confusion"]), f["mcc"])
                 for f in d.get("folds", [])]
        names = d["class_names"]
        return cls(np.array(d["confusion"], dtype=np.int64), d["overall_mcc"],
                   [d["per_class_mcc"][n] for n in names], names, folds, d.get("meta", {}))

    def summary(self) -> str:
        lines = [f"overall MCC {self.overall_mcc:.4f}"]
        lines += [f"  {n:<20s} {m:.4f}" for n, m in zip(self.class_names, self.per_class_mcc)]
        return "\n".join(lines)


def evaluate(params: ModelParams, dataset: Dataset) -> EvalReport:
    preds = predict(dataset.readings, params)
    return EvalReport.from_predictions(preds, dataset.labels, dataset.class_names)


def loao_folds(dataset: Dataset):
    """Yield (animal_id, train_index, test_index), one fold per animal."""
    animals = dataset.animals()
    if len(animals) < 2:
        raise ConfigurationError("leave-one-animal-out needs at least two animals")
    for animal in animals:
        test = dataset.animal_ids == animal
        yield animal, np.flatnonzero(~test), np.flatnonzero(test)


def loao_cv(dataset: Dataset, hyper: Hyper, dims: Dims, variant=Variant.NONLINEAR) -> EvalReport:
    """Leave-one-animal-out CV; held-out predictions are pooled into one confusion matrix."""
    variant = Variant.parse(variant)
    preds = np.full(len(dataset), -1, dtype=np.int64)
    folds = []
    for animal, train_idx, test_idx in loao_folds(dataset):
        params, history = train(dataset.subset(train_idx), hyper, dims, variant)
        fold_preds = predict(dataset.readings[test_idx], params)
        preds[test_idx] = fold_preds
        cm = confusion(fold_preds, dataset.labels[test_idx], dataset.C)
        folds.append(FoldRecord(animal, len(test_idx), cm, mcc_multiclass(cm)))
        log.info("fold %s: n=%d mcc=%.4f final loss=%.4f", animal, len(test_idx),
                 folds[-1].mcc, history[-1] if len(history) else float("nan"))
    return EvalReport.from_predictions(
        preds, dataset.labels, dataset.class_names, folds=folds,
        meta={"scheme": "leave-one-animal-out", "variant": variant.name.lower()})


def cross_dataset_eval(train_ds: Dataset, test_ds: Dataset, hyper: Hyper, dims: Dims,
                       variant=Variant.NONLINEAR) -> EvalReport:
    """Train once on ``train_ds`` and evaluate every segment of ``test_ds``."""
    variant = Variant.parse(variant)
    if train_ds.C != test_ds.C:
        raise ConfigurationError(f"class counts differ: {train_ds.C} vs {test_ds.C}")
    if train_ds.N != test_ds.N:
        raise ConfigurationError(f"segment lengths differ: {train_ds.N} vs {test_ds.N}")
    params, _ = train(train_ds, hyper, dims, variant)
    report = evaluate(params, test_ds)
    report.meta = {"scheme": "cross-dataset", "variant": variant.name.lower(),
                   "train": sorted(set(train_ds.dataset_ids.tolist())),
                   "test": sorted(set(test_ds.dataset_ids.tolist()))}
    return report
