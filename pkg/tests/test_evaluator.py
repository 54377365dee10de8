import itertools

import numpy as np
import pytest

from collarnet.core import ConfigurationError, Dataset, Dims, DomainError
from collarnet.evaluator import (
    EvalReport, binary_mcc, confusion, cross_dataset_eval, evaluate, loao_cv, loao_folds,
    mcc_multiclass, mcc_per_class,
)
from collarnet.trainer import Hyper, train


def classic_mcc(tp, fn, fp, tn):
    return (tp * tn - fp * fn) / np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))


class TestConfusion:
    def test_identity(self):
        assert np.array_equal(confusion([0, 1, 2], [0, 1, 2], 3), np.eye(3, dtype=int))

    def test_empty(self):
        assert not confusion([], [], 4).any()

    def test_hand_tally(self):
        cm = confusion([0, 0, 1], [0, 1, 1], 2)
        assert cm.tolist() == [[1, 0], [1, 1]]

    def test_errors(self):
        with pytest.raises(DomainError):
            confusion([0, 2], [0, 1], 2)
        with pytest.raises(DomainError):
            confusion([0], [0, 1], 2)
        with pytest.raises(DomainError):
            confusion([-1], [0], 2)


class TestMcc:
    def test_perfect(self):
        assert mcc_multiclass(np.diag([5, 3, 9])) == 1.0
        assert mcc_multiclass(np.eye(2, dtype=int)) == 1.0

    def test_binary_example(self):
        assert mcc_multiclass(np.array([[2, 1], [1, 2]])) == pytest.approx(1 / 3, abs=1e-15)

    def test_matches_binary_formula_exhaustive(self):
        for a, b, c, d in itertools.product(range(7), repeat=4):
            cm = np.array([[a, b], [c, d]])  # rows true, class 0 = positive
            tp, fn, fp, tn = a, b, c, d
            if (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn) == 0:
                continue
            assert mcc_multiclass(cm) == pytest.approx(classic_mcc(tp, fn, fp, tn), abs=1e-12)

    def test_degenerate(self):
        assert mcc_multiclass(np.array([[5, 0], [0, 0]])) == 0.0
        assert mcc_multiclass(np.array([[3, 2], [0, 0]])) == 0.0
        with pytest.raises(DomainError):
            mcc_multiclass(np.zeros((2, 2), dtype=int))
        with pytest.raises(DomainError):
            mcc_multiclass(np.zeros((2, 3), dtype=int))

    def test_permutation_and_transpose(self, rng):
        for _ in range(100):
            C = int(rng.integers(2, 6))
            cm = rng.integers(0, 20, (C, C))
            perm = rng.permutation(C)
            assert mcc_multiclass(cm[perm][:, perm]) == pytest.approx(mcc_multiclass(cm), abs=1e-12)
            assert mcc_multiclass(cm.T) == pytest.approx(mcc_multiclass(cm), abs=1e-12)
        perm = [2, 0, 1]
        assert mcc_multiclass(np.diag([4, 5, 6])[perm][:, perm]) == 1.0

    def test_random_bounds(self, rng):
        for _ in range(10_000):
            C = int(rng.integers(2, 7))
            cm = rng.integers(0, 10, (C, C)) * (rng.random((C, C)) < 0.7)
            if cm.sum() == 0:
                continue
            assert -1.0 <= mcc_multiclass(cm) <= 1.0

    def test_random_predictions_near_zero(self, rng):
        labels = rng.integers(0, 4, 200_000)
        preds = rng.integers(0, 4, 200_000)
        assert abs(mcc_multiclass(confusion(preds, labels, 4))) < 0.01

    def test_per_class(self):
        cm = np.array([[5, 1, 0], [2, 7, 1], [0, 3, 6]])
        # class 1 vs rest, collapsed by hand
        tp, fn, fp = 7, 3, 4
        tn = cm.sum() - tp - fn - fp
        collapsed = np.array([[tp, fn], [fp, tn]])
        assert mcc_per_class(cm, 1) == pytest.approx(mcc_multiclass(collapsed), abs=1e-12)
        assert mcc_per_class(np.diag([3, 4]), 0) == 1.0
        absent = np.array([[4, 0, 1], [0, 0, 0], [1, 0, 4]])
        assert mcc_per_class(absent, 1) == 0.0
        with pytest.raises(DomainError):
            mcc_per_class(cm, 3)

    def test_binary_helper(self):
        assert binary_mcc(3, 0, 0, 3) == 1.0
        assert binary_mcc(0, 0, 0, 5) == 0.0


class TestReport:
    def test_json_round_trip(self):
        cm = np.array([[5, 1], [2, 7]])
        r = EvalReport.from_confusion(cm, ["a", "b"], meta={"scheme": "x"})
        back = EvalReport.from_json(r.to_json())
        assert np.array_equal(back.confusion, cm)
        assert back.overall_mcc == r.overall_mcc and back.per_class_mcc == r.per_class_mcc
        assert back.meta == {"scheme": "x"}
        assert "overall MCC" in r.summary()


def _tiny(rng, animals=3, per=6, N=24, shift=0.0):
    r = rng.normal(0, 15, (animals * per * 2, 3, N))
    labels = np.tile([0, 1], animals * per)
    r[labels == 1, 2] += 120
    r += shift
    ids = np.repeat([f"a{i}" for i in range(animals)], per * 2)
    return Dataset(np.rint(r).astype(np.int32), labels, ids, ["s"] * len(labels), ["lo", "hi"])


class TestHarness:
    def test_folds_partition(self, rng):
        ds = _tiny(rng)
        folds = list(loao_folds(ds))
        assert [f[0] for f in folds] == ["a0", "a1", "a2"]
        seen = np.concatenate([f[2] for f in folds])
        assert sorted(seen.tolist()) == list(range(len(ds)))
        for _, tr, te in folds:
            assert not set(ds.animal_ids[tr]) & set(ds.animal_ids[te])

    def test_single_animal(self, rng):
        ds = _tiny(rng, animals=1)
        with pytest.raises(ConfigurationError):
            loao_cv(ds, Hyper(iterations=1), Dims(N=24, K1=2, K2=2, C=2))

    def test_loao_pooling(self, rng):
        ds = _tiny(rng)
        h = Hyper(learning_rate=0.02, batch_size=16, iterations=150)
        rep = loao_cv(ds, h, Dims(N=24, K1=2, K2=2, L=3, C=2))
        assert rep.confusion.sum() == len(ds) and len(rep.folds) == 3
        assert sum(f.confusion for f in rep.folds).tolist() == rep.confusion.tolist()
        assert rep.overall_mcc > 0.9

    def test_cross_dataset_same_data(self, rng):
        ds = _tiny(rng)
        h = Hyper(learning_rate=0.02, batch_size=16, iterations=100)
        d = Dims(N=24, K1=2, K2=2, L=3, C=2)
        rep = cross_dataset_eval(ds, ds, h, d)
        params, _ = train(ds, h, d)
        assert np.array_equal(rep.confusion, evaluate(params, ds).confusion)
        assert rep.meta["scheme"] == "cross-dataset"

    def test_cross_dataset_mismatch(self, rng):
        a = _tiny(rng)
        b = Dataset(a.readings, a.labels, a.animal_ids, a.dataset_ids, ["x", "y", "z"])
        with pytest.raises(ConfigurationError):
            cross_dataset_eval(a, b, Hyper(iterations=1), Dims(N=24, K1=2, K2=2, C=2))
