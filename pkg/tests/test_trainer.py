import math
from dataclasses import replace

import numpy as np
import pytest

from collarnet.core import (
    ConfigurationError, Dataset, Dims, DomainError, NormStats, NumericError, Variant, init_model,
    params_equal,
)
from collarnet.trainer import (
    AdamState, Hyper, PROFILES, adam_step, backward, finite_diff_grad, forward_loss, gradcheck,
    predict, profile, relative_errors, train, write_loss_csv,
)

from conftest import random_params


def _problem(rng, dims, variant=Variant.NONLINEAR, B=4):
    p = random_params(rng, dims, variant, scale=0.3)
    p = p.with_trainable({"b1": rng.normal(0, 0.5, dims.L)})
    readings = rng.integers(-60, 61, (B, 3, dims.N))
    p = replace(p, norm=NormStats(rng.normal(0, 5, 3), rng.uniform(0.05, 0.2, 3)))
    labels = rng.integers(0, dims.C, B)
    return p, readings, labels


class TestLoss:
    def test_uniform_logits(self):
        d = Dims(N=16, K1=2, K2=2, L=2, C=5)
        p = init_model(d, 0).with_trainable({"W2": np.zeros((5, 2))})
        loss, _ = forward_loss(np.zeros((3, 3, 16)), [0, 1, 4], p)
        assert loss == pytest.approx(math.log(5), abs=1e-15)

    def test_two_class_closed_form(self):
        d = Dims(N=16, K1=2, K2=2, L=1, C=2)
        p = init_model(d, 0).with_trainable(
            {"W1": np.zeros((1, 9)), "W2": np.zeros((2, 1)), "b2": np.array([1.0, 0.0])})
        loss, _ = forward_loss(np.zeros((1, 3, 16)), [0], p)
        assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-14)
        assert loss == pytest.approx(0.31326, abs=1e-5)

    def test_dominant_true_logit(self):
        d = Dims(N=16, K1=2, K2=2, L=1, C=3)
        p = init_model(d, 0).with_trainable(
            {"W1": np.zeros((1, 9)), "W2": np.zeros((3, 1)), "b2": np.array([0.0, 200.0, 0.0])})
        loss, _ = forward_loss(np.zeros((2, 3, 16)), [1, 1], p)
        assert 0 <= loss < 1e-80

    def test_errors(self):
        p = init_model(Dims(N=16, K1=2, K2=2, C=3), 0)
        with pytest.raises(DomainError):
            forward_loss(np.zeros((1, 3, 16)), [3], p)
        with pytest.raises(DomainError):
            forward_loss(np.zeros((0, 3, 16)), [], p)
        bad = p.with_trainable({"b2": np.array([np.inf, 0, 0])})
        with pytest.raises(NumericError):
            forward_loss(np.zeros((1, 3, 16)), [0], bad)

    def test_permutation_invariant(self, rng):
        p, r, y = _problem(rng, Dims(N=20, K1=3, K2=3, L=3, C=3), B=6)
        perm = rng.permutation(6)
        a, _ = forward_loss(r, y, p)
        b, _ = forward_loss(r[perm], y[perm], p)
        assert a == pytest.approx(b, rel=1e-13)

    def test_batch_matches_single_segment_featurizer(self, rng):
        from collarnet.featurizer import features
        p, r, y = _problem(rng, Dims(N=24, K1=4, K2=3, L=4, C=3), B=5)
        _, cache = forward_loss(r, y, p)
        for i in range(5):
            f, fc = features(r[i], p)
            assert np.allclose(cache.f[i], f, rtol=1e-12, atol=1e-14)
            assert np.allclose(cache.logits[i], fc.logits, rtol=1e-12, atol=1e-14)


class TestBackward:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_reference_configuration(self, rng, variant):
        # N=32, K1=K2=4, L=3, C=3, batch 4, eps 1e-4
        p, r, y = _problem(rng, Dims(N=32, K1=4, K2=4, L=3, C=3), variant, B=4)
        _, cache = forward_loss(r, y, p)
        errs = relative_errors(backward(p, cache), finite_diff_grad(r, y, p, eps=1e-4))
        assert max(errs.values()) < 1e-5, errs

    @pytest.mark.parametrize("seed", range(6))
    def test_gradcheck_random(self, seed):
        for v in Variant:
            res = gradcheck(seed, v)
            assert res.max_rel_error < 1e-5
            assert set(res.per_param) == set(init_model(Dims(N=16, K1=2, K2=2), 0, v).trainable_names)

    def test_zero_upper_layers_cut_feature_gradients(self, rng):
        d = Dims(N=20, K1=3, K2=3, L=3, C=3)
        p, r, y = _problem(rng, d)
        p = p.with_trainable({"W1": np.zeros((3, 9))})
        _, cache = forward_loss(r, y, p)
        g = backward(p, cache)
        for k in ("gamma_logit", "h1", "h2"):
            assert not g[k].any()

    def test_duplicated_batch(self, rng):
        p, r, y = _problem(rng, Dims(N=20, K1=3, K2=2, L=3, C=3), B=3)
        _, c1 = forward_loss(r, y, p)
        _, c2 = forward_loss(np.concatenate([r, r]), np.concatenate([y, y]), p)
        g1, g2 = backward(p, c1), backward(p, c2)
        for k in g1:
            assert np.allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_finite_diff_eps(self, rng):
        p, r, y = _problem(rng, Dims(N=16, K1=2, K2=2, L=2, C=2), B=2)
        with pytest.raises(DomainError):
            finite_diff_grad(r, y, p, eps=0)

    def test_finite_diff_on_quadratic_surrogate(self):
        # with everything but b2 frozen at zero, the loss is smooth in b2 alone
        d = Dims(N=16, K1=2, K2=2, L=1, C=2)
        p = init_model(d, 0).with_trainable({"W1": np.zeros((1, 9)), "W2": np.zeros((2, 1)),
                                             "b2": np.array([0.3, -0.2])})
        g = finite_diff_grad(np.zeros((1, 3, 16)), [0], p, eps=1e-5)
        e = np.exp([0.3, -0.2])
        prob = e / e.sum()
        assert np.allclose(g["b2"], prob - [1, 0], atol=1e-9)

    def test_float32_gradients_close(self, rng):
        p, r, y = _problem(rng, Dims(N=24, K1=3, K2=3, L=3, C=3))
        _, c64 = forward_loss(r, y, p, np.float64)
        _, c32 = forward_loss(r, y, p, np.float32)
        g64, g32 = backward(p, c64), backward(p, c32)
        for k in g64:
            assert g32[k].dtype == np.float32
            assert np.allclose(g32[k], g64[k], rtol=1e-3, atol=1e-4)


class TestAdam:
    def _theta(self):
        return {"gamma_logit": np.array([2.0, 2.0, 2.0]), "W1": np.array([[1.0, -1.0]])}

    def test_zero_gradient_no_decay(self):
        th = self._theta()
        h = Hyper(learning_rate=0.1, weight_decay=0)
        new, st = adam_step(th, {k: np.zeros_like(v) for k, v in th.items()},
                            AdamState.zeros_like(th), h)
        for k in th:
            assert np.array_equal(new[k], th[k])
        assert st.step == 1

    def test_first_step(self):
        th = {"W1": np.array([0.5])}
        h = Hyper(learning_rate=0.1, weight_decay=0)
        new, _ = adam_step(th, {"W1": np.array([1.0])}, AdamState.zeros_like(th), h)
        assert new["W1"][0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8), abs=1e-15)

    def test_decay_skips_gamma(self):
        th = self._theta()
        h = Hyper(learning_rate=0.1, weight_decay=0.5)
        zero = {k: np.zeros_like(v) for k, v in th.items()}
        new, _ = adam_step(th, zero, AdamState.zeros_like(th), h)
        assert np.array_equal(new["gamma_logit"], th["gamma_logit"])
        assert np.all(np.abs(new["W1"]) < np.abs(th["W1"]))

    def test_deterministic_and_pure(self):
        th = self._theta()
        g = {k: np.ones_like(v) for k, v in th.items()}
        st = AdamState.zeros_like(th)
        h = Hyper(learning_rate=0.01)
        a, sa = adam_step(th, g, st, h)
        b, sb = adam_step(th, g, st, h)
        assert all(np.array_equal(a[k], b[k]) for k in th)
        assert st.step == 0 and np.array_equal(th["W1"], [[1.0, -1.0]])

    def test_hand_computed_two_steps(self):
        th = {"W1": np.array([1.0])}
        h = Hyper(learning_rate=0.01, weight_decay=0.1)
        st = AdamState.zeros_like(th)
        th1, st = adam_step(th, {"W1": np.array([0.4])}, st, h)
        th2, st = adam_step(th1, {"W1": np.array([-0.2])}, st, h)
        # oracle: scalar re-implementation
        p, m, v = 1.0, 0.0, 0.0
        for t, g in ((1, 0.4), (2, -0.2)):
            g = g + 0.1 * p
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert th2["W1"][0] == pytest.approx(p, abs=1e-15)

    def test_small_step_decreases_loss(self, rng):
        for _ in range(5):
            p, r, y = _problem(rng, Dims(N=20, K1=3, K2=3, L=3, C=3), B=5)
            loss0, cache = forward_loss(r, y, p)
            th = p.trainable()
            new, _ = adam_step(th, backward(p, cache), AdamState.zeros_like(th),
                               Hyper(learning_rate=1e-6, weight_decay=0))
            loss1, _ = forward_loss(r, y, p.with_trainable(new))
            assert loss1 < loss0


class TestHyper:
    def test_profiles(self):
        h5, d5 = profile("5class")
        assert (h5.learning_rate, h5.weight_decay, h5.batch_size, h5.iterations) == (2e-4, 2e-3, 1024, 60000)
        assert (d5.K1, d5.K2, d5.L, d5.C) == (8, 8, 6, 5)
        h6, d6 = profile("6class")
        assert (h6.learning_rate, h6.weight_decay, h6.batch_size, h6.iterations) == (5e-4, 4e-3, 1024, 40000)
        assert (d6.K1, d6.K2, d6.L, d6.C) == (8, 8, 7, 6)
        assert Hyper() == PROFILES["5class"][0]
        assert Hyper().precision == "float32"

    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0),
                                    dict(adam_beta1=1.0), dict(precision="float16"),
                                    dict(weight_decay=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            Hyper(**kw)

    def test_unknown_profile(self):
        with pytest.raises(ConfigurationError):
            profile("7class")


def _separable(rng, per_class=40, N=32):
    """Two classes differing only in their x-axis mean."""
    r = rng.normal(0, 20, (2 * per_class, 3, N))
    r[:per_class, 0] += 150
    labels = [0] * per_class + [1] * per_class
    animals = [f"a{i % 4}" for i in range(2 * per_class)]
    return Dataset(np.rint(r).astype(np.int32), labels, animals, ["t"] * len(labels), ["up", "down"])


class TestTrain:
    def test_separable_problem(self, rng):
        ds = _separable(rng)
        h = Hyper(learning_rate=0.01, weight_decay=0, batch_size=32, iterations=2000, precision="float64")
        p, hist = train(ds, h, Dims(N=32, K1=4, K2=4, L=4, C=2), Variant.NONLINEAR)
        assert np.all((predict(ds.readings, p) == ds.labels))
        assert hist[-50:].mean() < 0.05
        assert np.all((p.gamma > 0) & (p.gamma < 1))

    def test_reproducible(self, rng):
        ds = _separable(rng, per_class=10)
        h = Hyper(learning_rate=0.01, batch_size=8, iterations=30)
        d = Dims(N=32, K1=3, K2=3, L=2, C=2)
        a, ha = train(ds, h, d)
        b, hb = train(ds, h, d)
        assert params_equal(a, b) and np.array_equal(ha, hb)

    def test_callback_and_loss_csv(self, rng, tmp_path):
        ds = _separable(rng, per_class=6)
        seen = []
        _, hist = train(ds, Hyper(learning_rate=0.01, batch_size=4, iterations=5),
                        Dims(N=32, K1=2, K2=2, L=2, C=2), "linear", callback=lambda i, l: seen.append(i))
        assert seen == list(range(5))
        write_loss_csv(hist, tmp_path / "loss.csv")
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "iteration,loss" and len(lines) == 6
        assert float(lines[3].split(",")[1]) == hist[2]

    def test_mismatched_dims(self, rng):
        ds = _separable(rng, per_class=4)
        with pytest.raises(ConfigurationError):
            train(ds, Hyper(iterations=1), Dims(N=64, K1=2, K2=2, C=2))
        with pytest.raises(ConfigurationError):
            train(ds, Hyper(iterations=1), Dims(N=32, K1=2, K2=2, C=3))
