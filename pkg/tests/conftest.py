import numpy as np
import pytest

from collarnet.core import Dims, NormStats, Variant, init_model


def random_params(rng, dims, variant=Variant.NONLINEAR, scale=0.5):
    """Model with random taps, weights, norm stats and gammas (not just the init)."""
    p = init_model(dims, int(rng.integers(2**31)), variant,
                   NormStats(rng.normal(0, 50, 3), rng.uniform(0.002, 0.05, 3)))
    vals = {k: v + rng.normal(0, scale, v.shape) for k, v in p.trainable().items()}
    vals["gamma_logit"] = rng.normal(1.0, 1.5, 3)
    return p.with_trainable(vals)


def random_dims(rng, max_N=64, max_K=8):
    K1, K2 = (int(k) for k in rng.integers(1, max_K + 1, 2))
    N = int(rng.integers(K1 + K2 - 1, max_N + 1))
    return Dims(N=N, K1=K1, K2=K2, L=int(rng.integers(1, 8)), C=int(rng.integers(2, 7)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_small():
    """A quick 4-animal version of the default synthetic dataset."""
    from dataclasses import replace
    from collarnet.synthgen import default_config, gen_dataset
    cfg = replace(default_config(seed=3), animals=4, segments_per_class_per_animal=(12, 6, 10, 6, 4))
    return gen_dataset(cfg)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
