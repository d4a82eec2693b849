import numpy as np
import pytest

import causalmp as cm


@pytest.fixture(scope="session")
def small_synthetic():
    """One modest synthetic dataset shared by read-only tests."""
    return cm.generate_synthetic(cm.DgpSpec(n=400, d_x=15, seed=101))


@pytest.fixture(scope="session")
def fitted_conjugate(small_synthetic):
    dataset, _ = small_synthetic
    cfg = cm.ConjugateConfig()
    return cm.fit_outcome(cfg, dataset), cm.fit_propensity(cfg, dataset)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
