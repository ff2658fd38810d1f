import numpy as np
import pytest

from treeval import Dataset, StoppingRule, fit_cart


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240915))


def make_dataset(rng, n=15, p=3, signal=0.0):
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n) + signal * (X[:, 0] <= 0)
    return Dataset.from_arrays(X, y)


def fitted_instance(rng, n=14, p=2, lam=0.0, max_level=3, min_splits=1, max_tries=60):
    """Random dataset plus a pruned tree that kept at least ``min_splits``
    splits; redraws until it finds one."""
    stop = StoppingRule(max_level, 1, 0.0)
    for _ in range(max_tries):
        d = make_dataset(rng, n=n, p=p)
        _, tree = fit_cart(d, d.y, stop, lam)
        if len(tree.internal_ids()) >= min_splits:
            return d, tree
    raise RuntimeError("could not build a non-trivial fitted instance")
