import numpy as np
import pytest
from sklearn.base import clone

from treeval import CartRegressor


@pytest.fixture
def data(rng):
    X = rng.standard_normal((60, 3))
    y = 2.0 * (X[:, 0] <= 0) + 0.5 * rng.standard_normal(60)
    return X, y


class TestEstimatorApi:
    def test_get_set_params_round_trip(self):
        est = CartRegressor(lam=3.0, max_level=2)
        params = est.get_params()
        assert params["lam"] == 3.0
        est2 = CartRegressor().set_params(**params)
        assert est2.get_params() == params

    def test_clone(self):
        est = CartRegressor(lam=1.0, min_node_size=2)
        c = clone(est)
        assert c.get_params() == est.get_params()

    def test_fit_predict_reduces_error(self, data):
        X, y = data
        est = CartRegressor(lam=1.0, max_level=2).fit(X, y)
        pred = est.predict(X)
        assert ((y - pred) ** 2).mean() < ((y - y.mean()) ** 2).mean()
        assert est.score(X, y) > 0.3

    def test_predict_validates_width(self, data):
        X, y = data
        est = CartRegressor().fit(X, y)
        with pytest.raises(ValueError):
            est.predict(X[:, :2])

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            CartRegressor().predict(np.zeros((2, 2)))

    def test_rejects_negative_lambda(self, data):
        X, y = data
        with pytest.raises(ValueError):
            CartRegressor(lam=-1.0).fit(X, y)


class TestEstimatorInference:
    def test_split_test_results(self, data):
        X, y = data
        est = CartRegressor(lam=1.0).fit(X, y)
        for sid in est.split_ids():
            res = est.test_split(sid, sigma=0.5)
            assert 0.0 <= res.p_value <= 1.0
            # the interval covers the mean parameter, not the statistic,
            # so only its ordering is guaranteed
            assert res.ci_lo <= res.ci_hi
            assert res.kind == "sibling"
        root_res = est.test_split(est.tree_.root_id, sigma=0.5)
        assert root_res.p_value < 0.01  # strong signal at the root split

    def test_region_test(self, data):
        X, y = data
        est = CartRegressor(lam=1.0).fit(X, y)
        rid = est.region_ids()[1]
        res = est.test_region(rid, sigma=0.5)
        assert res.kind == "region"
        assert res.support.contains(res.statistic)

    def test_estimated_sigma_flagged(self, data):
        X, y = data
        est = CartRegressor(lam=1.0).fit(X, y)
        res = est.test_split(est.split_ids()[0])
        assert res.sigma_estimated
        assert res.sigma > 0

    def test_summary_covers_splits_and_regions(self, data):
        X, y = data
        est = CartRegressor(lam=1.0, max_level=2).fit(X, y)
        out = est.summary(sigma=0.5)
        kinds = [r.kind for r in out]
        assert kinds.count("sibling") == len(est.split_ids())
        assert kinds.count("region") == len(est.region_ids())

    def test_tree_json_schema(self, data):
        X, y = data
        est = CartRegressor(lam=1.0).fit(X, y)
        blob = est.tree_json()
        assert blob["schema"] == "treeval/tree/v1"
        assert blob["lambda"] == 1.0
