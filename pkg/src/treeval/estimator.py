"""Scikit-learn style front door.

``CartRegressor`` is a plain fit/predict estimator (grow, then prune at
a fixed complexity) whose fitted tree carries the selective-inference
methods: exact p-values and confidence intervals for any split or
region of the tree it actually produced.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cart import StoppingRule, fit_cart, predict as _tree_predict, tree_to_dict
from .dataset import Dataset
from .inference import InferenceResult, analyze_tree, estimate_sigma, region_inference, split_inference


class CartRegressor(RegressorMixin, BaseEstimator):
    """CART regression tree with exact post-selection inference.

    Parameters
    ----------
    lam : float
        Cost-complexity pruning threshold (0 keeps the fully grown tree).
    max_level : int
        Maximum region depth; the root is level 0.
    min_node_size : int
        Minimum number of observations in each child of a split.
    min_gain : float
        Smallest split gain worth growing through.
    """

    def __init__(self, lam: float = 0.0, max_level: int = 3, min_node_size: int = 1, min_gain: float = 0.0):
        self.lam = lam
        self.max_level = max_level
        self.min_node_size = min_node_size
        self.min_gain = min_gain

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_min_samples=2)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.dataset_ = Dataset.from_arrays(X, y)
        stop = StoppingRule(self.max_level, self.min_node_size, self.min_gain)
        self.full_tree_, self.tree_ = fit_cart(self.dataset_, self.dataset_.y, stop, self.lam)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features but the tree was fit with {self.n_features_in_}"
            )
        return _tree_predict(self.tree_, X)

    # -- selective inference on the fitted tree --------------------------

    def _sigma(self, sigma):
        if sigma is not None:
            return float(sigma), False
        return estimate_sigma(self.dataset_.y), True

    def split_ids(self) -> list[int]:
        check_is_fitted(self, "tree_")
        return sorted(self.tree_.internal_ids())

    def region_ids(self) -> list[int]:
        check_is_fitted(self, "tree_")
        return sorted(self.tree_.regions)

    def test_split(self, split_id: int, sigma: float | None = None, alpha: float = 0.05) -> InferenceResult:
        check_is_fitted(self, "tree_")
        s, est = self._sigma(sigma)
        return split_inference(self.dataset_, self.tree_, split_id, s, alpha, sigma_estimated=est)

    def test_region(
        self,
        region_id: int,
        sigma: float | None = None,
        alpha: float = 0.05,
        null_value: float = 0.0,
        mode: str = "identity",
        budget: int | None = None,
    ) -> InferenceResult:
        check_is_fitted(self, "tree_")
        s, est = self._sigma(sigma)
        return region_inference(
            self.dataset_, self.tree_, region_id, s, alpha,
            null_value=null_value, mode=mode, budget=budget, sigma_estimated=est,
        )

    def summary(
        self, sigma: float | None = None, alpha: float = 0.05, mode: str = "identity"
    ) -> list[InferenceResult]:
        check_is_fitted(self, "tree_")
        s, est = self._sigma(sigma)
        return analyze_tree(self.dataset_, self.tree_, s, alpha, mode=mode, sigma_estimated=est)

    def tree_json(self) -> dict:
        check_is_fitted(self, "tree_")
        return tree_to_dict(self.tree_)
