"""Scikit-learn style front end for the private protocols.

Estimators accept either pooled arrays plus a ``groups`` vector mapping rows
to users (the usual sklearn calling convention) or a prebuilt Dataset.  After
``fit`` the sparse coefficient vector is in ``coef_`` and the protocol's
communication/budget accounting in ``transcript_``.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import Dataset, UserShard
from .protocols import (
    ProtocolConfig,
    multi_round_slr,
    sparse_mean,
    two_round_slr,
)
from .selectors import SelectorConfig


def as_dataset(X, y=None, groups=None, min_users=1) -> Dataset:
    """Validate pooled (X, y, groups) input and shard it by user label.

    X may already be a Dataset, in which case y and groups must be omitted.
    Without groups every row becomes its own user (item-level data).
    """
    if isinstance(X, Dataset):
        if y is not None or groups is not None:
            raise ValueError("y/groups make no sense with a prebuilt Dataset")
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-d, got shape {X.shape}")
    n_rows, d = X.shape
    if y is None:
        y = np.zeros(n_rows)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_rows:
        raise ValueError(f"X has {n_rows} rows but y has {y.shape[0]} entries")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")

    if groups is None:
        member_lists = [[i] for i in range(n_rows)]
    else:
        groups = np.asarray(groups).ravel()
        if groups.shape[0] != n_rows:
            raise ValueError("groups must have one label per row")
        order: dict = {}
        member_lists = []
        for i, g in enumerate(groups):
            key = g.item() if hasattr(g, "item") else g
            if key not in order:
                order[key] = len(member_lists)
                member_lists.append([])
            member_lists[order[key]].append(i)

    if len(member_lists) < min_users:
        raise ValueError(f"need at least {min_users} users, got {len(member_lists)}")
    shards = tuple(
        UserShard(X[idx], y[idx], uid) for uid, idx in enumerate(member_lists)
    )
    return Dataset(shards, d, "external")


class _ProtocolEstimator(BaseEstimator):
    """Shared plumbing: parameter bundling and the fitted attributes."""

    _default_half_range = 1.0

    def _protocol_config(self) -> ProtocolConfig:
        selector = SelectorConfig(
            method=self.selector_method,
            screen_size=self.screen_size,
            lambda_rule=self.lambda_rule,
            lambda_value=self.lambda_value,
            scad_a=self.scad_a,
        )
        half = self.half_range
        if half is None:
            half = self._default_half_range
        return ProtocolConfig(
            epsilon=self.epsilon,
            threshold=self.threshold,
            alpha=self.alpha,
            s_target=self.s_target,
            radius=self.radius,
            radius_scale=self.radius_scale,
            half_range=half,
            selector=selector,
            local_fit=self.local_fit,
            iterations=getattr(self, "iterations", None),
            tree_hashes=self.tree_hashes,
            tree_width=self.tree_width,
        )

    def _finish(self, estimate, transcript, d):
        self.coef_ = estimate.beta
        self.selected_ = list(estimate.selected)
        self.transcript_ = transcript
        self.diagnostics_ = estimate.diagnostics
        self.n_features_in_ = d
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise RuntimeError("estimator is not fitted yet, call fit first")


class TwoRoundSLR(_ProtocolEstimator, RegressorMixin):
    """Sparse linear regression under a per-user local privacy budget,
    two estimation rounds after the selection sweep.

    Parameters mirror the protocol configuration; ``seed`` fixes all protocol
    randomness so a fit is reproducible.
    """

    def __init__(self, epsilon=4.0, threshold=None, alpha=None, s_target=8,
                 radius=None, radius_scale=1.0, half_range=None,
                 selector_method="lasso", screen_size=64, lambda_rule="universal",
                 lambda_value=None, scad_a=3.7, local_fit="ols",
                 tree_hashes=None, tree_width=None, seed=0):
        self.epsilon = epsilon
        self.threshold = threshold
        self.alpha = alpha
        self.s_target = s_target
        self.radius = radius
        self.radius_scale = radius_scale
        self.half_range = half_range
        self.selector_method = selector_method
        self.screen_size = screen_size
        self.lambda_rule = lambda_rule
        self.lambda_value = lambda_value
        self.scad_a = scad_a
        self.local_fit = local_fit
        self.tree_hashes = tree_hashes
        self.tree_width = tree_width
        self.seed = seed

    def fit(self, X, y=None, groups=None):
        dataset = as_dataset(X, y, groups, min_users=4)
        estimate, transcript = two_round_slr(dataset, self._protocol_config(), self.seed)
        return self._finish(estimate, transcript, dataset.d)

    def predict(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must have {self.n_features_in_} columns")
        return X @ self.coef_


class MultiRoundSLR(TwoRoundSLR):
    """Sparse linear regression via private accelerated gradient descent."""

    _default_half_range = 3.0

    def __init__(self, epsilon=4.0, threshold=None, alpha=None, s_target=8,
                 radius=None, radius_scale=1.0, half_range=None,
                 selector_method="lasso", screen_size=64, lambda_rule="universal",
                 lambda_value=None, scad_a=3.7, local_fit="ols",
                 tree_hashes=None, tree_width=None, seed=0, iterations=None):
        super().__init__(
            epsilon=epsilon, threshold=threshold, alpha=alpha, s_target=s_target,
            radius=radius, radius_scale=radius_scale, half_range=half_range,
            selector_method=selector_method, screen_size=screen_size,
            lambda_rule=lambda_rule, lambda_value=lambda_value, scad_a=scad_a,
            local_fit=local_fit, tree_hashes=tree_hashes, tree_width=tree_width,
            seed=seed,
        )
        self.iterations = iterations

    def fit(self, X, y=None, groups=None):
        dataset = as_dataset(X, y, groups, min_users=4)
        estimate, transcript = multi_round_slr(dataset, self._protocol_config(), self.seed)
        return self._finish(estimate, transcript, dataset.d)


class SparseMeanEstimator(_ProtocolEstimator):
    """Private estimation of a sparse mean vector from feature-only shards.

    ``fit(X, groups=...)`` ignores y; the estimated mean lands in ``coef_``.
    """

    def __init__(self, epsilon=4.0, threshold=None, alpha=None, s_target=8,
                 radius=None, radius_scale=1.0, half_range=None,
                 tree_hashes=None, tree_width=None, seed=0):
        self.epsilon = epsilon
        self.threshold = threshold
        self.alpha = alpha
        self.s_target = s_target
        self.radius = radius
        self.radius_scale = radius_scale
        self.half_range = half_range
        self.tree_hashes = tree_hashes
        self.tree_width = tree_width
        self.seed = seed

    def _protocol_config(self) -> ProtocolConfig:
        half = self.half_range if self.half_range is not None else 1.0
        return ProtocolConfig(
            epsilon=self.epsilon,
            threshold=self.threshold,
            alpha=self.alpha,
            s_target=self.s_target,
            radius=self.radius,
            radius_scale=self.radius_scale,
            half_range=half,
            tree_hashes=self.tree_hashes,
            tree_width=self.tree_width,
        )

    def fit(self, X, y=None, groups=None):
        dataset = as_dataset(X, None, groups, min_users=4)
        estimate, transcript = sparse_mean(dataset, self._protocol_config(), self.seed)
        return self._finish(estimate, transcript, dataset.d)
