import numpy as np
import pytest
from sklearn.base import clone

from uldpreg.data import generate_independent, generate_sparse_mean
from uldpreg.estimators import MultiRoundSLR, SparseMeanEstimator, TwoRoundSLR, as_dataset


def pooled(dataset):
    X = np.vstack([s.X for s in dataset.shards])
    y = np.concatenate([s.y for s in dataset.shards])
    groups = np.concatenate([[s.user_id] * s.m for s in dataset.shards])
    return X, y, groups


class TestAsDataset:
    def test_groups_define_shards(self):
        X = np.arange(12, dtype=float).reshape(6, 2)
        y = np.arange(6, dtype=float)
        ds = as_dataset(X, y, groups=["a", "a", "b", "b", "b", "a"])
        assert ds.n == 2
        assert sorted(s.m for s in ds.shards) == [3, 3]

    def test_rows_become_users_without_groups(self):
        X = np.zeros((5, 3))
        ds = as_dataset(X, np.zeros(5))
        assert ds.n == 5 and all(s.m == 1 for s in ds.shards)

    def test_passthrough_dataset(self):
        ds, _ = generate_independent(5, 4, 3, 1, 0.5, 1.0, seed=0)
        assert as_dataset(ds) is ds
        with pytest.raises(ValueError):
            as_dataset(ds, groups=[1, 2])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            as_dataset(np.zeros(5), np.zeros(5))
        with pytest.raises(ValueError):
            as_dataset(np.zeros((4, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            as_dataset(np.zeros((4, 2)), np.zeros(4), groups=[1, 1])
        with pytest.raises(ValueError):
            as_dataset(np.full((3, 2), np.nan), np.zeros(3))

    def test_min_users_enforced(self):
        with pytest.raises(ValueError):
            as_dataset(np.zeros((3, 2)), np.zeros(3), groups=[1, 1, 1], min_users=2)


class TestTwoRoundEstimator:
    def test_fit_predict_on_grouped_arrays(self):
        ds, truth = generate_independent(60, 30, 16, 2, 0.6, 0.5, seed=1)
        X, y, groups = pooled(ds)
        est = TwoRoundSLR(epsilon=4.0, s_target=2, seed=3).fit(X, y, groups=groups)
        assert est.coef_.shape == (16,)
        assert est.n_features_in_ == 16
        pred = est.predict(X[:5])
        assert np.allclose(pred, X[:5] @ est.coef_)

    def test_fit_accepts_dataset(self):
        ds, _ = generate_independent(40, 30, 8, 1, 0.6, 0.5, seed=2)
        est = TwoRoundSLR(epsilon=2.0, seed=1).fit(ds)
        assert sorted(est.selected_) == est.selected_
        assert est.transcript_.rounds == 5  # 3 levels + 2

    def test_same_seed_reproducible(self):
        ds, _ = generate_independent(40, 30, 8, 1, 0.6, 0.5, seed=4)
        a = TwoRoundSLR(epsilon=2.0, seed=7).fit(ds)
        b = TwoRoundSLR(epsilon=2.0, seed=7).fit(ds)
        assert np.array_equal(a.coef_, b.coef_)

    def test_sklearn_param_interface(self):
        est = TwoRoundSLR(epsilon=2.5, s_target=4)
        params = est.get_params()
        assert params["epsilon"] == 2.5 and params["s_target"] == 4
        est.set_params(epsilon=1.0)
        assert est.epsilon == 1.0
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_predict_before_fit_rejected(self):
        with pytest.raises(RuntimeError):
            TwoRoundSLR().predict(np.zeros((2, 3)))

    def test_predict_dimension_checked(self):
        ds, _ = generate_independent(40, 30, 8, 1, 0.6, 0.5, seed=5)
        est = TwoRoundSLR(epsilon=2.0, seed=1).fit(ds)
        with pytest.raises(ValueError):
            est.predict(np.zeros((2, 9)))


class TestMultiRoundEstimator:
    def test_fit_and_iterations_param(self):
        ds, _ = generate_independent(80, 40, 8, 1, 0.6, 0.5, seed=6)
        est = MultiRoundSLR(epsilon=2.0, iterations=3, seed=2).fit(ds)
        assert est.transcript_.diagnostics["sco_iterations"] == 3
        assert est.coef_.shape == (8,)

    def test_default_vote_range_is_wider(self):
        assert MultiRoundSLR()._protocol_config().half_range == 3.0
        assert TwoRoundSLR()._protocol_config().half_range == 1.0


class TestSparseMeanEstimator:
    def test_fit_recovers_strong_mean_at_scale(self):
        ds, truth = generate_sparse_mean(3000, 100, 32, 2, 0.8, 0.3, seed=7)
        est = SparseMeanEstimator(epsilon=8.0, s_target=2, seed=5).fit(ds)
        assert set(truth.support.tolist()) <= set(est.selected_)

    def test_grouped_array_input(self):
        ds, _ = generate_sparse_mean(40, 20, 8, 1, 0.8, 0.5, seed=8)
        X = np.vstack([s.X for s in ds.shards])
        groups = np.concatenate([[s.user_id] * s.m for s in ds.shards])
        est = SparseMeanEstimator(epsilon=4.0, seed=1).fit(X, groups=groups)
        assert est.coef_.shape == (8,)
