import itertools
import math

import numpy as np
import pytest
from sklearn.ensemble import RandomForestRegressor

from mfopt.attribution import (conditional_expectation, forest_shap_values,
                               tree_shap_values)


def shapley_oracle(tree, x, n_features):
    """Exact Shapley values by subset enumeration over the tree's own
    cover-weighted conditional expectations."""
    phi = np.zeros(n_features)
    features = list(range(n_features))
    for j in features:
        rest = [f for f in features if f != j]
        for r in range(len(rest) + 1):
            for s in itertools.combinations(rest, r):
                w = (math.factorial(len(s))
                     * math.factorial(n_features - len(s) - 1)
                     / math.factorial(n_features))
                with_j = conditional_expectation(tree, x, set(s) | {j})
                without = conditional_expectation(tree, x, set(s))
                phi[j] += w * (with_j - without)
    return phi


def permutation_estimate(tree, x, n_features, n_samples, seed):
    rng = np.random.default_rng(seed)
    phi = np.zeros(n_features)
    for _ in range(n_samples):
        perm = rng.permutation(n_features)
        seen = set()
        prev = conditional_expectation(tree, x, seen)
        for f in perm:
            seen.add(f)
            cur = conditional_expectation(tree, x, seen)
            phi[f] += cur - prev
            prev = cur
    return phi / n_samples


def fit_forest(fn, n_features, n=200, trees=10, seed=0, max_depth=None):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, n_features))
    y = np.array([fn(row) for row in X])
    forest = RandomForestRegressor(n_estimators=trees, max_depth=max_depth,
                                   random_state=seed, n_jobs=1)
    forest.fit(X, y)
    return forest, X


class TestTreeShap:
    def test_local_accuracy_single_tree(self):
        forest, X = fit_forest(lambda r: r[0] * 2 + r[1] ** 2 - r[2], 3)
        tree = forest.estimators_[0]
        for x in X[:20]:
            phi, base = tree_shap_values(tree, x, 3)
            pred = tree.predict(x[None, :])[0]
            assert base + phi.sum() == pytest.approx(pred, rel=1e-9, abs=1e-9)

    def test_matches_exact_shapley_enumeration(self):
        forest, X = fit_forest(lambda r: r[0] + 3 * r[1] * r[2], 3,
                               n=80, trees=3, max_depth=4)
        for tree in forest.estimators_:
            for x in X[:10]:
                phi, _ = tree_shap_values(tree, x, 3)
                oracle = shapley_oracle(tree, x, 3)
                assert np.allclose(phi, oracle, atol=1e-10)

    def test_matches_permutation_estimator(self):
        forest, X = fit_forest(lambda r: r[0] * 2 + r[1] ** 2 - r[2], 3,
                               n=120, trees=1, max_depth=5)
        tree = forest.estimators_[0]
        x = X[0]
        phi, _ = tree_shap_values(tree, x, 3)
        est = permutation_estimate(tree, x, 3, n_samples=5000, seed=0)
        assert np.allclose(phi, est, atol=0.05)

    def test_conditional_expectation_full_subset_is_prediction(self):
        forest, X = fit_forest(lambda r: r[0] - r[1], 2, trees=2)
        tree = forest.estimators_[0]
        x = X[3]
        assert conditional_expectation(tree, x, {0, 1}) == pytest.approx(
            tree.predict(x[None, :])[0])

    def test_conditional_expectation_empty_subset_is_base(self):
        forest, X = fit_forest(lambda r: r[0] - r[1], 2, trees=2)
        tree = forest.estimators_[0]
        _, base = tree_shap_values(tree, X[0], 2)
        assert conditional_expectation(tree, X[0], set()) == pytest.approx(base)


class TestForestShap:
    def test_local_accuracy_forest(self):
        forest, X = fit_forest(lambda r: math.sin(3 * r[0]) + r[1], 2,
                               n=150, trees=8)
        phis, base = forest_shap_values(forest, X[:25])
        preds = forest.predict(X[:25])
        assert np.allclose(base + phis.sum(axis=1), preds, rtol=1e-9, atol=1e-9)

    def test_constant_model_all_zero(self):
        forest, X = fit_forest(lambda r: 7.0, 2, n=50, trees=5)
        phis, base = forest_shap_values(forest, X[:10])
        assert np.allclose(phis, 0.0, atol=1e-12)
        assert base == pytest.approx(7.0)

    def test_unused_feature_zero_attribution(self):
        # Feature 1 never influences the target, so no tree splits on it.
        forest, X = fit_forest(lambda r: 5 * r[0], 2, n=200, trees=10)
        phis, _ = forest_shap_values(forest, X[:20])
        assert np.max(np.abs(phis[:, 1])) < 0.01 * np.max(np.abs(phis[:, 0]))

    def test_linear_dominant_feature(self):
        forest, X = fit_forest(lambda r: 10 * r[0] + 0.01 * r[1], 2,
                               n=300, trees=10)
        phis, _ = forest_shap_values(forest, X[:30])
        assert np.mean(np.abs(phis[:, 1])) < 0.1 * np.mean(np.abs(phis[:, 0]))
