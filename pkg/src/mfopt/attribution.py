"""Path-dependent TreeSHAP for scikit-learn tree ensembles.

Attributions are additive: base value + sum of per-feature contributions
equals the ensemble prediction exactly (local accuracy). The conditional
expectation uses each tree's own cover weights, so no background dataset
is required and results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor


@dataclass
class _PathElement:
    feature: int
    zero: float   # fraction of zero (unsplit) paths flowing through
    one: float    # fraction of one (split-followed) paths flowing through
    weight: float


def _extend(path: list[_PathElement], zero: float, one: float, feature: int) -> None:
    depth = len(path)
    path.append(_PathElement(feature, zero, one, 1.0 if depth == 0 else 0.0))
    for i in range(depth - 1, -1, -1):
        path[i + 1].weight += one * path[i].weight * (i + 1) / (depth + 1)
        path[i].weight = zero * path[i].weight * (depth - i) / (depth + 1)


def _unwind(path: list[_PathElement], index: int) -> None:
    depth = len(path) - 1
    one = path[index].one
    zero = path[index].zero
    next_one = path[depth].weight
    for i in range(depth - 1, -1, -1):
        if one != 0:
            tmp = path[i].weight
            path[i].weight = next_one * (depth + 1) / ((i + 1) * one)
            next_one = tmp - path[i].weight * zero * (depth - i) / (depth + 1)
        else:
            path[i].weight = path[i].weight * (depth + 1) / (zero * (depth - i))
    for i in range(index, depth):
        path[i].feature = path[i + 1].feature
        path[i].zero = path[i + 1].zero
        path[i].one = path[i + 1].one
    path.pop()


def _unwound_sum(path: list[_PathElement], index: int) -> float:
    depth = len(path) - 1
    one = path[index].one
    zero = path[index].zero
    total = 0.0
    if one != 0:
        next_one = path[depth].weight
        for i in range(depth - 1, -1, -1):
            tmp = next_one / ((i + 1) * one)
            total += tmp
            next_one = path[i].weight - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += path[i].weight / (zero * (depth - i))
    return total * (depth + 1)


def tree_shap_values(tree, x: np.ndarray, n_features: int) -> tuple[np.ndarray, float]:
    """SHAP values and base value for one fitted sklearn regression tree."""
    t = tree.tree_
    left, right = t.children_left, t.children_right
    feature, threshold = t.feature, t.threshold
    values = t.value.reshape(-1)
    cover = t.weighted_n_node_samples
    phi = np.zeros(n_features)

    def recurse(node: int, path: list[_PathElement],
                p_zero: float, p_one: float, p_feature: int) -> None:
        path = [_PathElement(e.feature, e.zero, e.one, e.weight) for e in path]
        _extend(path, p_zero, p_one, p_feature)
        if left[node] < 0:  # leaf
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                el = path[i]
                phi[el.feature] += w * (el.one - el.zero) * values[node]
            return
        f = feature[node]
        hot, cold = (left[node], right[node]) if x[f] <= threshold[node] \
            else (right[node], left[node])
        hot_zero = cover[hot] / cover[node]
        cold_zero = cover[cold] / cover[node]
        inc_zero, inc_one = 1.0, 1.0
        for k, el in enumerate(path):
            if el.feature == f:
                inc_zero, inc_one = el.zero, el.one
                _unwind(path, k)
                break
        recurse(hot, path, hot_zero * inc_zero, inc_one, f)
        recurse(cold, path, cold_zero * inc_zero, 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)

    # Base value: cover-weighted mean of leaf values.
    leaves = left < 0
    base = float(np.sum(values[leaves] * cover[leaves]) / cover[0])
    return phi, base


def forest_shap_values(forest: RandomForestRegressor,
                       X: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-feature SHAP values (rows of X) and shared base value for a forest."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n_features = X.shape[1]
    phis = np.zeros((X.shape[0], n_features))
    base = 0.0
    for tree in forest.estimators_:
        tb = None
        for r in range(X.shape[0]):
            phi, tb = tree_shap_values(tree, X[r], n_features)
            phis[r] += phi
        base += tb
    n = len(forest.estimators_)
    return phis / n, base / n


def conditional_expectation(tree, x: np.ndarray, subset: set[int]) -> float:
    """E[f(x) | x_S] under the tree's cover weighting (test oracle support)."""
    t = tree.tree_
    left, right = t.children_left, t.children_right
    feature, threshold = t.feature, t.threshold
    values = t.value.reshape(-1)
    cover = t.weighted_n_node_samples

    def walk(node: int) -> float:
        if left[node] < 0:
            return values[node]
        f = feature[node]
        if f in subset:
            nxt = left[node] if x[f] <= threshold[node] else right[node]
            return walk(nxt)
        wl = cover[left[node]] / cover[node]
        return wl * walk(left[node]) + (1 - wl) * walk(right[node])

    return walk(0)
