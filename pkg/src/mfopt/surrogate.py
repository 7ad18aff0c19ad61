"""Probabilistic random-forest surrogate and the EI acquisition function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm
from sklearn.ensemble import RandomForestRegressor

from .space import ConfigSpace, Configuration

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_EARLY_STOPPED = "early_stopped"

FAILURE_PENALTY_FACTOR = 2.0  # failed runs train at 2x worst observed latency


class InsufficientDataError(ValueError):
    """Fewer than two usable observations; caller should fall back to random."""


@dataclass
class ObservationSet:
    """Training data for one surrogate: (config, objective, fidelity, status)."""

    entries: list[tuple[Configuration, float, float, str]] = field(default_factory=list)

    def add(self, cfg: Configuration, objective: float,
            fidelity: float = 1.0, status: str = STATUS_OK) -> None:
        if status == STATUS_OK and not math.isfinite(objective):
            raise ValueError("ok entries need a finite objective")
        self.entries.append((cfg, objective, fidelity, status))

    def __len__(self):
        return len(self.entries)

    def training_pairs(self) -> tuple[list[Configuration], np.ndarray]:
        """Configs and targets with failed runs penalized per fidelity."""
        ok = [e for e in self.entries if e[3] != STATUS_FAILED]
        worst_by_fid: dict[float, float] = {}
        for _, y, fid, st in ok:
            worst_by_fid[fid] = max(worst_by_fid.get(fid, -np.inf), y)
        worst_any = max(worst_by_fid.values()) if worst_by_fid else 1.0
        configs, ys = [], []
        for cfg, y, fid, st in self.entries:
            if st == STATUS_FAILED:
                y = FAILURE_PENALTY_FACTOR * worst_by_fid.get(fid, worst_any)
            configs.append(cfg)
            ys.append(y)
        return configs, np.asarray(ys, dtype=float)

    def best(self) -> float:
        vals = [y for _, y, _, st in self.entries if st == STATUS_OK]
        if not vals:
            raise InsufficientDataError("no ok observations")
        return min(vals)


class ConfigEncoder:
    """Numeric encoding of configurations: one-hot for categoricals."""

    def __init__(self, space: ConfigSpace):
        self.space = space
        self.columns: list[tuple[int, object]] = []  # (knob index, category or None)
        for i, k in enumerate(space.knobs):
            if k.kind == "categorical":
                for v in k.values:
                    self.columns.append((i, v))
            else:
                self.columns.append((i, None))

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def encode(self, configs: Sequence[Configuration]) -> np.ndarray:
        X = np.zeros((len(configs), self.n_features))
        for r, cfg in enumerate(configs):
            for c, (i, cat) in enumerate(self.columns):
                if cat is None:
                    X[r, c] = float(cfg.values[i])
                else:
                    X[r, c] = 1.0 if cfg.values[i] == cat else 0.0
        return X

    def knob_of_column(self, c: int) -> int:
        return self.columns[c][0]


class SurrogateModel:
    """Random-forest regressor with ensemble mean/variance prediction.

    With log_target=True the model works in log-objective space: predict()
    and expected_improvement() then operate on log values, which preserves
    ranks and suits heavy-tailed latencies.
    """

    N_TREES = 50
    MAX_DEPTH = 20
    MIN_LEAF = 2

    def __init__(self, space: ConfigSpace, log_target: bool = False,
                 n_trees: int | None = None, max_depth: int | None = None,
                 min_leaf: int | None = None, min_impurity_frac: float = 0.0):
        self.space = space
        self.encoder = ConfigEncoder(space)
        self.log_target = log_target
        self.n_trees = n_trees or self.N_TREES
        self.max_depth = max_depth or self.MAX_DEPTH
        self.min_leaf = min_leaf or self.MIN_LEAF
        self.min_impurity_frac = min_impurity_frac
        self.forest: RandomForestRegressor | None = None
        self.training_size = 0
        self.y_train_best: float | None = None

    def fit(self, data: ObservationSet | tuple, seed: int = 0) -> "SurrogateModel":
        if isinstance(data, ObservationSet):
            configs, y = data.training_pairs()
        else:
            configs, y = data
            y = np.asarray(y, dtype=float)
        if len(configs) < 2:
            raise InsufficientDataError(f"need >= 2 observations, got {len(configs)}")
        if self.log_target:
            y = np.log(y)
        X = self.encoder.encode(configs)
        self.forest = RandomForestRegressor(
            n_estimators=self.n_trees, max_depth=self.max_depth,
            min_samples_leaf=self.min_leaf, bootstrap=True,
            min_impurity_decrease=self.min_impurity_frac * float(np.var(y)),
            random_state=seed, n_jobs=1)
        self.forest.fit(X, y)
        self.training_size = len(configs)
        self.y_train_best = float(np.min(y))
        return self

    def _check_fitted(self):
        if self.forest is None:
            raise RuntimeError("surrogate not fitted")

    def predict_matrix(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        per_tree = np.stack([t.predict(X) for t in self.forest.estimators_])
        return per_tree.mean(axis=0), per_tree.var(axis=0)

    def predict(self, cfg: Configuration) -> tuple[float, float]:
        mu, var = self.predict_matrix(self.encoder.encode([cfg]))
        return float(mu[0]), float(var[0])

    def predict_batch(self, configs: Sequence[Configuration]) -> tuple[np.ndarray, np.ndarray]:
        return self.predict_matrix(self.encoder.encode(configs))


def expected_improvement(mu, var, y_best) -> np.ndarray:
    """EI for minimization: E[max(y_best - Y, 0)] under Gaussian(mu, var)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.sqrt(np.asarray(var, dtype=float))
    imp = y_best - mu
    out = np.where(imp > 0, imp, 0.0).astype(float)
    pos = sigma > 0
    if np.any(pos):
        z = imp[pos] / sigma[pos]
        out[pos] = imp[pos] * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    return out


def ei_score(model: SurrogateModel, cfg: Configuration, y_best: float) -> float:
    mu, var = model.predict(cfg)
    return float(expected_improvement(np.array([mu]), np.array([var]), y_best)[0])
