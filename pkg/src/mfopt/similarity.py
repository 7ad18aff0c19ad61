"""Task similarity: Kendall-tau against source surrogates, meta-feature
prediction for cold start, the predicted->measured transition rule, and
similarity-to-weight conversion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from sklearn.ensemble import RandomForestRegressor
from sklearn.model_selection import KFold

from .space import ConfigSpace, Configuration, lhs_sample
from .surrogate import ObservationSet, SurrogateModel, STATUS_OK

META_DIM = 34
P_THRESHOLD = 0.05

MODE_PREDICTED = "predicted"
MODE_KENDALL = "kendall"


class DegenerateRankingError(ValueError):
    """All values tied in one of the rankings; tau is undefined."""


@dataclass
class TaskRecord:
    """One historical tuning task: meta-feature, query list, observations."""

    task_id: str
    meta: np.ndarray
    queries: list[str]
    observations: list[tuple[Configuration, np.ndarray, np.ndarray]]
    _surrogate: SurrogateModel | None = field(default=None, repr=False)

    def __post_init__(self):
        self.meta = np.asarray(self.meta, dtype=float)
        if self.meta.shape != (META_DIM,):
            raise ValueError(f"meta-feature must have {META_DIM} components")
        if not np.all(np.isfinite(self.meta)):
            raise ValueError("meta-feature components must be finite")
        m = len(self.queries)
        for cfg, p, c in self.observations:
            if len(p) != m or len(c) != m:
                raise ValueError("per-query vectors must match query count")
            if np.any(np.asarray(c) < 0):
                raise ValueError("costs must be >= 0")

    def total_latencies(self) -> np.ndarray:
        return np.array([float(np.sum(p)) for _, p, _ in self.observations])

    def configs(self) -> list[Configuration]:
        return [cfg for cfg, _, _ in self.observations]

    def surrogate(self, space: ConfigSpace, seed: int = 0) -> SurrogateModel:
        if self._surrogate is None:
            model = SurrogateModel(space, log_target=True)
            model.fit((self.configs(), self.total_latencies()), seed=seed)
            self._surrogate = model
        return self._surrogate


@dataclass
class SimilarityReport:
    taus: dict[str, float]
    p_values: dict[str, float]
    weights: dict[str, float]          # retained sources only
    target_weight: float
    mode: str
    no_transfer: bool = False


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Tie-corrected tau-b with the normal-approximation p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateRankingError("all values tied; tau undefined")
    res = stats.kendalltau(a, b, variant="b", method="asymptotic")
    if np.isnan(res.statistic):
        raise DegenerateRankingError("tau undefined for this input")
    return float(res.statistic), float(res.pvalue)


def task_similarity(source: TaskRecord, space: ConfigSpace,
                    target_obs: ObservationSet, seed: int = 0) -> tuple[float, float]:
    """Tau between a source surrogate's predictions and target ground truth."""
    ok = [(cfg, y) for cfg, y, _, st in target_obs.entries if st == STATUS_OK]
    if len(ok) < 3:
        raise ValueError("need >= 3 target observations")
    model = source.surrogate(space, seed=seed)
    preds, _ = model.predict_batch([cfg for cfg, _ in ok])
    return kendall_tau(preds, [y for _, y in ok])


class MetaRegressor:
    """Pairwise-similarity regressor on concatenated meta-feature pairs."""

    def __init__(self, forest: RandomForestRegressor, label_mean: float):
        self.forest = forest
        self.label_mean = label_mean

    def predict(self, source_meta: np.ndarray, target_meta: np.ndarray) -> float:
        x = np.concatenate([np.asarray(source_meta, float),
                            np.asarray(target_meta, float)])[None, :]
        return float(np.clip(self.forest.predict(x)[0], -1.0, 1.0))


def pair_label(task_i: TaskRecord, task_j: TaskRecord, space: ConfigSpace,
               n_rand: int = 200, seed: int = 0) -> float:
    """Tau between two task surrogates' predictions on random configurations."""
    configs = lhs_sample(space, n_rand, seed=seed)
    pi, _ = task_i.surrogate(space, seed=seed).predict_batch(configs)
    pj, _ = task_j.surrogate(space, seed=seed).predict_batch(configs)
    tau, _ = kendall_tau(pi, pj)
    return tau


def fit_meta_regressor(history: Sequence[TaskRecord], space: ConfigSpace,
                       seed: int = 0, n_rand: int = 200) -> MetaRegressor:
    if len(history) < 2:
        raise ValueError("need >= 2 history tasks")
    X, y = [], []
    for i, ti in enumerate(history):
        for j, tj in enumerate(history):
            if i == j:
                continue
            X.append(np.concatenate([ti.meta, tj.meta]))
            y.append(pair_label(ti, tj, space, n_rand=n_rand, seed=seed))
    forest = RandomForestRegressor(
        n_estimators=SurrogateModel.N_TREES, max_depth=SurrogateModel.MAX_DEPTH,
        min_samples_leaf=SurrogateModel.MIN_LEAF, random_state=seed, n_jobs=1)
    forest.fit(np.stack(X), np.asarray(y))
    return MetaRegressor(forest, label_mean=float(np.mean(y)))


def predict_similarity(reg: MetaRegressor, source_meta, target_meta) -> float:
    return reg.predict(source_meta, target_meta)


def should_transition(reports: Sequence[tuple[float, float]]) -> bool:
    """True iff a strict majority of sources have p < 0.05."""
    if not reports:
        return False
    hits = sum(1 for _, p in reports if p < P_THRESHOLD)
    return hits * 2 > len(reports)


def target_self_tau(target_obs: ObservationSet, space: ConfigSpace,
                    folds: int = 5, seed: int = 0) -> tuple[float, float]:
    """Out-of-fold (tau, p) of the target's own surrogate via cross-validation.

    Returns (0.0, 1.0) when there is too little data or the ranking is
    degenerate; with no source tasks this statistic drives the transition
    rule in place of source-similarity reports.
    """
    ok = [(cfg, y) for cfg, y, _, st in target_obs.entries if st == STATUS_OK]
    if len(ok) < max(folds, 2):
        return 0.0, 1.0
    configs = [cfg for cfg, _ in ok]
    ys = np.array([y for _, y in ok])
    preds = np.empty(len(ok))
    kf = KFold(n_splits=folds, shuffle=True, random_state=seed)
    for train_idx, test_idx in kf.split(configs):
        if len(train_idx) < 2:
            return 0.0, 1.0
        model = SurrogateModel(space, log_target=True)
        model.fit(([configs[i] for i in train_idx], ys[train_idx]), seed=seed)
        p, _ = model.predict_batch([configs[i] for i in test_idx])
        preds[test_idx] = p
    try:
        return kendall_tau(preds, ys)
    except DegenerateRankingError:
        return 0.0, 1.0


def target_self_weight(target_obs: ObservationSet, space: ConfigSpace,
                       folds: int = 5, seed: int = 0) -> float:
    """Out-of-fold tau of the target's own surrogate via cross-validation."""
    tau, _ = target_self_tau(target_obs, space, folds=folds, seed=seed)
    return tau


def to_weights(similarities: dict[str, float], target_tau: float,
               p_values: dict[str, float] | None = None,
               mode: str = MODE_KENDALL) -> SimilarityReport:
    """Drop non-positive similarities and normalize the rest into weights."""
    retained = {tid: tau for tid, tau in similarities.items() if tau > 0}
    tgt = target_tau if target_tau > 0 else 0.0
    total = sum(retained.values()) + tgt
    if total <= 0:
        # Nothing usable: fall back to the target alone; no-transfer if even
        # the target has no demonstrated generalization.
        return SimilarityReport(
            taus=dict(similarities), p_values=dict(p_values or {}),
            weights={}, target_weight=1.0, mode=mode,
            no_transfer=target_tau <= 0)
    return SimilarityReport(
        taus=dict(similarities), p_values=dict(p_values or {}),
        weights={tid: tau / total for tid, tau in retained.items()},
        target_weight=tgt / total, mode=mode)
