"""Fidelity partitioning: representative query subsets per fidelity level,
chosen greedily to maximize weighted rank correlation with the full workload
under a cost-ratio budget."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .similarity import DegenerateRankingError, TaskRecord, kendall_tau

log = logging.getLogger(__name__)

MODE_HISTORICAL = "historical"
MODE_ONLINE = "online"


@dataclass
class QueryCostProfile:
    """Normalized weighted mean cost ratio per query."""

    queries: list[str]
    ratios: np.ndarray

    def ratio(self, q: str) -> float:
        return float(self.ratios[self.queries.index(q)])


@dataclass
class FidelityLevel:
    delta: float
    queries: list[str]
    cost_ratio: float
    tau: float
    budget_overrun: bool = False


@dataclass
class FidelityPlan:
    levels: list[FidelityLevel]
    source_mode: str

    def level_for(self, delta: float) -> FidelityLevel:
        for lvl in self.levels:
            if math.isclose(lvl.delta, delta, rel_tol=1e-9):
                return lvl
        raise KeyError(f"no fidelity level for delta={delta}")

    def to_dict(self) -> dict:
        return {"source_mode": self.source_mode,
                "levels": [{"delta": l.delta, "queries": l.queries,
                            "cost_ratio": l.cost_ratio, "tau": l.tau}
                           for l in self.levels]}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _complete_observations(task: TaskRecord):
    """Observations with fully finite per-query vectors (failed runs excluded)."""
    out = []
    for cfg, p, c in task.observations:
        p = np.asarray(p, dtype=float)
        c = np.asarray(c, dtype=float)
        if np.all(np.isfinite(p)) and np.all(np.isfinite(c)):
            out.append((cfg, p, c))
    return out


def cost_profile(sources: Sequence[tuple[TaskRecord, float]]) -> QueryCostProfile:
    """Weighted average per-query cost ratios across same-workload sources."""
    if not sources:
        raise ValueError("need at least one source")
    queries = sources[0][0].queries
    for task, _ in sources:
        if task.queries != queries:
            raise ValueError(f"query-set mismatch in task {task.task_id}")
    total_w = sum(w for _, w in sources)
    if total_w <= 0:
        raise ValueError("weights must be positive")
    ratios = np.zeros(len(queries))
    for task, w in sources:
        obs = _complete_observations(task)
        costs = np.sum([c for _, _, c in obs], axis=0)
        ratios += (w / total_w) * costs / costs.sum()
    return QueryCostProfile(queries=list(queries), ratios=ratios)


def subset_correlation(subset: Sequence[str], task: TaskRecord) -> float:
    """Tau between per-config latency summed over the subset vs the full set."""
    if not subset:
        raise ValueError("subset must be non-empty")
    obs = _complete_observations(task)
    if len(obs) < 3:
        raise ValueError("need >= 3 complete observations")
    idx = [task.queries.index(q) for q in subset]
    sub_agg = np.array([p[idx].sum() for _, p, _ in obs])
    full_agg = np.array([p.sum() for _, p, _ in obs])
    try:
        tau, _ = kendall_tau(sub_agg, full_agg)
    except DegenerateRankingError:
        return 0.0
    return tau


def weighted_correlation(subset: Sequence[str],
                         sources: Sequence[tuple[TaskRecord, float]]) -> float:
    total_w = sum(w for _, w in sources)
    return sum(w * subset_correlation(subset, task) for task, w in sources) / total_w


def greedy_select(queries: Sequence[str], delta: float,
                  sources: Sequence[tuple[TaskRecord, float]]
                  ) -> tuple[list[str], float, float, bool]:
    """Greedily add the feasible query maximizing weighted tau of the
    augmented subset. Returns (subset, tau, cost_ratio, budget_overrun)."""
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    profile = cost_profile(sources)
    chosen: list[str] = []
    cost = 0.0
    remaining = list(queries)
    while True:
        best = None  # (tau, -cost, -index) maximized
        for i, q in enumerate(remaining):
            cq = profile.ratio(q)
            if cost + cq > delta + 1e-9:
                continue
            tau = weighted_correlation(chosen + [q], sources)
            cand = (tau, -cq, -i)
            if best is None or cand > best[0]:
                best = (cand, q, cq)
        if best is None:
            break
        _, q, cq = best
        chosen.append(q)
        cost += cq
        remaining.remove(q)
    if not chosen:
        # One query dominates the budget: fall back to the single cheapest
        # query so the rung stays usable; flag the overrun.
        i = int(np.argmin(profile.ratios))
        q = profile.queries[i]
        log.warning("no query fits delta=%.4g; falling back to cheapest query %s",
                    delta, q)
        return [q], weighted_correlation([q], sources), float(profile.ratios[i]), True
    return chosen, weighted_correlation(chosen, sources), cost, False


def build_plan(queries: Sequence[str], eta: int, max_resource: int,
               sources: Sequence[tuple[TaskRecord, float]],
               source_mode: str = MODE_HISTORICAL) -> FidelityPlan:
    """Fidelity ladder {eta^-s_max, ..., eta^-1, 1} with greedy subsets.

    Online mode passes the target task's own full-fidelity observations as
    a single source with weight 1.
    """
    s_max = round(math.log(max_resource, eta))
    if eta ** s_max != max_resource or max_resource < 1:
        raise ValueError("max_resource must be a positive power of eta")
    usable = [(t, w) for t, w in sources if list(t.queries) == list(queries) and w > 0]
    if not usable:
        raise ValueError("no usable source shares the target query set")
    for t, _ in usable:
        if len(_complete_observations(t)) < 3:
            raise ValueError(f"source {t.task_id} has too few complete observations")
    levels = []
    for s in range(s_max, 0, -1):
        delta = eta ** (-s)
        subset, tau, cost, overrun = greedy_select(queries, delta, usable)
        levels.append(FidelityLevel(delta=delta, queries=subset,
                                    cost_ratio=cost, tau=tau,
                                    budget_overrun=overrun))
    levels.append(FidelityLevel(delta=1.0, queries=list(queries),
                                cost_ratio=1.0, tau=1.0))
    return FidelityPlan(levels=levels, source_mode=source_mode)
