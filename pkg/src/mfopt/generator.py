"""Candidate configuration generation: combined-surrogate rank aggregation
and the two-phase warm start."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .similarity import TaskRecord
from .space import ConfigSpace, Configuration, SubSpace, lhs_sample, mutate
from .surrogate import SurrogateModel, expected_improvement

PROVENANCE_WARM_START = "warm_start"
PROVENANCE_BO_RANKED = "bo_ranked"
PROVENANCE_RANDOM = "random"

CANDIDATE_POOL_SIZE = 1000
N_ELITES = 5
MUTATIONS_PER_ELITE = 10


@dataclass
class CandidateBatch:
    configs: list[Configuration]
    provenance: list[str]

    def __post_init__(self):
        keys = [c.key() for c in self.configs]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate configurations in batch")


@dataclass
class WarmStartPool:
    """Above-median source configurations ranked by priority, consumed once."""

    ranked: list[tuple[Configuration, float, str]]  # (config, priority, task id)
    cursor: int = 0

    @property
    def remaining(self) -> int:
        return len(self.ranked) - self.cursor

    def draw(self, k: int) -> list[Configuration]:
        take = self.ranked[self.cursor:self.cursor + k]
        self.cursor += len(take)
        return [cfg for cfg, _, _ in take]


def combined_rank(candidates: Sequence[Configuration],
                  models: Sequence[tuple[SurrogateModel, float]],
                  y_bests: Sequence[float]) -> list[Configuration]:
    """Sort candidates by the weight-combined average rank of per-model EI.

    Rank 1 is the best EI under a model; ties share the average rank. Only
    orderings matter, so differing objective scales across models are fine.
    """
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    usable = [(m, w, yb) for (m, w), yb in zip(models, y_bests) if w > 0]
    if not usable:
        raise ValueError("need at least one positively weighted model")
    combined = np.zeros(len(candidates))
    for model, w, y_best in usable:
        mu, var = model.predict_batch(candidates)
        ei = expected_improvement(mu, var, y_best)
        combined += w * rankdata(-ei, method="average")
    order = np.argsort(combined, kind="stable")  # index breaks ties
    return [candidates[i] for i in order]


def source_priorities(task: TaskRecord, weight: float
                      ) -> list[tuple[Configuration, float]]:
    lats = task.total_latencies()
    if len(lats) < 2:
        return []
    med = float(np.median(lats))
    if med <= 0:
        return []
    return [(cfg, weight * (med - y) / med)
            for (cfg, _, _), y in zip(task.observations, lats) if y < med]


def build_warm_start_pool(sources: Sequence[tuple[TaskRecord, float]],
                          exclude: Sequence[Configuration] = ()
                          ) -> WarmStartPool:
    """Union of above-median source configs, ranked by priority descending.

    Duplicates keep the maximum priority. `exclude` drops configurations
    already consumed (the phase-1 config)."""
    best: dict[tuple, tuple[Configuration, float, str]] = {}
    skip = {cfg.key() for cfg in exclude}
    for task, w in sources:
        for cfg, prio in source_priorities(task, w):
            key = cfg.key()
            if key in skip:
                continue
            if key not in best or prio > best[key][1]:
                best[key] = (cfg, prio, task.task_id)
    ranked = sorted(best.values(), key=lambda t: (-t[1], t[2], t[0].key()))
    return WarmStartPool(ranked=ranked)


def phase1_config(sources: Sequence[tuple[TaskRecord, float]]
                  ) -> Configuration | None:
    """Best configuration of the highest-weight source; ties favor the
    lexicographically smaller task id."""
    positive = [(t, w) for t, w in sources if w > 0 and len(t.observations) > 0]
    if not positive:
        return None
    task, _ = min(positive, key=lambda tw: (-tw[1], tw[0].task_id))
    lats = task.total_latencies()
    return task.observations[int(np.argmin(lats))][0]


def propose_batch(n1: int, multi_rung: bool, full_fidelity_survivors: int,
                  pool: WarmStartPool | None,
                  models: Sequence[tuple[SurrogateModel, float]],
                  y_bests: Sequence[float],
                  space: ConfigSpace | SubSpace, seed: int,
                  elite_configs: Sequence[Configuration] = (),
                  exclude: set | None = None) -> CandidateBatch:
    """Assemble a bracket batch: warm-start draws capped at the bracket's
    full-fidelity survivor count (none for single-rung brackets), the rest
    from combined-rank BO over sampled + mutated candidates, random fallback
    when no model is usable."""
    if n1 < 1:
        raise ValueError("n1 must be >= 1")
    exclude = set(exclude or ())
    configs: list[Configuration] = []
    provenance: list[str] = []
    seen = set(exclude)

    def push(cfg: Configuration, prov: str) -> bool:
        if cfg.key() in seen:
            return False
        seen.add(cfg.key())
        configs.append(cfg)
        provenance.append(prov)
        return True

    if multi_rung and pool is not None:
        k = min(full_fidelity_survivors, pool.remaining, n1)
        for cfg in pool.draw(k):
            push(cfg, PROVENANCE_WARM_START)

    need = n1 - len(configs)
    usable_models = [(m, w) for m, w in models if w > 0]
    if need > 0 and usable_models:
        candidates = lhs_sample(space, CANDIDATE_POOL_SIZE, seed=seed)
        for e, elite in enumerate(elite_configs[:N_ELITES]):
            for m in range(MUTATIONS_PER_ELITE):
                # Half the mutations explore coarsely, half refine locally.
                scale = 0.2 if m % 2 == 0 else 0.05
                candidates.append(mutate(elite, space, strength=0.3,
                                         seed=seed + 7919 * (e + 1) + m,
                                         scale=scale))
        dedup: list[Configuration] = []
        ckeys = set()
        for c in candidates:
            if c.key() not in ckeys and c.key() not in seen:
                ckeys.add(c.key())
                dedup.append(c)
        if dedup:
            ybs = [yb for (m, w), yb in zip(models, y_bests) if w > 0]
            for cfg in combined_rank(dedup, usable_models, ybs):
                if len(configs) >= n1:
                    break
                push(cfg, PROVENANCE_BO_RANKED)

    attempt = 0
    while len(configs) < n1:
        for cfg in lhs_sample(space, n1 - len(configs), seed=seed + 104729 + attempt):
            push(cfg, PROVENANCE_RANDOM)
        attempt += 1
        if attempt > 50:
            raise RuntimeError("could not assemble a duplicate-free batch")
    return CandidateBatch(configs=configs, provenance=provenance)
