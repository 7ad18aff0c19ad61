"""Workload evaluation: a synthetic multi-query latency simulator and a
trace-replay evaluator over recorded observation files."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .similarity import META_DIM, TaskRecord
from .space import ConfigSpace, Configuration, KnobSpec, lhs_sample
from .surrogate import STATUS_EARLY_STOPPED, STATUS_FAILED, STATUS_OK

StopGuard = Callable[[float], bool]  # running cost -> terminate?


@dataclass
class EvaluationResult:
    queries: list[str]              # queries actually executed, in order
    latencies: np.ndarray           # seconds, aligned with `queries`
    costs: np.ndarray               # seconds, = latencies in the simulator
    status: str
    wall_cost: float

    @property
    def total_latency(self) -> float:
        return float(np.sum(self.latencies))


def config_fingerprint(cfg: Configuration) -> int:
    """Stable across processes (unlike hash()); used to derive noise seeds."""
    parts = []
    for v in cfg.values:
        parts.append(f"{v:.12g}" if isinstance(v, float) else repr(v))
    return zlib.crc32("|".join(parts).encode())


class SyntheticWorkload:
    """Multi-query latency surface over a knob space.

    Per-query latency = base * (1 + sum of quadratic knob effects with
    query-specific optima + nonnegative pairwise interactions) * lognormal
    noise. Interactions vanish at the task optimum, so the global optimum
    is analytic: per dimension, the base*amplitude-weighted mean of the
    query optima.
    """

    def __init__(self, task_id: str, space: ConfigSpace, queries: list[str],
                 base: np.ndarray, amplitude: np.ndarray, optima: np.ndarray,
                 interactions: list[tuple[int, int, np.ndarray]],
                 noise: float, failure_prob: float, seed: int):
        self.task_id = task_id
        self.space = space
        self.queries = list(queries)
        self.base = base                 # (m,)
        self.amplitude = amplitude       # (m, d), >= 0
        self.optima = optima             # (m, d) in unit domain
        self.interactions = interactions  # (dim_j, dim_k, per-query strength)
        self.noise = noise
        self.failure_prob = failure_prob
        self.seed = seed
        col = (base[:, None] * amplitude).sum(axis=0)
        num = (base[:, None] * amplitude * optima).sum(axis=0)
        self._opt_unit = np.where(col > 0, num / np.maximum(col, 1e-12), 0.5)

    def _unit(self, cfg: Configuration) -> np.ndarray:
        return np.array([k.to_unit(v) for k, v in zip(self.space.knobs, cfg.values)])

    def _noiseless_per_query(self, cfg: Configuration) -> np.ndarray:
        u = self._unit(cfg)
        g = (self.amplitude * (u[None, :] - self.optima) ** 2).sum(axis=1)
        for j, k, b in self.interactions:
            g = g + b * ((u[j] - self._opt_unit[j]) ** 2
                         * (u[k] - self._opt_unit[k]) ** 2)
        return self.base * (1.0 + g)

    def noiseless_latency(self, cfg: Configuration) -> float:
        return float(self._noiseless_per_query(cfg).sum())

    def optimal_config(self) -> Configuration:
        vals = tuple(k.from_unit(u) for k, u in zip(self.space.knobs, self._opt_unit))
        return Configuration(vals)

    def optimal_latency(self) -> float:
        return self.noiseless_latency(self.optimal_config())

    def evaluate(self, cfg: Configuration, subset: Sequence[str] | None = None,
                 stop_guard: StopGuard | None = None) -> EvaluationResult:
        """Run the queries in `subset` order; deterministic per (seed, cfg)."""
        subset = list(subset) if subset is not None else list(self.queries)
        unknown = set(subset) - set(self.queries)
        if unknown:
            raise ValueError(f"unknown queries: {sorted(unknown)}")
        fp = config_fingerprint(cfg)
        rng = np.random.default_rng((self.seed, fp))
        noiseless = self._noiseless_per_query(cfg)
        # One noise draw per query, in canonical query order, so the same
        # (cfg, query) pair costs the same regardless of the chosen subset.
        noise = np.exp(rng.normal(0.0, self.noise, size=len(self.queries)))
        fails = rng.uniform() < self.failure_prob
        fail_at = int(rng.integers(max(len(subset), 1))) if fails else -1
        ran, lats = [], []
        running = 0.0
        for pos, q in enumerate(subset):
            qi = self.queries.index(q)
            lat = float(noiseless[qi] * noise[qi])
            running += lat
            if fails and pos == fail_at:
                return EvaluationResult(queries=[], latencies=np.array([]),
                                        costs=np.array([]), status=STATUS_FAILED,
                                        wall_cost=running)
            ran.append(q)
            lats.append(lat)
            if stop_guard is not None and stop_guard(running):
                arr = np.array(lats)
                return EvaluationResult(queries=ran, latencies=arr, costs=arr.copy(),
                                        status=STATUS_EARLY_STOPPED,
                                        wall_cost=running)
        arr = np.array(lats)
        return EvaluationResult(queries=ran, latencies=arr, costs=arr.copy(),
                                status=STATUS_OK, wall_cost=running)


def default_space(n_knobs: int) -> ConfigSpace:
    knobs = []
    for j in range(n_knobs):
        if j % 4 == 3:
            knobs.append(KnobSpec(name=f"k{j:02d}", kind="integer",
                                  low=1, high=64, default=8, log_scale=True))
        else:
            knobs.append(KnobSpec(name=f"k{j:02d}", kind="continuous",
                                  low=0.0, high=1.0, default=0.5))
    return ConfigSpace(tuple(knobs))


def make_synthetic_suite(n_tasks: int, n_queries: int, n_knobs: int,
                         correlation: float, seed: int,
                         n_obs: int = 50, noise: float = 0.03,
                         failure_prob: float = 0.0,
                         n_noise_knobs: int = 0,
                         space: ConfigSpace | None = None,
                         amplitude_range: tuple[float, float] = (0.5, 1.5)
                         ) -> list[tuple[SyntheticWorkload, TaskRecord]]:
    """Family of tasks over a shared query set whose latency surfaces are
    correlated across tasks with strength `correlation` (1 = identical).
    The last `n_noise_knobs` knobs have no effect on latency anywhere.
    """
    if not 0 <= correlation <= 1:
        raise ValueError("correlation must be in [0, 1]")
    rng = np.random.default_rng(seed)
    space = space or default_space(n_knobs)
    d = len(space.knobs)
    queries = [f"q{j:02d}" for j in range(n_queries)]
    active = d - n_noise_knobs
    if active < 1:
        raise ValueError("need at least one influential knob")

    def surface(r):
        base = r.uniform(5.0, 40.0, size=n_queries)
        amp = np.zeros((n_queries, d))
        amp[:, :active] = r.uniform(*amplitude_range, size=(n_queries, active))
        task_opt = r.uniform(0.2, 0.8, size=d)
        opt = np.clip(task_opt[None, :] + r.normal(0, 0.05, size=(n_queries, d)),
                      0.0, 1.0)
        return base, amp, opt

    shared = surface(rng)
    n_pairs = max(1, (active * (active - 1) // 2) // 10)
    pair_pool = [(a, b) for a in range(active) for b in range(a + 1, active)]
    pair_idx = rng.choice(len(pair_pool), size=min(n_pairs, len(pair_pool)),
                          replace=False)
    proj = rng.normal(size=(META_DIM, n_queries * (1 + 2 * d)))

    out = []
    rho = correlation
    for t in range(n_tasks):
        private = surface(rng)
        base = rho * shared[0] + (1 - rho) * private[0]
        amp = rho * shared[1] + (1 - rho) * private[1]
        opt = rho * shared[2] + (1 - rho) * private[2]
        inter = [(pair_pool[i][0], pair_pool[i][1],
                  rng.uniform(0.2, 0.6, size=n_queries)) for i in pair_idx]
        wl = SyntheticWorkload(task_id=f"task{t:02d}", space=space,
                               queries=queries, base=base, amplitude=amp,
                               optima=opt, interactions=inter, noise=noise,
                               failure_prob=failure_prob,
                               seed=int(rng.integers(2 ** 31)))
        params = np.concatenate([base, amp.ravel(), opt.ravel()])
        meta = proj @ (params / max(np.linalg.norm(params), 1e-9))
        meta = meta + rng.normal(0, 0.01, size=META_DIM)
        obs = []
        for cfg in lhs_sample(space, n_obs, seed=int(rng.integers(2 ** 31))):
            res = wl.evaluate(cfg)
            if res.status == STATUS_OK:
                obs.append((cfg, res.latencies.copy(), res.costs.copy()))
        out.append((wl, TaskRecord(task_id=wl.task_id, meta=meta,
                                   queries=queries, observations=obs)))
    return out


class TraceNotFoundError(KeyError):
    """Configuration not present in the replay trace."""


class TraceReplayEvaluator:
    """Replays recorded per-query latencies for previously evaluated configs."""

    def __init__(self, trace_dir: str | Path, space: ConfigSpace):
        trace_dir = Path(trace_dir)
        self.space = space
        meta = json.loads((trace_dir / "task.json").read_text())
        self.queries: list[str] = meta["queries"]
        self.records: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.configs: list[Configuration] = []
        for line in (trace_dir / "observations.jsonl").read_text().splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("status", STATUS_OK) != STATUS_OK:
                continue
            cfg = space.from_dict_values(obj["config"])
            self.records[config_fingerprint(cfg)] = (
                np.asarray(obj["per_query_latency_s"], dtype=float),
                np.asarray(obj["per_query_cost_s"], dtype=float))
            self.configs.append(cfg)

    def evaluate(self, cfg: Configuration, subset: Sequence[str] | None = None,
                 stop_guard: StopGuard | None = None) -> EvaluationResult:
        key = config_fingerprint(cfg)
        if key not in self.records:
            raise TraceNotFoundError(f"configuration not in trace: {cfg.values}")
        lat, cost = self.records[key]
        subset = list(subset) if subset is not None else list(self.queries)
        idx = [self.queries.index(q) for q in subset]
        return EvaluationResult(queries=subset, latencies=lat[idx],
                                costs=cost[idx], status=STATUS_OK,
                                wall_cost=float(cost[idx].sum()))
