"""Hyperband outer/inner loops over the fidelity plan, median-cost early
stopping, and the mode-fallback ladder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .evaluator import EvaluationResult
from .fidelity import FidelityPlan
from .space import Configuration
from .surrogate import STATUS_EARLY_STOPPED, STATUS_FAILED, STATUS_OK

MODE_FULL_MFO = "full_mfo"
MODE_FULL_FIDELITY_BO = "full_fidelity_bo"
MODE_VANILLA_BO = "vanilla_bo"

EARLY_STOP_MIN_PRIORS = 5


@dataclass(frozen=True)
class Rung:
    n: int
    r: int
    delta: float


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple[Rung, ...]

    @property
    def n1(self) -> int:
        return self.rungs[0].n

    @property
    def full_fidelity_survivors(self) -> int:
        return self.rungs[-1].n

    @property
    def single_rung(self) -> bool:
        return len(self.rungs) == 1


def hyperband_schedule(max_resource: int, eta: int) -> list[Bracket]:
    """Brackets for s = s_max..0 with the exact (n_i, r_i) ladders."""
    if max_resource < 1 or eta < 2:
        raise ValueError("need max_resource >= 1 and eta >= 2")
    s_max = int(math.floor(math.log(max_resource, eta) + 1e-12))
    budget = (s_max + 1) * max_resource
    brackets = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil((budget / max_resource) * (eta ** s) / (s + 1)))
        r = max_resource * eta ** (-s)
        rungs = []
        for _ in range(s + 1):
            ri = int(round(r))
            rungs.append(Rung(n=n, r=ri, delta=ri / max_resource))
            n = n // eta
            r = r * eta
        brackets.append(Bracket(s=s, rungs=tuple(rungs)))
    return brackets


@dataclass
class LedgerEntry:
    config_id: int
    config: Configuration
    delta: float
    queries: list[str]
    latencies: np.ndarray
    status: str
    wall_cost: float
    elapsed_s: float
    bracket: int
    rung: int
    mode: str

    @property
    def total_latency(self) -> float:
        return float(np.sum(self.latencies))


@dataclass
class RunLedger:
    """Append-only record of every evaluation plus per-fidelity cost caches."""

    entries: list[LedgerEntry] = field(default_factory=list)
    elapsed_s: float = 0.0
    best_latency: float = math.inf
    best_config: Configuration | None = None
    _next_id: int = 0

    def record(self, cfg: Configuration, delta: float, result: EvaluationResult,
               bracket: int, rung: int, mode: str) -> LedgerEntry:
        self.elapsed_s += result.wall_cost
        entry = LedgerEntry(config_id=self._next_id, config=cfg, delta=delta,
                            queries=result.queries,
                            latencies=np.asarray(result.latencies, dtype=float),
                            status=result.status, wall_cost=result.wall_cost,
                            elapsed_s=self.elapsed_s, bracket=bracket,
                            rung=rung, mode=mode)
        self._next_id += 1
        self.entries.append(entry)
        if delta == 1.0 and result.status == STATUS_OK:
            total = entry.total_latency
            if total < self.best_latency:
                self.best_latency = total
                self.best_config = cfg
        return entry

    def costs_at(self, delta: float) -> list[float]:
        return [e.wall_cost for e in self.entries
                if math.isclose(e.delta, delta, rel_tol=1e-9)
                and e.status in (STATUS_OK, STATUS_EARLY_STOPPED, STATUS_FAILED)]

    def full_fidelity_ok(self) -> list[LedgerEntry]:
        return [e for e in self.entries if e.delta == 1.0 and e.status == STATUS_OK]

    def seen_configs(self) -> set[tuple]:
        return {e.config.key() for e in self.entries}


def early_stop_guard(ledger: RunLedger, delta: float) -> Callable[[float], bool]:
    """Terminate once running cost exceeds the median of >= 5 same-fidelity
    prior evaluations (strictly)."""
    priors = ledger.costs_at(delta)
    if len(priors) < EARLY_STOP_MIN_PRIORS:
        return lambda running: False
    median = float(np.median(priors))
    return lambda running: running > median


@dataclass
class BudgetTracker:
    limit_s: float
    ledger: RunLedger

    @property
    def exhausted(self) -> bool:
        return self.ledger.elapsed_s >= self.limit_s


def _rank_key(order: int, entry: LedgerEntry) -> tuple:
    # ok (by latency) < early_stopped < failed; ties by evaluation order.
    if entry.status == STATUS_OK:
        return (0, entry.total_latency, order)
    if entry.status == STATUS_EARLY_STOPPED:
        return (1, 0.0, order)
    return (2, 0.0, order)


def run_bracket(bracket: Bracket, batch: Sequence[Configuration],
                plan: FidelityPlan | None, evaluate, ledger: RunLedger,
                budget: BudgetTracker, mode: str,
                use_early_stop: bool = True,
                record=None) -> list[LedgerEntry]:
    """Successive halving: evaluate each rung at its fidelity subset and
    promote the top floor(n_i / eta) by aggregate latency.

    `evaluate(cfg, subset, stop_guard) -> EvaluationResult`. `record`
    overrides ledger.record so callers can observe every result (same
    signature, must return the LedgerEntry). Returns all entries recorded
    for this bracket.
    """
    if len(batch) != bracket.n1:
        raise ValueError(f"batch size {len(batch)} != n1 {bracket.n1}")
    if record is None:
        record = ledger.record
    survivors = list(batch)
    recorded: list[LedgerEntry] = []
    for rung_idx, rung in enumerate(bracket.rungs):
        current = survivors[:rung.n]
        rung_entries: list[LedgerEntry] = []
        if plan is not None and rung.delta < 1.0:
            subset = plan.level_for(rung.delta).queries
        else:
            subset = None  # full query set
        for cfg in current:
            if budget.exhausted:
                break
            guard = early_stop_guard(ledger, rung.delta) if use_early_stop else None
            result = evaluate(cfg, subset, guard)
            entry = record(cfg, rung.delta, result,
                           bracket=bracket.s, rung=rung_idx, mode=mode)
            rung_entries.append(entry)
            recorded.append(entry)
        if budget.exhausted and len(rung_entries) < len(current):
            break
        ranked = sorted(enumerate(rung_entries),
                        key=lambda oe: _rank_key(oe[0], oe[1]))
        promotable = [e for _, e in ranked if e.status != STATUS_FAILED]
        if rung_idx + 1 < len(bracket.rungs):
            n_next = bracket.rungs[rung_idx + 1].n
            survivors = [e.config for e in promotable[:n_next]]
            if not survivors:
                break
    return recorded


def select_mode(has_plan: bool, has_sources: bool, transitioned: bool) -> str:
    """Mode ladder: vanilla BO -> full-fidelity BO with transfer/compression
    -> full multi-fidelity. Upgrades are one-way."""
    if has_plan:
        return MODE_FULL_MFO
    if has_sources or transitioned:
        return MODE_FULL_FIDELITY_BO
    return MODE_VANILLA_BO
