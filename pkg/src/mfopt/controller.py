"""End-to-end tuning loop: per iteration, refresh similarity, rebuild the
compressed space, propose a batch, run it under the multi-fidelity scheduler,
and persist results."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import compression, fidelity, generator, scheduler, similarity
from .evaluator import EvaluationResult
from .knowledge import KnowledgeStore
from .scheduler import (MODE_FULL_FIDELITY_BO, MODE_FULL_MFO, MODE_VANILLA_BO,
                        Bracket, BudgetTracker, Rung, RunLedger)
from .similarity import (MODE_KENDALL, MODE_PREDICTED, DegenerateRankingError,
                         SimilarityReport, TaskRecord)
from .space import ConfigSpace, Configuration, SubSpace
from .surrogate import (STATUS_FAILED, STATUS_OK, InsufficientDataError,
                        ObservationSet, SurrogateModel)

log = logging.getLogger(__name__)

N_INIT_LHS = 8            # LHS observations before trusting the target surrogate
FULL_FIDELITY_BATCH = 3   # batch size outside MFO mode
MIN_ONLINE_PLAN_OBS = 10  # target full-fidelity obs before an online plan
MIN_KENDALL_OBS = 3
CV_FOLDS = 5

CSV_COLUMNS = ["elapsed_s", "mode", "bracket", "rung", "delta", "config_id",
               "status", "latency_s", "best_full_fidelity_s"]


@dataclass
class TuningResult:
    best_config: Configuration | None
    best_latency: float
    ledger: RunLedger
    modes_seen: list[str]


class TuningController:

    def __init__(self, space: ConfigSpace, evaluate, queries: list[str],
                 history: Sequence[TaskRecord], meta_feature,
                 budget_s: float, seed: int, alpha: float = 0.65,
                 eta: int = 3, max_resource: int = 9,
                 output_dir: str | Path | None = None,
                 store: KnowledgeStore | None = None,
                 task_id: str = "current",
                 enable_mfo: bool = True,
                 restrict_to: Sequence[Configuration] | None = None):
        self.space = space
        self.evaluate = evaluate
        self.queries = list(queries)
        self.history = list(history)
        self.meta_feature = meta_feature
        self.budget_s = budget_s
        self.seed = seed
        self.alpha = alpha
        self.eta = eta
        self.max_resource = max_resource
        self.output_dir = Path(output_dir) if output_dir else None
        self.store = store
        self.task_id = task_id
        self.enable_mfo = enable_mfo
        self.restrict_to = list(restrict_to) if restrict_to else None

        self.ledger = RunLedger()
        self.budget = BudgetTracker(limit_s=budget_s, ledger=self.ledger)
        self.target_obs = ObservationSet()
        self.fidelity_obs: dict[float, ObservationSet] = {}
        self.transitioned = False
        self.plan: fidelity.FidelityPlan | None = None
        self.pool: generator.WarmStartPool | None = None
        self.report: SimilarityReport | None = None
        self.compressed: SubSpace = SubSpace.unchanged(space)
        self.meta_reg = None
        self.phase1_done = False
        self._ff_bo_ran = False  # one staged iteration before an online plan
        self._value_set_cache: dict[tuple, dict] = {}
        self.brackets = scheduler.hyperband_schedule(max_resource, eta)
        self._bracket_cursor = 0
        self._iteration = 0
        if self.store is not None:
            self.store.init_task(task_id, self.queries, meta_feature)
        if self.output_dir:
            self.output_dir.mkdir(parents=True, exist_ok=True)

    # -- similarity ---------------------------------------------------------

    def _refresh_similarity(self) -> None:
        taus: dict[str, float] = {}
        pvals: dict[str, float] = {}
        kendall: dict[str, tuple[float, float]] = {}
        n_ok = sum(1 for _, _, _, st in self.target_obs.entries if st == STATUS_OK)
        if n_ok >= MIN_KENDALL_OBS:
            for task in self.history:
                try:
                    tau, p = similarity.task_similarity(
                        task, self.space, self.target_obs, seed=self.seed)
                    kendall[task.task_id] = (tau, p)
                except (DegenerateRankingError, ValueError,
                        InsufficientDataError):
                    continue
            if not self.transitioned and kendall and \
                    similarity.should_transition(list(kendall.values())):
                self.transitioned = True
                log.info("similarity transitioned to measured Kendall-tau")
        if not self.transitioned and not self.history:
            # No sources: the transition rule falls back to the target's own
            # cross-validated rank correlation becoming significant.
            tau, p = similarity.target_self_tau(
                self.target_obs, self.space, folds=CV_FOLDS, seed=self.seed)
            if tau > 0 and p < similarity.P_THRESHOLD:
                self.transitioned = True
                log.info("target self-correlation significant; transitioned")
        if self.transitioned:
            taus = {tid: t for tid, (t, _) in kendall.items()}
            pvals = {tid: p for tid, (_, p) in kendall.items()}
            mode = MODE_KENDALL
        else:
            if self.meta_reg is None and len(self.history) >= 2:
                self.meta_reg = similarity.fit_meta_regressor(
                    self.history, self.space, seed=self.seed)
            if self.meta_reg is not None:
                taus = {t.task_id: similarity.predict_similarity(
                    self.meta_reg, t.meta, self.meta_feature)
                    for t in self.history}
            pvals = {tid: p for tid, (_, p) in kendall.items()}
            mode = MODE_PREDICTED
        target_tau = similarity.target_self_weight(
            self.target_obs, self.space, folds=CV_FOLDS, seed=self.seed)
        self.report = similarity.to_weights(taus, target_tau, pvals, mode)

    def _weighted_sources(self) -> list[tuple[TaskRecord, float]]:
        if self.report is None:
            return []
        by_id = {t.task_id: t for t in self.history}
        return [(by_id[tid], w) for tid, w in self.report.weights.items()
                if tid in by_id]

    def _target_as_task(self) -> TaskRecord | None:
        """Pseudo-source built from the target's own full-fidelity results."""
        entries = self.ledger.full_fidelity_ok()
        if len(entries) < 2:
            return None
        obs = [(e.config, e.latencies.copy(), e.latencies.copy())
               for e in entries if len(e.latencies) == len(self.queries)]
        if len(obs) < 2:
            return None
        return TaskRecord(task_id="__target__", meta=np.asarray(self.meta_feature),
                          queries=self.queries, observations=obs)

    # -- compression --------------------------------------------------------

    def _cached_value_sets(self, task: TaskRecord) -> dict:
        key = (task.task_id, len(task.observations))
        if key not in self._value_set_cache:
            self._value_set_cache[key] = compression.extract_promising_values(
                task, self.space, weight=1.0, seed=self.seed)
        return self._value_set_cache[key]

    def _refresh_compression(self) -> None:
        sources = self._weighted_sources()
        per_source = [(compression.scale_value_sets(self._cached_value_sets(t), w), w)
                      for t, w in sources]
        if self.report is not None and self.report.target_weight > 0:
            target = self._target_as_task()
            if target is not None:
                vs = compression.extract_promising_values(
                    target, self.space, weight=self.report.target_weight,
                    seed=self.seed)
                per_source.append((vs, self.report.target_weight))
        if not per_source:
            self.compressed = SubSpace.unchanged(self.space)
            return
        self.compressed = compression.compress_from_value_sets(
            per_source, self.space, self.alpha)

    # -- fidelity plan ------------------------------------------------------

    def _maybe_build_plan(self) -> None:
        if self.plan is not None or not self.enable_mfo:
            return
        sources = [(t, w) for t, w in self._weighted_sources()
                   if list(t.queries) == self.queries]
        if sources:
            try:
                self.plan = fidelity.build_plan(
                    self.queries, self.eta, self.max_resource, sources,
                    source_mode=fidelity.MODE_HISTORICAL)
                return
            except ValueError:
                pass
        if self.transitioned and self._ff_bo_ran and \
                len(self.ledger.full_fidelity_ok()) >= MIN_ONLINE_PLAN_OBS:
            target = self._target_as_task()
            if target is not None:
                try:
                    self.plan = fidelity.build_plan(
                        self.queries, self.eta, self.max_resource,
                        [(target, 1.0)], source_mode=fidelity.MODE_ONLINE)
                except ValueError:
                    pass

    # -- surrogate ensemble -------------------------------------------------

    def _models(self) -> tuple[list, list]:
        """(model, weight) pairs plus per-model y_best, combining historical
        sources, per-fidelity target surrogates, and the target surrogate."""
        raw: list[tuple[SurrogateModel, float, float]] = []
        for task, w in self._weighted_sources():
            try:
                m = task.surrogate(self.space, seed=self.seed)
            except InsufficientDataError:
                continue
            raw.append((m, w, m.y_train_best))
        n_ok = sum(1 for _, _, _, st in self.target_obs.entries if st == STATUS_OK)
        for delta, obs in sorted(self.fidelity_obs.items()):
            if delta == 1.0 or len(obs) < MIN_KENDALL_OBS:
                continue
            try:
                m = SurrogateModel(self.space, log_target=True).fit(obs, seed=self.seed)
            except (InsufficientDataError, ValueError):
                continue
            w = self._fidelity_weight(m)
            if w > 0:
                raw.append((m, w, m.y_train_best))
        if n_ok >= max(N_INIT_LHS, 2):
            try:
                m = SurrogateModel(self.space, log_target=True).fit(
                    self.target_obs, seed=self.seed)
                w = self.report.target_weight if self.report else 1.0
                raw.append((m, max(w, 0.1), m.y_train_best))
            except (InsufficientDataError, ValueError):
                pass
        total = sum(w for _, w, _ in raw)
        if total <= 0:
            return [], []
        models = [(m, w / total) for m, w, _ in raw]
        y_bests = [yb for _, _, yb in raw]
        return models, y_bests

    def _fidelity_weight(self, model: SurrogateModel) -> float:
        ok = [(cfg, y) for cfg, y, _, st in self.target_obs.entries
              if st == STATUS_OK]
        if len(ok) < MIN_KENDALL_OBS:
            return 0.1
        preds, _ = model.predict_batch([c for c, _ in ok])
        try:
            tau, _ = similarity.kendall_tau(preds, [y for _, y in ok])
        except DegenerateRankingError:
            return 0.0
        return max(tau, 0.0)

    # -- evaluation plumbing ------------------------------------------------

    def _record(self, cfg: Configuration, delta: float, result: EvaluationResult,
                bracket: int, rung: int, mode: str) -> scheduler.LedgerEntry:
        entry = self.ledger.record(cfg, delta, result, bracket, rung, mode)
        agg = entry.total_latency
        if result.status == STATUS_OK:
            self.fidelity_obs.setdefault(delta, ObservationSet()).add(
                cfg, agg, fidelity=delta, status=STATUS_OK)
            if delta == 1.0:
                self.target_obs.add(cfg, agg, fidelity=1.0, status=STATUS_OK)
        elif result.status == STATUS_FAILED:
            # Failed runs train with a penalty; early-stopped runs carry an
            # incomparable partial latency and are excluded from training.
            self.fidelity_obs.setdefault(delta, ObservationSet()).add(
                cfg, math.nan, fidelity=delta, status=result.status)
        if self.store is not None:
            self.store.append_observation(self.task_id, cfg,
                                          entry.latencies, entry.latencies,
                                          result.status, delta)
        return entry

    def _evaluate_full(self, cfg: Configuration, mode: str,
                       use_early_stop: bool = True) -> None:
        guard = scheduler.early_stop_guard(self.ledger, 1.0) if use_early_stop else None
        result = self.evaluate(cfg, None, guard)
        self._record(cfg, 1.0, result, bracket=-1, rung=0, mode=mode)

    def _elites(self) -> list[Configuration]:
        entries = sorted(self.ledger.full_fidelity_ok(),
                         key=lambda e: e.total_latency)
        return [e.config for e in entries[:generator.N_ELITES]]

    # -- proposal -----------------------------------------------------------

    def _propose_full_fidelity(self, mode: str, n: int) -> list[Configuration]:
        seen = self.ledger.seen_configs()
        seed = self.seed + 1000 * self._iteration
        if self.restrict_to is not None:
            pool = [c for c in self.restrict_to if c.key() not in seen]
            if not pool:
                return []
            models, ybs = self._models()
            if models:
                ranked = generator.combined_rank(pool, models, ybs)
                return ranked[:n]
            return pool[:n]
        n_ok = sum(1 for _, _, _, st in self.target_obs.entries if st == STATUS_OK)
        models, ybs = ([], [])
        if mode != MODE_VANILLA_BO or n_ok >= N_INIT_LHS:
            models, ybs = self._models()
        batch = generator.propose_batch(
            n1=n, multi_rung=False, full_fidelity_survivors=0, pool=None,
            models=models, y_bests=ybs,
            space=self.compressed, seed=seed,
            elite_configs=self._elites(), exclude=seen)
        return batch.configs

    def _next_bracket(self) -> Bracket:
        b = self.brackets[self._bracket_cursor % len(self.brackets)]
        self._bracket_cursor += 1
        return b

    # -- main loop ----------------------------------------------------------

    def run(self) -> TuningResult:
        modes_seen: list[str] = []
        csv_rows_written = 0
        writer_ctx = None
        if self.output_dir:
            csv_fh = open(self.output_dir / "convergence.csv", "w", newline="")
            writer = csv.writer(csv_fh)
            writer.writerow(CSV_COLUMNS)
        else:
            csv_fh = writer = None

        running_best = math.inf

        def flush_rows():
            nonlocal csv_rows_written, running_best
            if writer is None:
                csv_rows_written = len(self.ledger.entries)
                return
            for e in self.ledger.entries[csv_rows_written:]:
                if e.delta == 1.0 and e.status == STATUS_OK:
                    running_best = min(running_best, e.total_latency)
                best = "" if math.isinf(running_best) else f"{running_best:.6f}"
                writer.writerow([f"{e.elapsed_s:.6f}", e.mode, e.bracket,
                                 e.rung, f"{e.delta:.6g}", e.config_id,
                                 e.status, f"{e.total_latency:.6f}", best])
            csv_rows_written = len(self.ledger.entries)
            csv_fh.flush()

        try:
            while not self.budget.exhausted:
                self._iteration += 1
                self._refresh_similarity()
                self._refresh_compression()
                self._maybe_build_plan()
                mode = scheduler.select_mode(
                    has_plan=self.plan is not None,
                    has_sources=bool(self.report and self.report.weights),
                    transitioned=self.transitioned)
                modes_seen.append(mode)
                if mode == MODE_FULL_FIDELITY_BO:
                    self._ff_bo_ran = True

                if not self.phase1_done:
                    self.phase1_done = True
                    cfg = generator.phase1_config(self._weighted_sources())
                    if cfg is not None and self.restrict_to is None:
                        self._evaluate_full(cfg, mode, use_early_stop=False)

                if mode == MODE_FULL_MFO:
                    self._run_mfo_iteration(mode)
                else:
                    batch = self._propose_full_fidelity(mode, FULL_FIDELITY_BATCH)
                    if not batch:
                        break
                    for cfg in batch:
                        if self.budget.exhausted:
                            break
                        self._evaluate_full(cfg, mode)
                flush_rows()
        finally:
            flush_rows()
            if csv_fh is not None:
                csv_fh.close()
            self._write_artifacts()
            if self.store is not None:
                self.store.finalize_task(self.task_id)
        return TuningResult(best_config=self.ledger.best_config,
                            best_latency=self.ledger.best_latency,
                            ledger=self.ledger, modes_seen=modes_seen)

    def _run_mfo_iteration(self, mode: str) -> None:
        bracket = self._next_bracket()
        if self.pool is None:
            sources = self._weighted_sources()
            exclude = []
            p1 = generator.phase1_config(sources)
            if p1 is not None:
                exclude.append(p1)
            self.pool = generator.build_warm_start_pool(sources, exclude=exclude)
        models, ybs = self._models()
        seed = self.seed + 1000 * self._iteration
        batch = generator.propose_batch(
            n1=bracket.n1, multi_rung=not bracket.single_rung,
            full_fidelity_survivors=bracket.full_fidelity_survivors,
            pool=self.pool, models=models, y_bests=ybs,
            space=self.compressed, seed=seed,
            elite_configs=self._elites(),
            exclude=self.ledger.seen_configs())
        scheduler.run_bracket(bracket, batch.configs, self.plan, self.evaluate,
                              self.ledger, self.budget, mode,
                              record=self._record)

    def _write_artifacts(self) -> None:
        if not self.output_dir:
            return
        best = {"best_latency_s": (None if self.ledger.best_config is None
                                   else self.ledger.best_latency),
                "config": (None if self.ledger.best_config is None
                           else self.ledger.best_config.as_dict(self.space))}
        (self.output_dir / "best_config.json").write_text(
            json.dumps(best, indent=2))
        self.compressed.save(self.output_dir / "compressed_space.json")
        if self.plan is not None:
            self.plan.save(self.output_dir / "fidelity_plan.json")
