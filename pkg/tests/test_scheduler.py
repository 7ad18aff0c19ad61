import math

import numpy as np
import pytest

from mfopt.evaluator import EvaluationResult
from mfopt.scheduler import (MODE_FULL_FIDELITY_BO, MODE_FULL_MFO,
                             MODE_VANILLA_BO, Bracket, BudgetTracker, Rung,
                             RunLedger, early_stop_guard, hyperband_schedule,
                             run_bracket, select_mode)
from mfopt.space import Configuration
from mfopt.surrogate import STATUS_EARLY_STOPPED, STATUS_FAILED, STATUS_OK


def grid(brackets):
    return {b.s: [(r.n, r.r) for r in b.rungs] for b in brackets}


class TestHyperbandSchedule:
    def test_r27_eta3_reference_table(self):
        # Known successive-halving ladders for R=27, eta=3.
        assert grid(hyperband_schedule(27, 3)) == {
            3: [(27, 1), (9, 3), (3, 9), (1, 27)],
            2: [(12, 3), (4, 9), (1, 27)],
            1: [(6, 9), (2, 27)],
            0: [(4, 27)],
        }

    def test_r9_eta3_delta_levels(self):
        brackets = hyperband_schedule(9, 3)
        deltas = sorted({r.delta for b in brackets for r in b.rungs})
        assert deltas == pytest.approx([1 / 9, 1 / 3, 1.0])
        assert grid(brackets) == {
            2: [(9, 1), (3, 3), (1, 9)],
            1: [(5, 3), (1, 9)],
            0: [(3, 9)],
        }

    def test_single_bracket_when_r_below_eta(self):
        brackets = hyperband_schedule(1, 3)
        assert grid(brackets) == {0: [(1, 1)]}

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            hyperband_schedule(0, 3)
        with pytest.raises(ValueError):
            hyperband_schedule(9, 1)

    def test_promotion_counts_floor_division(self):
        for b in hyperband_schedule(27, 3):
            for a, nxt in zip(b.rungs, b.rungs[1:]):
                assert nxt.n == a.n // 3


def result(latencies, status=STATUS_OK, queries=None):
    lats = np.asarray(latencies, dtype=float)
    return EvaluationResult(queries=queries or [f"q{i}" for i in range(len(lats))],
                            latencies=lats, costs=lats.copy(), status=status,
                            wall_cost=float(np.nansum(lats)) if len(lats) else 1.0)


class TestRunLedger:
    def test_best_tracks_full_fidelity_ok_only(self):
        led = RunLedger()
        c1, c2 = Configuration((1.0,)), Configuration((2.0,))
        led.record(c1, 1 / 3, result([1.0]), 0, 0, MODE_FULL_MFO)
        assert led.best_config is None
        led.record(c1, 1.0, result([5.0]), 0, 1, MODE_FULL_MFO)
        led.record(c2, 1.0, result([3.0]), 0, 1, MODE_FULL_MFO)
        assert led.best_config is c2 and led.best_latency == 3.0

    def test_elapsed_accumulates_wall_cost(self):
        led = RunLedger()
        led.record(Configuration((1.0,)), 1.0, result([2.0, 3.0]), 0, 0, "m")
        led.record(Configuration((2.0,)), 1.0, result([1.0]), 0, 0, "m")
        assert led.elapsed_s == pytest.approx(6.0)
        assert [e.elapsed_s for e in led.entries] == pytest.approx([5.0, 6.0])

    def test_config_ids_monotone(self):
        led = RunLedger()
        for i in range(4):
            led.record(Configuration((float(i),)), 1.0, result([1.0]), 0, 0, "m")
        assert [e.config_id for e in led.entries] == [0, 1, 2, 3]

    def test_costs_at_filters_by_delta(self):
        led = RunLedger()
        led.record(Configuration((1.0,)), 1 / 9, result([1.0]), 0, 0, "m")
        led.record(Configuration((2.0,)), 1.0, result([9.0]), 0, 1, "m")
        assert led.costs_at(1 / 9) == [1.0]
        assert led.costs_at(1.0) == [9.0]


class TestEarlyStopGuard:
    def test_inactive_below_five_priors(self):
        led = RunLedger()
        for i in range(4):
            led.record(Configuration((float(i),)), 1.0, result([10.0]), 0, 0, "m")
        guard = early_stop_guard(led, 1.0)
        assert not guard(1e9)

    def test_stops_strictly_above_median(self):
        led = RunLedger()
        for v in (10.0, 20.0, 30.0, 40.0, 50.0):
            led.record(Configuration((v,)), 1.0, result([v]), 0, 0, "m")
        guard = early_stop_guard(led, 1.0)
        assert guard(31.0)       # above median 30
        assert not guard(30.0)   # exactly the median continues
        assert not guard(29.0)

    def test_per_fidelity_isolation(self):
        led = RunLedger()
        for v in (1.0, 2.0, 3.0, 4.0, 5.0):
            led.record(Configuration((v,)), 1 / 3, result([v]), 0, 0, "m")
        assert not early_stop_guard(led, 1.0)(100.0)  # no full-fidelity priors


def make_evaluator(latency_of, fail=(), early=()):
    def evaluate(cfg, subset, guard):
        if cfg.values in fail:
            return result([], status=STATUS_FAILED)
        if cfg.values in early:
            return result([1.0], status=STATUS_EARLY_STOPPED)
        n = len(subset) if subset else 2
        per = latency_of(cfg) / n
        return result([per] * n)
    return evaluate


class TestRunBracket:
    def bracket(self):
        return Bracket(s=1, rungs=(Rung(n=4, r=3, delta=1 / 3),
                                   Rung(n=2, r=9, delta=1.0)))

    def batch(self):
        return [Configuration((float(v),)) for v in (4, 1, 3, 2)]

    def test_promotes_lowest_latency(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=1e9, ledger=led)
        entries = run_bracket(self.bracket(), self.batch(), None,
                              make_evaluator(lambda c: c.values[0]),
                              led, budget, MODE_FULL_MFO, use_early_stop=False)
        top = [e.config.values[0] for e in entries if e.delta == 1.0]
        assert sorted(top) == [1.0, 2.0]

    def test_failed_never_promoted(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=1e9, ledger=led)
        entries = run_bracket(self.bracket(), self.batch(), None,
                              make_evaluator(lambda c: c.values[0],
                                             fail={(1.0,), (2.0,)}),
                              led, budget, MODE_FULL_MFO, use_early_stop=False)
        top = [e.config.values[0] for e in entries if e.delta == 1.0]
        assert sorted(top) == [3.0, 4.0]

    def test_early_stopped_ranked_below_ok(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=1e9, ledger=led)
        entries = run_bracket(self.bracket(), self.batch(), None,
                              make_evaluator(lambda c: c.values[0],
                                             early={(1.0,), (2.0,)}),
                              led, budget, MODE_FULL_MFO, use_early_stop=False)
        top = [e.config.values[0] for e in entries if e.delta == 1.0]
        assert sorted(top) == [3.0, 4.0]

    def test_budget_exhaustion_breaks(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=2.5, ledger=led)
        entries = run_bracket(self.bracket(), self.batch(), None,
                              make_evaluator(lambda c: 1.0),
                              led, budget, MODE_FULL_MFO, use_early_stop=False)
        assert len(entries) == 3  # stopped mid-rung once elapsed >= 2.5

    def test_batch_size_must_match_n1(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=1e9, ledger=led)
        with pytest.raises(ValueError):
            run_bracket(self.bracket(), self.batch()[:2], None,
                        make_evaluator(lambda c: 1.0), led, budget, "m")

    def test_record_callback_observes_every_result(self):
        led = RunLedger()
        budget = BudgetTracker(limit_s=1e9, ledger=led)
        seen = []

        def record(cfg, delta, res, bracket, rung, mode):
            seen.append((cfg.values, delta))
            return led.record(cfg, delta, res, bracket, rung, mode)

        entries = run_bracket(self.bracket(), self.batch(), None,
                              make_evaluator(lambda c: c.values[0]),
                              led, budget, MODE_FULL_MFO,
                              use_early_stop=False, record=record)
        assert len(seen) == len(entries) == len(led.entries) == 6


class TestSelectMode:
    def test_ladder(self):
        assert select_mode(False, False, False) == MODE_VANILLA_BO
        assert select_mode(False, True, False) == MODE_FULL_FIDELITY_BO
        assert select_mode(False, False, True) == MODE_FULL_FIDELITY_BO
        assert select_mode(True, True, True) == MODE_FULL_MFO
        assert select_mode(True, False, False) == MODE_FULL_MFO
