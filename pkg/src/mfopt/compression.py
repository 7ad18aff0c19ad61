"""Search-space compression: SHAP-screened promising value sets, weighted
density modeling, and alpha-mass region extraction per knob."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attribution import forest_shap_values
from .similarity import TaskRecord
from .space import (NARROWED, REMOVED, UNCHANGED, ConfigSpace, Configuration,
                    KnobSpec, SubSpace)
from .surrogate import SurrogateModel

log = logging.getLogger(__name__)

GRID_CELLS = 512


@dataclass
class PromisingValueSet:
    """Weighted knob values taken from latency-reducing promising configs."""

    knob: str
    entries: list[tuple[float | str, float]]  # (value, weight >= 0)

    def __len__(self):
        return len(self.entries)


@dataclass
class DensityModel:
    kind: str                      # "continuous_kde" | "discrete_mass"
    knob: KnobSpec
    bandwidth: float | None = None
    points: np.ndarray | None = None      # transformed sample locations
    weights: np.ndarray | None = None     # normalized weights
    masses: dict | None = None            # categorical value -> mass

    def pdf(self, x: np.ndarray) -> np.ndarray:
        """Weighted Gaussian KDE density in the knob's transform domain."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = (x[:, None] - self.points[None, :]) / self.bandwidth
        k = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        return (k * self.weights[None, :]).sum(axis=1) / self.bandwidth


def promising_configs(task: TaskRecord) -> list[Configuration]:
    """Configurations with total latency strictly below the task median."""
    lats = task.total_latencies()
    if len(lats) < 2:
        return []
    med = float(np.median(lats))
    return [cfg for (cfg, _, _), y in zip(task.observations, lats) if y < med]


def shap_attribution(model: SurrogateModel,
                     cfg: Configuration) -> tuple[np.ndarray, float]:
    """Per-knob additive contributions and base value for one configuration.

    One-hot columns of a categorical knob are folded into a single entry.
    base + sum(contributions) equals the raw ensemble prediction.
    """
    model._check_fitted()
    X = model.encoder.encode([cfg])
    phis, base = forest_shap_values(model.forest, X)
    per_knob = np.zeros(len(model.space.knobs))
    for c in range(phis.shape[1]):
        per_knob[model.encoder.knob_of_column(c)] += phis[0, c]
    return per_knob, base


def _screening_surrogate(task: TaskRecord, space: ConfigSpace,
                         seed: int) -> SurrogateModel:
    """Forest used for SHAP screening: stronger regularization than the BO
    surrogate so knobs without real effect are never split on and end up
    with exactly-zero attributions (empty promising sets).

    The impurity gate scales with sample size: chance split gains shrink
    roughly with n while real effects do not, so small tasks get a lenient
    gate (conservative, removes little) and large tasks a strict one.
    """
    n = len(task.observations)
    frac = 0.04 * min(1.0, n / 200.0)
    leaf = max(2, min(8, n // 25))
    model = SurrogateModel(space, log_target=True,
                           max_depth=10, min_leaf=leaf, min_impurity_frac=frac)
    model.fit((task.configs(), task.total_latencies()), seed=seed)
    return model


def extract_promising_values(task: TaskRecord, space: ConfigSpace,
                             weight: float, seed: int = 0
                             ) -> dict[str, PromisingValueSet]:
    """Per knob, latency-reducing values from above-median configurations,
    weighted by task weight x relative improvement over the median."""
    if weight < 0:
        raise ValueError("weight must be >= 0")
    out = {k.name: PromisingValueSet(k.name, []) for k in space.knobs}
    lats = task.total_latencies()
    if len(lats) < 2:
        return out
    med = float(np.median(lats))
    if med <= 0:
        return out
    model = _screening_surrogate(task, space, seed)
    good = [(cfg, y) for (cfg, _, _), y in zip(task.observations, lats) if y < med]
    if not good:
        return out
    X = model.encoder.encode([cfg for cfg, _ in good])
    phis, _ = forest_shap_values(model.forest, X)
    for r, (cfg, y) in enumerate(good):
        v = weight * (med - y) / med
        per_knob = np.zeros(len(space.knobs))
        for c in range(phis.shape[1]):
            per_knob[model.encoder.knob_of_column(c)] += phis[r, c]
        for j, k in enumerate(space.knobs):
            if per_knob[j] < 0:
                out[k.name].entries.append((cfg.values[j], v))
    return out


def _weighted_quantile(x: np.ndarray, w: np.ndarray, q: float) -> float:
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    return float(np.interp(q * cw[-1], cw - 0.5 * w, x))


def fit_density(entries: PromisingValueSet, knob: KnobSpec) -> DensityModel:
    """Weighted KDE (Silverman bandwidth) for numeric knobs, normalized
    point masses for categoricals. Numeric densities live in the knob's
    transform domain (log for log_scale knobs)."""
    if not entries.entries:
        raise ValueError(f"{knob.name}: empty promising value set")
    vals = [v for v, _ in entries.entries]
    w = np.array([wt for _, wt in entries.entries], dtype=float)
    if w.sum() <= 0:
        raise ValueError(f"{knob.name}: all weights zero; knob should be removed")
    if knob.kind == "categorical":
        masses: dict = {}
        for val, wt in entries.entries:
            masses[val] = masses.get(val, 0.0) + wt
        total = sum(masses.values())
        return DensityModel(kind="discrete_mass", knob=knob,
                            masses={k: m / total for k, m in masses.items()})
    x = np.array([math.log(v) if knob.log_scale else float(v) for v in vals])
    wn = w / w.sum()
    mu = float(np.sum(wn * x))
    sigma = math.sqrt(float(np.sum(wn * (x - mu) ** 2)))
    iqr = _weighted_quantile(x, wn, 0.75) - _weighted_quantile(x, wn, 0.25)
    n_eff = (w.sum() ** 2) / float(np.sum(w ** 2))
    spread = min(sigma, iqr / 1.34) if iqr > 0 else sigma
    h = 0.9 * spread * n_eff ** (-0.2)
    if h <= 0:
        # Degenerate sample (single point or exact ties): fall back to 1%
        # of the transformed range so the density stays well defined.
        h = 0.01 * (knob._thigh() - knob._tlow())
    return DensityModel(kind="continuous_kde", knob=knob, bandwidth=h,
                        points=x, weights=wn)


def minimal_alpha_region(density: DensityModel, alpha: float,
                         knob: KnobSpec | None = None):
    """Smallest region capturing at least alpha of the (grid) probability mass.

    Continuous: the minimal-length contiguous window of a 512-cell grid over
    the original range whose mass reaches alpha (ties broken by captured
    mass, then leftmost). A single interval by construction, so it maps
    directly onto a narrowed knob range.
    Categorical: minimal prefix of values sorted by descending mass.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    knob = knob or density.knob
    if density.kind == "discrete_mass":
        items = sorted(density.masses.items(),
                       key=lambda kv: (-kv[1], str(kv[0])))
        picked, acc = [], 0.0
        for val, m in items:
            picked.append(val)
            acc += m
            if acc >= alpha - 1e-12:
                break
        # Preserve the knob's canonical value order.
        return tuple(v for v in knob.values if v in picked)
    tlo, thi = knob._tlow(), knob._thigh()
    edges = np.linspace(tlo, thi, GRID_CELLS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    mass = density.pdf(centers)
    total = mass.sum()
    if total <= 0:
        return (knob.low, knob.high)
    mass = mass / total
    best = None  # (cell count, -captured mass, start index)
    acc, i = 0.0, 0
    for j in range(GRID_CELLS):
        acc += mass[j]
        while acc - mass[i] >= alpha - 1e-12 and i < j:
            acc -= mass[i]
            i += 1
        if acc >= alpha - 1e-12:
            cand = (j - i + 1, -acc, i)
            if best is None or cand < best:
                best = cand
    if best is None:  # numerical shortfall: cover the full range
        return (knob.low, knob.high)
    width, _, start = best
    lo_t = edges[start]
    hi_t = edges[start + width]
    lo = math.exp(lo_t) if knob.log_scale else lo_t
    hi = math.exp(hi_t) if knob.log_scale else hi_t
    lo, hi = max(lo, knob.low), min(hi, knob.high)
    if knob.kind == "integer":
        lo, hi = math.floor(lo), math.ceil(hi)
        lo, hi = max(lo, int(knob.low)), min(hi, int(knob.high))
        if lo >= hi:  # snap collapsed the interval; widen by one step
            lo, hi = max(lo - 1, int(knob.low)), min(hi + 1, int(knob.high))
    return (lo, hi)


def build_compressed_space(sources: Sequence[tuple[TaskRecord, float]],
                           space: ConfigSpace, alpha: float,
                           seed: int = 0) -> SubSpace:
    """Per knob: removed when the weighted empty-vote exceeds 0.5, otherwise
    narrowed to the alpha-mass region of the union density."""
    total_w = sum(w for _, w in sources)
    if total_w <= 0:
        return SubSpace.unchanged(space)
    per_source = [(extract_promising_values(task, space, w, seed=seed), w)
                  for task, w in sources]
    return compress_from_value_sets(per_source, space, alpha)


def scale_value_sets(value_sets: dict[str, PromisingValueSet],
                     factor: float) -> dict[str, PromisingValueSet]:
    """Rescale cached unit-weight value sets by a task weight."""
    return {name: PromisingValueSet(name, [(v, wt * factor)
                                           for v, wt in pv.entries])
            for name, pv in value_sets.items()}


def compress_from_value_sets(per_source: Sequence[tuple[dict[str, PromisingValueSet], float]],
                             space: ConfigSpace, alpha: float) -> SubSpace:
    total_w = sum(w for _, w in per_source)
    if total_w <= 0:
        return SubSpace.unchanged(space)
    status: list[tuple[str, object]] = []
    for k in space.knobs:
        vote = sum(w for pv, w in per_source if len(pv[k.name]) == 0) / total_w
        if vote > 0.5:
            status.append((REMOVED, None))
            continue
        union = PromisingValueSet(k.name, [])
        for pv, _ in per_source:
            union.entries.extend(pv[k.name].entries)
        if not union.entries or sum(wt for _, wt in union.entries) <= 0:
            status.append((UNCHANGED, None))
            continue
        density = fit_density(union, k)
        region = minimal_alpha_region(density, alpha, k)
        if k.kind == "categorical":
            if len(region) == len(k.values):
                status.append((UNCHANGED, None))
            else:
                status.append((NARROWED, tuple(region)))
        else:
            lo, hi = region
            if lo <= k.low and hi >= k.high:
                status.append((UNCHANGED, None))
            elif lo < hi:
                status.append((NARROWED, (lo, hi)))
            else:
                status.append((UNCHANGED, None))
    if all(tag == REMOVED for tag, _ in status):
        log.warning("compression removed every knob; keeping original space")
        return SubSpace.unchanged(space)
    return SubSpace(space, tuple(status))
