"""Knob search space: definitions, LHS sampling, mutation, compressed subspaces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.stats import qmc


class SpaceError(ValueError):
    """Raised for invalid space definitions or degenerate subspaces."""


class ValidationError(ValueError):
    """Raised when a configuration does not fit its space."""


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@dataclass(frozen=True)
class KnobSpec:
    """One tunable knob: continuous, integer, or categorical."""

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    values: tuple[Any, ...] | None = None
    log_scale: bool = False
    default: Any = None

    def __post_init__(self):
        if self.kind not in ("continuous", "integer", "categorical"):
            raise SpaceError(f"unknown knob kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.values:
                raise SpaceError(f"{self.name}: categorical knob needs values")
            if len(set(self.values)) != len(self.values):
                raise SpaceError(f"{self.name}: duplicate categorical values")
            if self.default not in self.values:
                raise SpaceError(f"{self.name}: default not in values")
        else:
            if self.low is None or self.high is None or not self.low < self.high:
                raise SpaceError(f"{self.name}: need low < high")
            if self.log_scale and self.low <= 0:
                raise SpaceError(f"{self.name}: log-scale range must be positive")
            if self.default is None or not self.low <= self.default <= self.high:
                raise SpaceError(f"{self.name}: default outside range")

    @property
    def is_numeric(self) -> bool:
        return self.kind != "categorical"

    # Unit-interval transforms used by LHS, mutation, and density grids.
    # log_scale knobs work in the log domain.
    def to_unit(self, value) -> float:
        if self.kind == "categorical":
            return self.values.index(value) / max(len(self.values) - 1, 1)
        lo, hi = self._tlow(), self._thigh()
        v = math.log(value) if self.log_scale else float(value)
        return (v - lo) / (hi - lo)

    def from_unit(self, u: float):
        if self.kind == "categorical":
            idx = min(int(u * len(self.values)), len(self.values) - 1)
            return self.values[idx]
        lo, hi = self._tlow(), self._thigh()
        v = lo + u * (hi - lo)
        if self.log_scale:
            v = math.exp(v)
        if self.kind == "integer":
            v = min(max(_round_half_away(v), int(self.low)), int(self.high))
        return v

    def _tlow(self) -> float:
        return math.log(self.low) if self.log_scale else float(self.low)

    def _thigh(self) -> float:
        return math.log(self.high) if self.log_scale else float(self.high)

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.values
        if self.kind == "integer" and float(value) != int(value):
            return False
        return self.low <= value <= self.high

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind,
                             "log_scale": self.log_scale, "default": self.default}
        if self.kind == "categorical":
            d["values"] = list(self.values)
        else:
            d["range"] = [self.low, self.high]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KnobSpec":
        if d["kind"] == "categorical":
            return cls(name=d["name"], kind="categorical",
                       values=tuple(d["values"]),
                       log_scale=d.get("log_scale", False), default=d["default"])
        lo, hi = d["range"]
        return cls(name=d["name"], kind=d["kind"], low=lo, high=hi,
                   log_scale=d.get("log_scale", False), default=d["default"])


@dataclass(frozen=True)
class Configuration:
    """One value per knob, in ConfigSpace order."""

    values: tuple[Any, ...]

    def __len__(self):
        return len(self.values)

    def key(self) -> tuple:
        return self.values

    def as_dict(self, space: "ConfigSpace") -> dict:
        return {k.name: v for k, v in zip(space.knobs, self.values)}


@dataclass(frozen=True)
class ConfigSpace:
    """Ordered knob list; knob order defines the configuration vector layout."""

    knobs: tuple[KnobSpec, ...]

    def __post_init__(self):
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate knob names")
        if not self.knobs:
            raise SpaceError("empty space")

    def __len__(self):
        return len(self.knobs)

    def index(self, name: str) -> int:
        for i, k in enumerate(self.knobs):
            if k.name == name:
                return i
        raise KeyError(name)

    def default_configuration(self) -> Configuration:
        return Configuration(tuple(k.default for k in self.knobs))

    def validate(self, cfg: Configuration) -> None:
        if len(cfg) != len(self.knobs):
            raise ValidationError(
                f"configuration has {len(cfg)} values, space has {len(self.knobs)} knobs")
        for k, v in zip(self.knobs, cfg.values):
            if not k.contains(v):
                raise ValidationError(f"{k.name}: value {v!r} outside range")

    def from_dict_values(self, d: dict) -> Configuration:
        return Configuration(tuple(d[k.name] for k in self.knobs))

    def to_dict(self) -> dict:
        return {"knobs": [k.to_dict() for k in self.knobs]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigSpace":
        return cls(tuple(KnobSpec.from_dict(kd) for kd in d["knobs"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ConfigSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


UNCHANGED = "unchanged"
REMOVED = "removed"
NARROWED = "narrowed"


@dataclass(frozen=True)
class SubSpace:
    """Compressed view of a ConfigSpace: knobs removed or range-narrowed.

    Removed knobs are pinned to their default when materializing a
    configuration. Narrowed ranges must be subsets of the parent ranges.
    """

    parent: ConfigSpace
    status: tuple[tuple[str, Any], ...] = ()  # per knob: (tag, payload)

    def __post_init__(self):
        st = self.status or tuple((UNCHANGED, None) for _ in self.parent.knobs)
        if len(st) != len(self.parent.knobs):
            raise SpaceError("status length mismatch")
        object.__setattr__(self, "status", tuple(st))
        for k, (tag, payload) in zip(self.parent.knobs, self.status):
            if tag == NARROWED:
                if k.kind == "categorical":
                    if not payload or not set(payload) <= set(k.values):
                        raise SpaceError(f"{k.name}: narrowed values not a subset")
                else:
                    lo, hi = payload
                    if not (k.low <= lo < hi <= k.high):
                        raise SpaceError(f"{k.name}: narrowed range not a subrange")
            elif tag not in (UNCHANGED, REMOVED):
                raise SpaceError(f"unknown status tag {tag!r}")

    @classmethod
    def unchanged(cls, parent: ConfigSpace) -> "SubSpace":
        return cls(parent, tuple((UNCHANGED, None) for _ in parent.knobs))

    def removed_names(self) -> list[str]:
        return [k.name for k, (tag, _) in zip(self.parent.knobs, self.status)
                if tag == REMOVED]

    def effective_knob(self, i: int) -> KnobSpec | None:
        """The knob as seen by samplers: None if removed, narrowed spec otherwise."""
        k = self.parent.knobs[i]
        tag, payload = self.status[i]
        if tag == REMOVED:
            return None
        if tag == UNCHANGED:
            return k
        if k.kind == "categorical":
            default = k.default if k.default in payload else payload[0]
            return KnobSpec(name=k.name, kind="categorical",
                            values=tuple(payload), default=default)
        lo, hi = payload
        default = min(max(k.default, lo), hi)
        return KnobSpec(name=k.name, kind=k.kind, low=lo, high=hi,
                        log_scale=k.log_scale, default=default)

    def active_knobs(self) -> list[tuple[int, KnobSpec]]:
        out = []
        for i in range(len(self.parent.knobs)):
            k = self.effective_knob(i)
            if k is not None:
                out.append((i, k))
        return out

    def validate(self, cfg: Configuration) -> None:
        self.parent.validate(cfg)
        for i, (k, (tag, payload)) in enumerate(zip(self.parent.knobs, self.status)):
            v = cfg.values[i]
            if tag == REMOVED:
                if v != k.default:
                    raise ValidationError(f"{k.name}: removed knob must be default")
            elif tag == NARROWED:
                eff = self.effective_knob(i)
                if not eff.contains(v):
                    raise ValidationError(f"{k.name}: value {v!r} outside narrowed range")

    def to_dict(self) -> dict:
        knobs = []
        for i, k in enumerate(self.parent.knobs):
            eff = self.effective_knob(i)
            knobs.append((eff or k).to_dict())
        return {"knobs": knobs, "removed": self.removed_names()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _as_subspace(space: ConfigSpace | SubSpace) -> SubSpace:
    return space if isinstance(space, SubSpace) else SubSpace.unchanged(space)


def lhs_sample(space: ConfigSpace | SubSpace, n: int, seed: int) -> list[Configuration]:
    """Latin Hypercube sample of n full-dimensional configurations.

    Numeric knobs get exactly one sample per equal-probability stratum
    (log-domain strata for log_scale knobs); categoricals are uniform.
    Removed knobs are pinned to their defaults.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sub = _as_subspace(space)
    active = sub.active_knobs()
    if not active:
        raise SpaceError("degenerate subspace: all knobs removed")
    rng = np.random.default_rng(seed)
    numeric = [(i, k) for i, k in active if k.is_numeric]
    if numeric:
        sampler = qmc.LatinHypercube(d=len(numeric), seed=rng)
        unit = sampler.random(n)
    base = sub.parent.default_configuration().values
    out = []
    for row in range(n):
        vals = list(base)
        col = 0
        for i, k in active:
            if k.is_numeric:
                vals[i] = k.from_unit(unit[row, col])
                col += 1
            else:
                vals[i] = k.values[rng.integers(len(k.values))]
        out.append(Configuration(tuple(vals)))
    return out


def mutate(cfg: Configuration, space: ConfigSpace | SubSpace,
           strength: float, seed: int, scale: float = 0.2) -> Configuration:
    """Perturb each knob independently with probability `strength`.

    Numeric knobs take a clipped Gaussian step with sigma = `scale` of the
    range (in the knob's transform domain); categoricals resample uniformly.
    """
    sub = _as_subspace(space)
    rng = np.random.default_rng(seed)
    vals = list(cfg.values)
    for i, k in sub.active_knobs():
        if rng.uniform() >= strength:
            continue
        if k.is_numeric:
            u = k.to_unit(vals[i]) + rng.normal(0.0, scale)
            vals[i] = k.from_unit(min(max(u, 0.0), 1.0))
        else:
            vals[i] = k.values[rng.integers(len(k.values))]
    return Configuration(tuple(vals))


def materialize(sub: SubSpace, cfg: Configuration) -> Configuration:
    """Full-dimensional configuration with removed knobs at their defaults."""
    vals = list(cfg.values)
    for i, (k, (tag, _)) in enumerate(zip(sub.parent.knobs, sub.status)):
        if tag == REMOVED:
            vals[i] = k.default
        elif tag == NARROWED:
            eff = sub.effective_knob(i)
            if not eff.contains(vals[i]):
                raise ValidationError(
                    f"{k.name}: value {vals[i]!r} outside narrowed range")
    out = Configuration(tuple(vals))
    sub.parent.validate(out)
    return out
