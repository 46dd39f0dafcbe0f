"""Reported summary statistics, their pseudo-data counterparts, and the distance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

# Canonical ordering of summary fields inside a summary vector.
FIELD_ORDER = ("min", "q1", "median", "q3", "max", "mean", "sd")
ORDERED_FIELDS = ("min", "q1", "median", "q3", "max")
LOCATION_FIELDS = frozenset({"min", "q1", "median", "q3", "max", "mean"})

QUANTILE_PROBS = {"min": 0.0, "q1": 0.25, "median": 0.5, "q3": 0.75, "max": 1.0}
FIELD_ALIASES = {"q2": "median", "med": "median", "xmin": "min", "xmax": "max", "std": "sd"}

# h = (n - 1) p + 1 on 1-based order statistics; the default of R's quantile().
DEFAULT_QUANTILE_METHOD = "linear"
QUANTILE_METHODS = ("linear", "weibull", "hazen")


def _canonical(fields: Iterable[str]) -> tuple[str, ...]:
    names = set()
    for f in fields:
        f = FIELD_ALIASES.get(f.lower(), f.lower())
        if f not in FIELD_ORDER:
            raise ValueError(f"unknown summary field {f!r}; valid fields: {', '.join(FIELD_ORDER)}")
        names.add(f)
    return tuple(f for f in FIELD_ORDER if f in names)


@dataclass(frozen=True)
class SummaryScenario:
    name: str
    fields: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", _canonical(self.fields))
        if not LOCATION_FIELDS.intersection(self.fields):
            raise ValueError(f"scenario {self.name} needs at least one location statistic")

    @classmethod
    def custom(cls, fields: Iterable[str]) -> SummaryScenario:
        return cls("custom", tuple(fields))

    @classmethod
    def parse(cls, name: str | SummaryScenario, fields: Iterable[str] | None = None) -> SummaryScenario:
        if isinstance(name, SummaryScenario):
            return name
        key = name.strip().upper()
        if key in SCENARIOS:
            return SCENARIOS[key]
        if key == "CUSTOM":
            if not fields:
                raise ValueError("custom scenario needs an explicit field set")
            return cls.custom(fields)
        raise ValueError(f"unknown scenario {name!r}; valid scenarios: S1, S2, S3, custom")

    def __str__(self):
        return self.name


S1 = SummaryScenario("S1", ("min", "median", "max"))
S2 = SummaryScenario("S2", ("min", "q1", "median", "q3", "max"))
S3 = SummaryScenario("S3", ("q1", "median", "q3"))
SCENARIOS = {"S1": S1, "S2": S2, "S3": S3}


class SummaryError(ValueError):
    """Reported statistics are missing or mutually inconsistent."""


@dataclass(frozen=True)
class SummaryStats:
    scenario: SummaryScenario
    n: int
    values: Mapping[str, float]

    def __post_init__(self):
        scen = SummaryScenario.parse(self.scenario, fields=self.values.keys())
        object.__setattr__(self, "scenario", scen)
        if int(self.n) != self.n or self.n < 2:
            raise SummaryError(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        vals = {FIELD_ALIASES.get(k.lower(), k.lower()): float(v) for k, v in self.values.items()}
        missing = [f for f in scen.fields if f not in vals]
        extra = [f for f in vals if f not in scen.fields]
        if missing or extra:
            raise SummaryError(
                f"scenario {scen.name} expects fields {list(scen.fields)}; "
                f"missing {missing}, unexpected {extra}"
            )
        for k, x in vals.items():
            if not math.isfinite(x):
                raise SummaryError(f"{k} must be finite, got {x}")
        present = [f for f in ORDERED_FIELDS if f in vals]
        for a, b in zip(present, present[1:]):
            if vals[a] > vals[b]:
                raise SummaryError(f"ordering violated: {a}={vals[a]:g} > {b}={vals[b]:g}")
        if "mean" in vals and "min" in vals and "max" in vals:
            if not vals["min"] <= vals["mean"] <= vals["max"]:
                raise SummaryError(
                    f"mean={vals['mean']:g} outside [min={vals['min']:g}, max={vals['max']:g}]"
                )
        if vals.get("sd", 0.0) < 0:
            raise SummaryError(f"sd must be >= 0, got {vals['sd']:g}")
        object.__setattr__(self, "values", {f: vals[f] for f in scen.fields})

    @classmethod
    def from_record(cls, text: str) -> SummaryStats:
        """Parse ``scenario=S3 n=111 q1=1.2 median=2.1 q3=4.6``."""
        items = {}
        for tok in text.replace(",", " ").split():
            key, sep, val = tok.partition("=")
            if not sep:
                raise SummaryError(f"expected key=value, got {tok!r}")
            items[key.strip().lower()] = val.strip()
        if "n" not in items:
            raise SummaryError("record is missing n")
        scenario = items.pop("scenario", "custom")
        n = items.pop("n")
        try:
            n_val = int(n)
            values = {k: float(v) for k, v in items.items()}
        except ValueError as exc:
            raise SummaryError(str(exc)) from None
        return cls(SummaryScenario.parse(scenario, fields=values.keys()), n_val, values)

    def to_record(self) -> str:
        parts = [f"scenario={self.scenario.name}", f"n={self.n}"]
        parts += [f"{k}={v!r}" for k, v in self.values.items()]
        return " ".join(parts)


def quantile_position(n: int, p: float, method: str = DEFAULT_QUANTILE_METHOD) -> float:
    """0-based fractional index of the p-quantile among ``n`` sorted values."""
    if method == "linear":
        h = (n - 1) * p
    elif method == "weibull":
        h = (n + 1) * p - 1
    elif method == "hazen":
        h = n * p - 0.5
    else:
        raise ValueError(f"unknown quantile method {method!r}; valid: {', '.join(QUANTILE_METHODS)}")
    return min(max(h, 0.0), n - 1.0)


def summarize_batch(
    x: np.ndarray, fields: Sequence[str], method: str = DEFAULT_QUANTILE_METHOD
) -> np.ndarray:
    """Summary vectors for each row of ``x`` (shape (m, n)) in canonical order."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    fields = _canonical(fields)
    plan = {}
    kth = set()
    for f in fields:
        if f in QUANTILE_PROBS:
            h = quantile_position(n, QUANTILE_PROBS[f], method)
            lo = int(math.floor(h))
            frac = h - lo
            hi = min(lo + 1, n - 1)
            plan[f] = (lo, hi, frac)
            kth.update((lo, hi))
    part = np.partition(x, sorted(kth), axis=1) if kth else x
    out = np.empty((x.shape[0], len(fields)))
    for j, f in enumerate(fields):
        if f in plan:
            lo, hi, frac = plan[f]
            col = part[:, lo]
            if frac:
                col = col + frac * (part[:, hi] - col)
            out[:, j] = col
        elif f == "mean":
            out[:, j] = x.mean(axis=1)
        elif f == "sd":
            out[:, j] = x.std(axis=1, ddof=1)
    return out


def compute_summary(
    data: Sequence[float], scenario: SummaryScenario | str, method: str = DEFAULT_QUANTILE_METHOD
) -> SummaryStats:
    data = np.asarray(data, dtype=float).ravel()
    if data.size < 2:
        raise SummaryError(f"need at least 2 observations, got {data.size}")
    scen = SummaryScenario.parse(scenario)
    row = summarize_batch(data[None, :], scen.fields, method)[0]
    return SummaryStats(scen, data.size, dict(zip(scen.fields, row.tolist())))


def summary_vector(s: SummaryStats) -> tuple[float, ...]:
    return tuple(s.values[f] for f in FIELD_ORDER if f in s.values)


def distance(a: Sequence[float], b: Sequence[float], scale: Sequence[float] | None = None) -> float:
    """Euclidean distance between two summary vectors.

    ``scale`` optionally divides each coordinate difference (per-field
    normalization); it is off by default.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"summary vectors differ in length: {a.shape} vs {b.shape}")
    d = a - b
    if scale is not None:
        d = d / np.asarray(scale, dtype=float)
    # math.hypot rescales internally, so tiny differences don't underflow to 0
    return math.hypot(*d.tolist())


def batch_distance(pseudo: np.ndarray, observed: np.ndarray, scale: np.ndarray | None = None) -> np.ndarray:
    d = pseudo - observed
    if scale is not None:
        d = d / scale
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def field_scales(s: SummaryStats) -> np.ndarray:
    """Per-field scales for the optional normalized distance."""
    v = np.abs(np.array(summary_vector(s)))
    v[v == 0] = 1.0
    return v
