"""Candidate distribution families, their moments, and uniform prior banks."""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

log = logging.getLogger(__name__)

# Lower bound used in place of 0 for scale/shape priors.
POSITIVE_FLOOR = 1e-6


class Family(str, enum.Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    WEIBULL = "weibull"
    BETA = "beta"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, name: str | Family) -> Family:
        if isinstance(name, Family):
            return name
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {"lnorm": "lognormal", "log normal": "lognormal", "exp": "exponential", "norm": "normal"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown family {name!r}; valid families: {valid}") from None

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self]

    @property
    def positive_params(self) -> tuple[bool, ...]:
        return POSITIVE[self]


ALL_FAMILIES: tuple[Family, ...] = tuple(Family)

PARAM_NAMES = {
    Family.NORMAL: ("mu", "sigma"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.WEIBULL: ("shape", "scale"),
    Family.BETA: ("alpha", "beta"),
    Family.EXPONENTIAL: ("mean",),
}

POSITIVE = {
    Family.NORMAL: (False, True),
    Family.LOGNORMAL: (False, True),
    Family.WEIBULL: (True, True),
    Family.BETA: (True, True),
    Family.EXPONENTIAL: (True,),
}

# Families whose support is the positive half-line.
POSITIVE_SUPPORT = frozenset({Family.LOGNORMAL, Family.WEIBULL, Family.EXPONENTIAL})


@dataclass(frozen=True)
class FamilyParams:
    """A family together with its ordered parameter values.

    Exponential is parameterized by its mean; Weibull by (shape, scale).
    """

    family: Family
    params: tuple[float, ...]

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if len(params) != len(fam.param_names):
            raise ValueError(
                f"{fam.value} takes {len(fam.param_names)} parameters "
                f"{fam.param_names}, got {len(params)}"
            )
        for name, value, positive in zip(fam.param_names, params, fam.positive_params):
            if not math.isfinite(value):
                raise ValueError(f"{fam.value} parameter {name} must be finite, got {value}")
            if positive and value <= 0:
                raise ValueError(f"{fam.value} parameter {name} must be > 0, got {value}")

    @classmethod
    def of(cls, family: str | Family, *params: float) -> FamilyParams:
        return cls(Family.parse(family), tuple(params))

    def __str__(self):
        inner = ", ".join(f"{v:g}" for v in self.params)
        return f"{self.family.value}({inner})"


def sample_batch(family: Family, params: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one pseudo-dataset of size ``n`` per parameter row.

    ``params`` has shape (m, n_params); returns an (m, n) array. No validation
    is done here; callers pass parameters drawn from a validated prior.
    """
    params = np.asarray(params, dtype=float)
    m = params.shape[0]
    if family is Family.NORMAL:
        return params[:, :1] + params[:, 1:2] * rng.standard_normal((m, n))
    if family is Family.LOGNORMAL:
        return np.exp(params[:, :1] + params[:, 1:2] * rng.standard_normal((m, n)))
    if family is Family.WEIBULL:
        return params[:, 1:2] * rng.weibull(params[:, :1], size=(m, n))
    if family is Family.BETA:
        return rng.beta(params[:, :1], params[:, 1:2], size=(m, n))
    if family is Family.EXPONENTIAL:
        return params[:, :1] * rng.standard_exponential((m, n))
    raise ValueError(f"unsupported family {family!r}")


def sample_n(p: FamilyParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent values from ``p``."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return sample_batch(p.family, np.array([p.params]), n, rng)[0]


def analytic_moments(p: FamilyParams) -> tuple[float, float]:
    """Theoretical (mean, sd) of a parameterized family."""
    fam, params = p.family, p.params
    if fam is Family.NORMAL:
        return params[0], params[1]
    if fam is Family.LOGNORMAL:
        mu, sigma = params
        s2 = sigma * sigma
        mean = math.exp(mu + s2 / 2)
        return mean, mean * math.sqrt(math.expm1(s2))
    if fam is Family.WEIBULL:
        k, lam = params
        g1 = gamma_fn(1 + 1 / k)
        g2 = gamma_fn(1 + 2 / k)
        return lam * g1, lam * math.sqrt(max(g2 - g1 * g1, 0.0))
    if fam is Family.BETA:
        a, b = params
        s = a + b
        return a / s, math.sqrt(a * b / (s * s * (s + 1)))
    if fam is Family.EXPONENTIAL:
        return params[0], params[0]
    raise ValueError(f"unsupported family {fam!r}")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise ValueError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")


class PriorError(ValueError):
    pass


@dataclass
class PriorBank:
    """Uniform prior intervals per family plus the initial model weights.

    ``intervals`` maps each active family to one :class:`Interval` per
    parameter. ``weights`` defaults to uniform over the active families.
    ``warnings`` records families that were dropped or flagged while the bank
    was built from data.
    """

    intervals: dict[Family, tuple[Interval, ...]]
    weights: dict[Family, float] | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.intervals:
            raise PriorError("prior bank has no active families")
        clean: dict[Family, tuple[Interval, ...]] = {}
        for fam, ivs in self.intervals.items():
            fam = Family.parse(fam)
            ivs = tuple(iv if isinstance(iv, Interval) else Interval(*iv) for iv in ivs)
            if len(ivs) != len(fam.param_names):
                raise PriorError(
                    f"{fam.value} prior needs {len(fam.param_names)} intervals, got {len(ivs)}"
                )
            for name, iv, positive in zip(fam.param_names, ivs, fam.positive_params):
                if positive and iv.lo <= 0:
                    raise PriorError(
                        f"{fam.value} prior for {name} allows non-positive draws "
                        f"(lo={iv.lo}); use a floor such as {POSITIVE_FLOOR}"
                    )
            clean[fam] = ivs
        self.intervals = clean
        if self.weights is None:
            k = len(clean)
            self.weights = {fam: 1.0 / k for fam in clean}
        else:
            w = {Family.parse(f): float(v) for f, v in self.weights.items()}
            if set(w) != set(clean):
                raise PriorError("weights must cover exactly the active families")
            if any(v <= 0 for v in w.values()):
                raise PriorError("model weights must be > 0")
            total = sum(w.values())
            if abs(total - 1.0) > 1e-12:
                raise PriorError(f"model weights must sum to 1, got {total!r}")
            self.weights = w

    @property
    def families(self) -> tuple[Family, ...]:
        return tuple(self.intervals)

    def restrict(self, families: Iterable[Family | str]) -> PriorBank:
        """Sub-bank over ``families`` with uniform weights."""
        fams = [Family.parse(f) for f in families]
        missing = [f.value for f in fams if f not in self.intervals]
        if missing:
            raise PriorError(f"families not in prior bank: {', '.join(missing)}")
        return PriorBank({f: self.intervals[f] for f in fams}, warnings=list(self.warnings))

    def draw_batch(self, family: Family, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` parameter rows for ``family``, one uniform per parameter."""
        ivs = self.intervals[family]
        lo = np.array([iv.lo for iv in ivs])
        hi = np.array([iv.hi for iv in ivs])
        return lo + (hi - lo) * rng.random((size, len(ivs)))

    def to_text(self) -> str:
        lines = []
        for fam, ivs in self.intervals.items():
            parts = [fam.value]
            for name, iv in zip(fam.param_names, ivs):
                parts.append(f"{name}=[{iv.lo!r}, {iv.hi!r}]")
            parts.append(f"weight={self.weights[fam]!r}")
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> PriorBank:
        """Parse the one-family-per-line format written by :meth:`to_text`.

        Example line: ``normal mu=[1.2, 4.6] sigma=[1e-06, 6.8]``. A trailing
        ``weight=`` is optional but must then be given for every family.
        """
        intervals: dict[Family, tuple[Interval, ...]] = {}
        weights: dict[Family, float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            fam = Family.parse(head)
            found = dict(_INTERVAL_RE.findall(rest))
            ivs = []
            for name in fam.param_names:
                if name not in found:
                    raise PriorError(f"line {lineno}: missing interval for {fam.value}.{name}")
                lo, hi = (float(x) for x in found[name].split(","))
                ivs.append(Interval(lo, hi))
            intervals[fam] = tuple(ivs)
            wm = _WEIGHT_RE.search(rest)
            if wm:
                weights[fam] = float(wm.group(1))
        if weights and set(weights) != set(intervals):
            raise PriorError("weight= must be given for all families or none")
        return cls(intervals, weights or None)


_INTERVAL_RE = re.compile(r"(\w+)\s*=\s*\[([^\]]+)\]")
_WEIGHT_RE = re.compile(r"weight\s*=\s*([0-9.eE+-]+)")


def draw_params(prior: PriorBank, family: Family | str, rng: np.random.Generator) -> FamilyParams:
    fam = Family.parse(family)
    if fam not in prior.intervals:
        raise PriorError(f"{fam.value} is not active in the prior bank")
    return FamilyParams(fam, tuple(prior.draw_batch(fam, 1, rng)[0]))


def _interval(lo: float, hi: float) -> Interval:
    if not hi > lo:
        hi = lo + max(POSITIVE_FLOOR, abs(lo) * 1e-6)
    return Interval(lo, hi)


def default_priors(stats, families: Sequence[Family | str] = ALL_FAMILIES) -> PriorBank:
    """Data-driven uniform priors for the requested families.

    Families with positive support are dropped (with a warning) when any
    reported statistic is <= 0. Beta is kept even for data outside [0, 1],
    with a warning, since its pseudo-data simply never matches.
    """
    v: Mapping[str, float] = stats.values
    if "median" not in v:
        raise PriorError("default priors need at least a median")
    med = v["median"]
    has_quart = "q1" in v and "q3" in v
    has_range = "min" in v and "max" in v
    floor = POSITIVE_FLOOR
    notes: list[str] = []
    intervals: dict[Family, tuple[Interval, ...]] = {}
    fallback = max(abs(med), 1.0)

    for fam in (Family.parse(f) for f in families):
        if fam in POSITIVE_SUPPORT and min(v.values()) <= 0:
            msg = f"{fam.value} dropped: reported statistics include values <= 0"
            notes.append(msg)
            log.info(msg)
            continue
        if fam is Family.NORMAL:
            if has_quart:
                mu = _interval(v["q1"], v["q3"])
            elif has_range:
                mu = _interval(v["min"], v["max"])
            else:
                mu = _interval(med - fallback, med + fallback)
            if has_range:
                sig_hi = v["max"] - v["min"]
            elif has_quart:
                sig_hi = 2 * (v["q3"] - v["q1"])
            else:
                sig_hi = 2 * fallback
            intervals[fam] = (mu, _interval(floor, max(sig_hi, 2 * floor)))
        elif fam is Family.LOGNORMAL:
            if has_quart:
                mu = _interval(math.log(v["q1"]), math.log(v["q3"]))
            elif has_range:
                mu = _interval(math.log(v["min"]), math.log(v["max"]))
            else:
                mu = _interval(math.log(med) - 1, math.log(med) + 1)
            sig_hi = max(2.0, math.log(v["max"] / v["min"])) if has_range else 2.0
            intervals[fam] = (mu, _interval(floor, sig_hi))
        elif fam is Family.WEIBULL:
            if has_range:
                lam_hi = 2 * v["max"]
            elif "q3" in v:
                lam_hi = 4 * v["q3"]
            else:
                lam_hi = 4 * med
            intervals[fam] = (_interval(0.1, 10.0), _interval(floor, lam_hi))
        elif fam is Family.BETA:
            if any(x < 0 or x > 1 for x in v.values()):
                msg = "beta kept but flagged: reported statistics fall outside [0, 1]"
                notes.append(msg)
                log.info(msg)
            intervals[fam] = (_interval(floor, 40.0), _interval(floor, 40.0))
        elif fam is Family.EXPONENTIAL:
            intervals[fam] = (_interval(floor, 4 * med),)

    if not intervals:
        raise PriorError("every requested family was dropped by support checks")
    return PriorBank(intervals, warnings=notes)


def rescale_to_unit(stats, lo: float, hi: float):
    """Map statistics of data with known bounds [lo, hi] onto [0, 1]."""
    from .summaries import SummaryStats

    if not hi > lo:
        raise ValueError("rescale bounds need lo < hi")
    scale = hi - lo
    vals = {}
    for k, x in stats.values.items():
        vals[k] = x / scale if k == "sd" else (x - lo) / scale
    return SummaryStats(stats.scenario, stats.n, vals)


def unscale_moments(mean: float, sd: float, lo: float, hi: float) -> tuple[float, float]:
    return lo + (hi - lo) * mean, (hi - lo) * sd
