"""Rejection ABC against one family (ABC-SD) or a bank of families (ABC-BMA)."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .distributions import Family, FamilyParams, PriorBank, PriorError, analytic_moments, sample_batch
from .summaries import (
    DEFAULT_QUANTILE_METHOD,
    SummaryStats,
    batch_distance,
    field_scales,
    summarize_batch,
    summary_vector,
)

log = logging.getLogger(__name__)

DEFAULT_SEED = 20160817
SD_ITERATIONS = 20_000
BMA_ITERATIONS = 50_000
ESTIMATORS = ("simulation", "plug-in")


class ConfigError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AbcConfig:
    """Run settings shared by ABC-SD and ABC-BMA.

    ``total_iterations=None`` resolves to 20,000 for ABC-SD and 50,000 for
    ABC-BMA. When ``tolerance`` is set, every draw closer than it is kept
    instead of the best ``acceptance_fraction`` share.

    ``weight_correction`` gives every ABC-BMA draw the importance weight
    (initial model weight / model weight in force when it was proposed), so
    adapting the model weights changes efficiency but not the target. With it
    off, retained draws are counted with unit weight.
    """

    total_iterations: int | None = None
    acceptance_fraction: float = 0.001
    adaptation_interval: int = 1000
    weight_floor: float = 0.01
    seed: int = DEFAULT_SEED
    estimator: str = "simulation"
    tolerance: float | None = None
    threads: int = 1
    chunk_size: int = 500
    quantile_method: str = DEFAULT_QUANTILE_METHOD
    normalize_distance: bool = False
    keep_trace: bool = False
    weight_correction: bool = True

    def __post_init__(self):
        if self.total_iterations is not None and self.total_iterations < 1:
            raise ConfigError("total_iterations must be >= 1")
        if not 0 < self.acceptance_fraction < 1:
            raise ConfigError("acceptance_fraction must lie in (0, 1)")
        if self.adaptation_interval < 1 or self.chunk_size < 1:
            raise ConfigError("adaptation_interval and chunk_size must be >= 1")
        if not 0 < self.weight_floor < 1:
            raise ConfigError("weight_floor must lie in (0, 1)")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def resolved(self, default_iterations: int) -> AbcConfig:
        if self.total_iterations is not None:
            return self
        return replace(self, total_iterations=default_iterations)

    @property
    def capacity(self) -> int:
        return max(1, math.ceil(self.total_iterations * self.acceptance_fraction - 1e-9))


@dataclass(frozen=True)
class AcceptedDraw:
    family: Family
    params: FamilyParams
    pseudo_mean: float
    pseudo_sd: float
    distance: float
    iteration: int
    weight: float = 1.0


@dataclass
class _Batch:
    """Column store of simulated draws (one row per iteration)."""

    iteration: np.ndarray
    family: np.ndarray
    params: np.ndarray
    pseudo_mean: np.ndarray
    pseudo_sd: np.ndarray
    distance: np.ndarray
    weight: np.ndarray
    n_nonfinite: int = 0

    @classmethod
    def empty(cls) -> _Batch:
        return cls(
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty((0, 2)),
            np.empty(0),
            np.empty(0),
            np.empty(0),
            np.empty(0),
        )

    @classmethod
    def concat(cls, parts: Sequence[_Batch]) -> _Batch:
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.iteration for p in parts]),
            np.concatenate([p.family for p in parts]),
            np.concatenate([p.params for p in parts]),
            np.concatenate([p.pseudo_mean for p in parts]),
            np.concatenate([p.pseudo_sd for p in parts]),
            np.concatenate([p.distance for p in parts]),
            np.concatenate([p.weight for p in parts]),
            sum(p.n_nonfinite for p in parts),
        )

    def take(self, idx) -> _Batch:
        return _Batch(
            self.iteration[idx],
            self.family[idx],
            self.params[idx],
            self.pseudo_mean[idx],
            self.pseudo_sd[idx],
            self.distance[idx],
            self.weight[idx],
        )

    def __len__(self):
        return len(self.distance)


class Reservoir:
    """The best draws by distance seen so far.

    With a ``capacity`` it keeps the smallest ``capacity`` distances (ties
    broken by iteration index); with a ``tolerance`` it keeps every draw
    strictly closer than the tolerance.
    """

    def __init__(self, capacity: int | None = None, tolerance: float | None = None, n_families: int = 1):
        if (capacity is None) == (tolerance is None):
            raise ValueError("give exactly one of capacity or tolerance")
        self.capacity = capacity
        self.tolerance = tolerance
        self.n_families = n_families
        self._draws = _Batch.empty()

    def update(self, batch: _Batch) -> None:
        if self.tolerance is not None:
            batch = batch.take(batch.distance < self.tolerance)
            self._draws = _Batch.concat([self._draws, batch])
            return
        merged = _Batch.concat([self._draws, batch])
        order = np.lexsort((merged.iteration, merged.distance))[: self.capacity]
        self._draws = merged.take(order)

    @property
    def draws(self) -> _Batch:
        return self._draws

    def __len__(self):
        return len(self._draws)

    def counts(self, weighted: bool = True) -> np.ndarray:
        """Retained mass per family (importance-weighted unless told otherwise)."""
        w = self._draws.weight if weighted else None
        return np.bincount(self._draws.family, weights=w, minlength=self.n_families).astype(float)

    @property
    def effective_tolerance(self) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return float(self._draws.distance.max()) if len(self) else math.inf


def adapt_model_weights(reservoir: Reservoir | Sequence[int], floor: float, active: Sequence | None = None) -> np.ndarray:
    """Model weights proportional to reservoir counts, floored at ``floor``.

    Families whose share would fall below ``floor`` get exactly ``floor``;
    the remaining mass is split among the others in proportion to their
    counts.
    """
    counts = reservoir.counts() if isinstance(reservoir, Reservoir) else np.asarray(reservoir, dtype=float)
    counts = np.maximum(np.asarray(counts, dtype=float), 0.0)
    k = len(counts) if active is None else len(active)
    if len(counts) != k:
        raise ValueError("counts and active families differ in length")
    if counts.sum() <= 0:
        raise ValueError("cannot adapt weights from an empty reservoir")
    if not 0 < floor < 1.0 / k:
        raise ConfigError(f"weight_floor must lie in (0, 1/{k})")
    fixed = np.zeros(k, dtype=bool)
    pi = counts / counts.sum()
    while True:
        free_mass = 1.0 - floor * fixed.sum()
        pi = np.where(fixed, floor, counts * (free_mass / counts[~fixed].sum()))
        low = ~fixed & (pi < floor)
        if not low.any():
            return pi
        fixed |= low


def posterior_model_probabilities(accepted: Iterable[AcceptedDraw], families: Sequence[Family] | None = None) -> dict[Family, float]:
    accepted = list(accepted)
    if not accepted:
        raise ValueError("no accepted draws")
    fams = list(families) if families is not None else []
    for d in accepted:
        if d.family not in fams:
            fams.append(d.family)
    counts = {f: 0 for f in fams}
    for d in accepted:
        counts[d.family] += d.weight
    total = sum(counts.values())
    return {f: c / total for f, c in counts.items()}


@dataclass
class EstimateResult:
    method: str
    mean_hat: float
    sd_hat: float
    model_probs: dict[Family, float]
    accepted: list[AcceptedDraw]
    effective_tolerance: float
    config: AbcConfig
    diagnostics: dict = field(default_factory=dict)
    trace: _Batch | None = field(default=None, repr=False)

    def to_record(self) -> dict:
        """Flat record for CSV/JSON output."""
        rec = {
            "method": self.method,
            "mean_hat": self.mean_hat,
            "sd_hat": self.sd_hat,
            "effective_tolerance": self.effective_tolerance,
            "n_accepted": len(self.accepted),
        }
        for fam, p in self.model_probs.items():
            rec[f"prob_{fam.value}"] = p
        for k, v in asdict(self.config).items():
            rec[f"cfg_{k}"] = v
        rec["n_discarded"] = self.diagnostics.get("n_discarded", 0)
        return rec

    def accepted_rows(self) -> list[dict]:
        rows = []
        for d in self.accepted:
            p = d.params.params
            rows.append(
                {
                    "iteration": d.iteration,
                    "family": d.family.value,
                    "param1": p[0],
                    "param2": p[1] if len(p) > 1 else "",
                    "pseudo_mean": d.pseudo_mean,
                    "pseudo_sd": d.pseudo_sd,
                    "distance": d.distance,
                    "weight": d.weight,
                }
            )
        return rows


ACCEPTED_HEADER = ("iteration", "family", "param1", "param2", "pseudo_mean", "pseudo_sd", "distance", "weight")


def _chunks(total: int, chunk: int, interval: int) -> list[tuple[int, int]]:
    cuts = sorted(set(range(0, total, chunk)) | set(range(0, total, interval)) | {total})
    return list(zip(cuts[:-1], cuts[1:]))


def chunk_rng(seed: int, start: int) -> np.random.Generator:
    """Random stream for the chunk of iterations beginning at ``start``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(start,)))


class _Simulator:
    def __init__(self, families: Sequence[Family], stats: SummaryStats, prior: PriorBank, cfg: AbcConfig):
        self.families = list(families)
        self.prior = prior
        self.cfg = cfg
        self.n = stats.n
        self.fields = stats.scenario.fields
        self.observed = np.array(summary_vector(stats))
        self.scale = field_scales(stats) if cfg.normalize_distance else None

    def run_chunk(self, start: int, stop: int, pi: np.ndarray, base: np.ndarray) -> _Batch:
        rng = chunk_rng(self.cfg.seed, start)
        m = stop - start
        k = len(self.families)
        choice = rng.choice(k, size=m, p=pi) if k > 1 else np.zeros(m, dtype=np.int64)
        parts = []
        for j, fam in enumerate(self.families):
            idx = np.flatnonzero(choice == j)
            if idx.size == 0:
                continue
            params = self.prior.draw_batch(fam, idx.size, rng)
            with np.errstate(all="ignore"):
                x = sample_batch(fam, params, self.n, rng)
                summ = summarize_batch(x, self.fields, self.cfg.quantile_method)
                dist = batch_distance(summ, self.observed, self.scale)
                pmean = x.mean(axis=1)
                psd = x.std(axis=1, ddof=1)
            padded = np.full((idx.size, 2), np.nan)
            padded[:, : params.shape[1]] = params
            w = base[j] / pi[j] if self.cfg.weight_correction else 1.0
            parts.append(
                _Batch(
                    start + idx,
                    np.full(idx.size, j, dtype=np.int64),
                    padded,
                    pmean,
                    psd,
                    dist,
                    np.full(idx.size, w),
                )
            )
        batch = _Batch.concat(parts)
        ok = np.isfinite(batch.distance) & np.isfinite(batch.pseudo_mean) & np.isfinite(batch.pseudo_sd)
        bad = int((~ok).sum())
        if bad:
            log.debug("discarded %d non-finite iterations in chunk starting at %d", bad, start)
            batch = batch.take(ok)
        batch.n_nonfinite = bad
        return batch


def _run(method: str, families: Sequence[Family], stats: SummaryStats, prior: PriorBank, cfg: AbcConfig) -> EstimateResult:
    k = len(families)
    if k > 1 and not 0 < cfg.weight_floor < 1.0 / k:
        raise ConfigError(f"weight_floor must lie in (0, 1/{k}) for {k} families")
    sim = _Simulator(families, stats, prior, cfg)
    total = cfg.total_iterations
    if cfg.tolerance is not None:
        res = Reservoir(tolerance=cfg.tolerance, n_families=k)
    else:
        res = Reservoir(capacity=cfg.capacity, n_families=k)
    base = np.array([prior.weights[f] for f in families])
    base = base / base.sum()
    pi = base.copy()

    chunks = _chunks(total, cfg.chunk_size, cfg.adaptation_interval)
    # Chunks sharing one weight vector can be simulated independently.
    if k > 1:
        groups: dict[int, list] = {}
        for c in chunks:
            groups.setdefault(c[0] // cfg.adaptation_interval, []).append(c)
        schedule = [groups[b] for b in sorted(groups)]
    else:
        schedule = [chunks]

    trace = [] if cfg.keep_trace else None
    n_discarded = 0
    simulated = np.zeros(k, dtype=np.int64)
    pi_history = [pi.tolist()]
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for g, group in enumerate(schedule):
            if g > 0 and k > 1 and len(res):
                pi = adapt_model_weights(res.counts(cfg.weight_correction), cfg.weight_floor, families)
                pi_history.append(pi.tolist())
            if pool is not None:
                batches = list(pool.map(lambda c: sim.run_chunk(c[0], c[1], pi, base), group))
            else:
                batches = [sim.run_chunk(a, b, pi, base) for a, b in group]
            for b in batches:
                n_discarded += b.n_nonfinite
                simulated += np.bincount(b.family, minlength=k)
                res.update(b)
                if trace is not None:
                    trace.append(b)
    finally:
        if pool is not None:
            pool.shutdown()

    if len(res) == 0:
        raise EstimationError(
            f"no draws accepted (tolerance={cfg.tolerance}); increase the tolerance or iterations"
        )
    if n_discarded:
        log.info("%s: discarded %d iterations with non-finite pseudo statistics", method, n_discarded)

    draws = res.draws
    accepted = []
    for i in range(len(draws)):
        fam = families[draws.family[i]]
        nparam = len(fam.param_names)
        accepted.append(
            AcceptedDraw(
                family=fam,
                params=FamilyParams(fam, tuple(draws.params[i, :nparam])),
                pseudo_mean=float(draws.pseudo_mean[i]),
                pseudo_sd=float(draws.pseudo_sd[i]),
                distance=float(draws.distance[i]),
                iteration=int(draws.iteration[i]),
                weight=float(draws.weight[i]),
            )
        )
    probs = posterior_model_probabilities(accepted, families)
    if cfg.estimator == "simulation":
        w = draws.weight / draws.weight.sum()
        mean_hat = float(np.dot(w, draws.pseudo_mean))
        sd_hat = float(np.dot(w, draws.pseudo_sd))
    else:
        mean_hat = sd_hat = 0.0
        for j, fam in enumerate(families):
            sel = draws.family == j
            if not sel.any():
                continue
            nparam = len(fam.param_names)
            avg = FamilyParams(fam, tuple(np.average(draws.params[sel, :nparam], axis=0, weights=draws.weight[sel])))
            m, s = analytic_moments(avg)
            mean_hat += probs[fam] * m
            sd_hat += probs[fam] * s

    diagnostics = {
        "n_simulated": int(simulated.sum()),
        "n_discarded": n_discarded,
        "simulated_per_family": {f.value: int(c) for f, c in zip(families, simulated)},
        "final_weights": {f.value: float(p) for f, p in zip(families, pi)},
        "weight_history": pi_history,
        "prior_warnings": list(prior.warnings),
    }
    return EstimateResult(
        method=method,
        mean_hat=mean_hat,
        sd_hat=sd_hat,
        model_probs=probs,
        accepted=accepted,
        effective_tolerance=res.effective_tolerance,
        config=cfg,
        diagnostics=diagnostics,
        trace=_Batch.concat(trace) if trace is not None else None,
    )


def run_abc_sd(family: Family | str, stats: SummaryStats, prior: PriorBank, cfg: AbcConfig | None = None) -> EstimateResult:
    """ABC against a single assumed family.

    Each iteration draws parameters from the family's uniform prior, simulates
    ``stats.n`` points, summarizes them as the reported statistics and scores
    the Euclidean distance. The estimate is either the average of the
    retained pseudo-data means/SDs (``estimator="simulation"``) or the
    family's closed-form moments at the averaged retained parameters
    (``estimator="plug-in"``).
    """
    fam = Family.parse(family)
    if fam not in prior.intervals:
        raise PriorError(f"{fam.value} is not active in the prior bank")
    cfg = (cfg or AbcConfig()).resolved(SD_ITERATIONS)
    return _run(f"abc-sd:{fam.value}", [fam], stats, prior, cfg)


def run_abc_bma(
    families: Iterable[Family | str] | None,
    stats: SummaryStats,
    prior: PriorBank,
    cfg: AbcConfig | None = None,
    force: bool = False,
) -> EstimateResult:
    """ABC with model averaging over a bank of families.

    Every iteration first picks a family from the current model weights, then
    proceeds as in :func:`run_abc_sd`. All families share one reservoir, and
    the weights are re-estimated from its composition at every
    ``adaptation_interval`` boundary. The estimates average the retained
    pseudo-data moments, i.e. per-family averages weighted by the posterior
    model probabilities (the family shares of the reservoir, importance
    weighted when ``cfg.weight_correction`` is on).

    Families missing from ``prior`` (for example dropped by support checks)
    are skipped. At least two must remain unless ``force`` is set.
    """
    requested = prior.families if families is None else [Family.parse(f) for f in families]
    active = [f for f in requested if f in prior.intervals]
    skipped = [f.value for f in requested if f not in prior.intervals]
    if not active:
        raise ConfigError("no active families left in the prior bank")
    if len(active) < 2 and not force:
        raise ConfigError(f"ABC-BMA needs at least two active families, got {[f.value for f in active]}")
    cfg = (cfg or AbcConfig()).resolved(BMA_ITERATIONS)
    weights = {f: prior.weights[f] for f in active}
    total = sum(weights.values())
    bank = PriorBank(
        {f: prior.intervals[f] for f in active},
        {f: w / total for f, w in weights.items()} if abs(total - 1.0) > 1e-12 else weights,
        warnings=list(prior.warnings),
    )
    result = _run("abc-bma", active, stats, bank, cfg)
    if skipped:
        result.diagnostics["skipped_families"] = skipped
    return result
