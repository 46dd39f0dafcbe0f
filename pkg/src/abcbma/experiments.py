"""Monte Carlo error studies and the prior-sensitivity protocol."""

from __future__ import annotations

import csv
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .distributions import ALL_FAMILIES, Family, FamilyParams, Interval, PriorBank, default_priors, sample_n
from .engine import DEFAULT_SEED, AbcConfig, run_abc_bma, run_abc_sd
from .summaries import S3, SummaryScenario, SummaryStats, compute_summary

log = logging.getLogger(__name__)

STUDY_SIZES = (10, 40, 80, 100, 150, 200, 300, 400, 500, 600)
FULL_REPS = 200
DESK_REPS = 50

# Generating distributions of the simulation study, by scenario.
STUDY_DISTRIBUTIONS = {
    "S1": (
        FamilyParams.of("normal", 50, 17),
        FamilyParams.of("lognormal", 4, 0.3),
        FamilyParams.of("weibull", 2, 35),
        FamilyParams.of("beta", 9, 4),
        FamilyParams.of("exponential", 10),
    ),
    "S2": (
        FamilyParams.of("lognormal", 5, 0.25),
        FamilyParams.of("lognormal", 5, 0.5),
        FamilyParams.of("lognormal", 5, 1),
        FamilyParams.of("beta", 5, 2),
        FamilyParams.of("beta", 1, 3),
        FamilyParams.of("beta", 0.5, 0.5),
    ),
}
STUDY_DISTRIBUTIONS["S3"] = STUDY_DISTRIBUTIONS["S1"]


class RelativeErrorUndefined(ValueError):
    pass


def relative_error(estimated: float, truth: float) -> float:
    """Signed relative error; negative means underestimation."""
    if truth == 0:
        raise RelativeErrorUndefined("relative error is undefined for a true value of 0")
    return (estimated - truth) / truth


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    family: Family | None = None
    families: tuple[Family, ...] = ALL_FAMILIES

    def __post_init__(self):
        if self.kind not in ("abc-sd", "abc-bma"):
            raise ValueError(f"unknown method {self.kind!r}; valid: abc-sd:<family>, abc-bma")
        if self.kind == "abc-sd" and self.family is None:
            raise ValueError("abc-sd needs a declared family")

    @property
    def label(self) -> str:
        return f"abc-sd:{self.family.value}" if self.kind == "abc-sd" else "abc-bma"

    @classmethod
    def parse(cls, text: str) -> MethodSpec:
        kind, _, fam = text.strip().lower().partition(":")
        if kind == "abc-sd":
            return cls("abc-sd", Family.parse(fam))
        if kind == "abc-bma":
            fams = tuple(Family.parse(f) for f in fam.split("+")) if fam else ALL_FAMILIES
            return cls("abc-bma", families=fams)
        raise ValueError(f"unknown method {text!r}; valid: abc-sd:<family>, abc-bma")


def derive_seed(master: int, *key: int) -> int:
    """64-bit seed derived from a master seed and an integer key path."""
    state = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def method_key(label: str) -> int:
    return zlib.crc32(label.encode())


# Spawn-key tag separating the raw-sample stream from the method streams.
_DATA_KEY = 0


@dataclass
class ExperimentDesign:
    """One generating distribution studied under one scenario.

    ``methods`` defaults to ABC-SD declared with the generating family plus
    ABC-BMA over all five families. ``config`` is shared by every method;
    its seed is replaced by a per-trial derived seed.
    """

    generator: FamilyParams
    scenario: SummaryScenario
    sizes: tuple[int, ...] = STUDY_SIZES
    reps: int = DESK_REPS
    methods: tuple[MethodSpec, ...] | None = None
    config: AbcConfig = field(default_factory=AbcConfig)
    master_seed: int = DEFAULT_SEED
    priors: Callable[[SummaryStats, Sequence[Family]], PriorBank] = default_priors
    workers: int = 1

    def __post_init__(self):
        self.scenario = SummaryScenario.parse(self.scenario)
        self.sizes = tuple(int(n) for n in self.sizes)
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise ValueError("sample sizes must all be >= 2")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("sample sizes must be strictly increasing")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.methods is None:
            self.methods = (MethodSpec("abc-sd", self.generator.family), MethodSpec("abc-bma"))
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate methods: {labels}")


@dataclass
class MethodOutcome:
    method: str
    mean_hat: float = math.nan
    sd_hat: float = math.nan
    model_probs: dict[Family, float] = field(default_factory=dict)
    re_mean: float = math.nan
    re_sd: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class TrialRecord:
    rep: int
    n: int
    true_mean: float
    true_sd: float
    stats: SummaryStats
    outcomes: list[MethodOutcome]

    def outcome(self, label: str) -> MethodOutcome:
        for o in self.outcomes:
            if o.method == label:
                return o
        raise KeyError(label)


def trial_sample(design: ExperimentDesign, rep: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(design.master_seed, spawn_key=(_DATA_KEY, rep, n)))
    return sample_n(design.generator, n, rng)


def run_trial(design: ExperimentDesign, rep: int, n: int, rng: np.random.Generator | None = None) -> TrialRecord:
    """Draw one sample, summarize it and run every configured method on the summary."""
    data = sample_n(design.generator, n, rng) if rng is not None else trial_sample(design, rep, n)
    true_mean = float(np.mean(data))
    true_sd = float(np.std(data, ddof=1))
    stats = compute_summary(data, design.scenario, design.config.quantile_method)
    outcomes = []
    for spec in design.methods:
        label = spec.label
        out = MethodOutcome(label)
        seed = derive_seed(design.master_seed, rep, n, method_key(label))
        cfg = replace(design.config, seed=seed)
        try:
            if spec.kind == "abc-sd":
                prior = design.priors(stats, [spec.family])
                res = run_abc_sd(spec.family, stats, prior, cfg)
            else:
                prior = design.priors(stats, spec.families)
                res = run_abc_bma(spec.families, stats, prior, cfg)
            out.mean_hat, out.sd_hat = res.mean_hat, res.sd_hat
            out.model_probs = dict(res.model_probs)
            out.re_mean = relative_error(res.mean_hat, true_mean)
            out.re_sd = relative_error(res.sd_hat, true_sd)
        except (ValueError, RuntimeError) as exc:
            out.error = f"{type(exc).__name__}: {exc}"
            log.warning("trial rep=%d n=%d %s failed: %s", rep, n, label, out.error)
        outcomes.append(out)
    return TrialRecord(rep, n, true_mean, true_sd, stats, outcomes)


@dataclass
class AREReport:
    """Average relative errors and model probabilities per (method, n)."""

    rows: list[dict]
    families: tuple[Family, ...]

    def row(self, method: str, n: int) -> dict:
        for r in self.rows:
            if r["method"] == method and r["n"] == n:
                return r
        raise KeyError((method, n))


def _job(args):
    design, rep, n = args
    return run_trial(design, rep, n)


def aggregate(design: ExperimentDesign, trials: Sequence[TrialRecord]) -> AREReport:
    fams: list[Family] = []
    for spec in design.methods:
        for f in ([spec.family] if spec.kind == "abc-sd" else spec.families):
            if f not in fams:
                fams.append(f)
    rows = []
    for spec in design.methods:
        for n in design.sizes:
            outs = [t.outcome(spec.label) for t in trials if t.n == n]
            good = [o for o in outs if o.ok]
            row = {
                "method": spec.label,
                "n": n,
                "reps": len(good),
                "failed": len(outs) - len(good),
                "are_mean": float(np.mean([o.re_mean for o in good])) if good else math.nan,
                "are_sd": float(np.mean([o.re_sd for o in good])) if good else math.nan,
                "mean_abs_re_mean": float(np.mean([abs(o.re_mean) for o in good])) if good else math.nan,
                "mean_abs_re_sd": float(np.mean([abs(o.re_sd) for o in good])) if good else math.nan,
                "model_probs": {
                    f: (float(np.mean([o.model_probs.get(f, 0.0) for o in good])) if good else math.nan)
                    for f in fams
                },
            }
            rows.append(row)
    return AREReport(rows, tuple(fams))


def run_design(design: ExperimentDesign) -> tuple[AREReport, list[TrialRecord]]:
    """Run ``reps`` trials at every sample size and aggregate them.

    Trials run in a process pool when ``design.workers > 1``; results are
    ordered by (n, rep) regardless.
    """
    jobs = [(design, rep, n) for n in design.sizes for rep in range(design.reps)]
    if design.workers > 1:
        with ProcessPoolExecutor(design.workers) as pool:
            trials = list(pool.map(_job, jobs, chunksize=1))
    else:
        trials = [_job(j) for j in jobs]
    trials.sort(key=lambda t: (t.n, t.rep))
    return aggregate(design, trials), trials


# ---------------------------------------------------------------- output files

TRIAL_HEADER = (
    "rep",
    "n",
    "method",
    "true_mean",
    "true_sd",
    "mean_hat",
    "sd_hat",
    "re_mean",
    "re_sd",
    "error",
)
ARE_HEADER = ("method", "n", "reps", "failed", "are_mean", "are_sd", "mean_abs_re_mean", "mean_abs_re_sd")
MODEL_PROB_HEADER = ("method", "n", "family", "avg_model_prob")


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return "" if x is None else str(x)


def write_trials_csv(path: Path | str, trials: Sequence[TrialRecord], families: Sequence[Family]) -> None:
    header = TRIAL_HEADER + tuple(f"prob_{f.value}" for f in families)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in trials:
            for o in t.outcomes:
                row = [t.rep, t.n, o.method, t.true_mean, t.true_sd, o.mean_hat, o.sd_hat, o.re_mean, o.re_sd, o.error]
                row += [o.model_probs.get(f, 0.0) if o.ok else math.nan for f in families]
                w.writerow([_fmt(x) for x in row])


def write_are_csv(path: Path | str, report: AREReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARE_HEADER)
        for r in report.rows:
            w.writerow([_fmt(r[k]) for k in ARE_HEADER])


def write_model_probs_csv(path: Path | str, report: AREReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MODEL_PROB_HEADER)
        for r in report.rows:
            for fam, p in r["model_probs"].items():
                w.writerow([r["method"], r["n"], fam.value, _fmt(p)])


# ---------------------------------------------------------- prior sensitivity

TABLE2_STATS = SummaryStats(S3, 400, {"q1": 0.5993, "median": 0.6853, "q3": 0.7735})
TABLE2_TRUTH = (0.6814, 0.1247)


@dataclass(frozen=True)
class PriorCombo:
    """Beta shape prior upper bound and Normal sigma prior upper bound.

    Lower bounds of 0 are replaced by the positivity floor.
    """

    beta_hi: float
    sigma_hi: float

    @property
    def label(self) -> str:
        return f"Beta U(0,{self.beta_hi:g}) / Normal sigma U(0,{self.sigma_hi:g})"


TABLE2_COMBOS = (PriorCombo(40, 1), PriorCombo(40, 0.5), PriorCombo(20, 1), PriorCombo(20, 0.5))


def combo_prior(combo: PriorCombo, stats: SummaryStats = TABLE2_STATS) -> PriorBank:
    from .distributions import POSITIVE_FLOOR

    v = stats.values
    return PriorBank(
        {
            Family.BETA: (Interval(POSITIVE_FLOOR, combo.beta_hi), Interval(POSITIVE_FLOOR, combo.beta_hi)),
            Family.NORMAL: (Interval(v["q1"], v["q3"]), Interval(POSITIVE_FLOOR, combo.sigma_hi)),
        }
    )


@dataclass
class SensitivityRow:
    combo: PriorCombo
    seeds: tuple[int, ...]
    # per seed: {"beta_prob", "normal_prob", "re_mean_<m>", "re_sd_<m>"} for m in sd_beta, sd_normal, bma
    per_seed: list[dict]

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.per_seed]))

    def votes(self, key: str, threshold: float = 0.5) -> int:
        return sum(r[key] > threshold for r in self.per_seed)


SENSITIVITY_COLUMNS = (
    "beta_prob",
    "normal_prob",
    "re_mean_sd_beta",
    "re_mean_sd_normal",
    "re_mean_bma",
    "re_sd_sd_beta",
    "re_sd_sd_normal",
    "re_sd_bma",
)


def sensitivity_table2(
    combos: Sequence[PriorCombo] = TABLE2_COMBOS,
    seeds: Sequence[int] = (DEFAULT_SEED,),
    config: AbcConfig | None = None,
    stats: SummaryStats = TABLE2_STATS,
    truth: tuple[float, float] = TABLE2_TRUTH,
) -> list[SensitivityRow]:
    """ABC-SD(Beta), ABC-SD(Normal) and ABC-BMA({Beta, Normal}) per prior combination."""
    config = config or AbcConfig()
    rows = []
    for combo in combos:
        prior = combo_prior(combo, stats)
        per_seed = []
        for seed in seeds:
            cfg = replace(config, seed=seed)
            beta = run_abc_sd(Family.BETA, stats, prior, cfg)
            normal = run_abc_sd(Family.NORMAL, stats, prior, cfg)
            bma = run_abc_bma([Family.BETA, Family.NORMAL], stats, prior, cfg)
            rec = {
                "beta_prob": bma.model_probs[Family.BETA],
                "normal_prob": bma.model_probs[Family.NORMAL],
            }
            for name, res in (("sd_beta", beta), ("sd_normal", normal), ("bma", bma)):
                rec[f"re_mean_{name}"] = relative_error(res.mean_hat, truth[0])
                rec[f"re_sd_{name}"] = relative_error(res.sd_hat, truth[1])
            per_seed.append(rec)
        rows.append(SensitivityRow(combo, tuple(seeds), per_seed))
    return rows
