"""Command-line front end: ``estimate``, ``simulate``, ``sensitivity`` and ``replay``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import os
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .baselines import wan_s3
from .distributions import (
    ALL_FAMILIES,
    Family,
    FamilyParams,
    PriorBank,
    PriorError,
    default_priors,
    rescale_to_unit,
    unscale_moments,
)
from .engine import ACCEPTED_HEADER, DEFAULT_SEED, AbcConfig, ConfigError, EstimationError, run_abc_bma, run_abc_sd
from .experiments import (
    DESK_REPS,
    FULL_REPS,
    STUDY_SIZES,
    SENSITIVITY_COLUMNS,
    TABLE2_COMBOS,
    ExperimentDesign,
    MethodSpec,
    PriorCombo,
    run_design,
    sensitivity_table2,
    write_are_csv,
    write_model_probs_csv,
    write_trials_csv,
)
from .plotting import line_chart
from .summaries import FIELD_ORDER, SummaryError, SummaryScenario, SummaryStats

OUTPUT_ENV = "ABCBMA_OUTPUT_DIR"
DEFAULT_OUTPUT = "abcbma-out"
ESTIMATE_ITERATIONS = 100_000

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

PARAM_FLAGS = {
    Family.NORMAL: ("mu", "sigma"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.WEIBULL: ("shape", "scale"),
    Family.BETA: ("alpha", "beta"),
    Family.EXPONENTIAL: ("mean",),
}


class UsageError(ValueError):
    pass


def g6(x: float) -> str:
    return f"{x:.6g}"


def _seed(text: str) -> int:
    if text == "random":
        return secrets.randbits(64)
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer or 'random', got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_engine_flags(p: argparse.ArgumentParser, iterations_default: int | None) -> None:
    p.add_argument("--iterations", type=int, default=iterations_default, help="total ABC iterations N")
    p.add_argument("--acceptance", type=float, default=0.001, help="acceptance fraction (default 0.001)")
    p.add_argument("--tolerance", type=float, default=None, help="fixed tolerance instead of an acceptance fraction")
    p.add_argument("--adapt-every", type=int, default=1000, help="model-weight adaptation interval")
    p.add_argument("--weight-floor", type=float, default=0.01)
    p.add_argument("--no-weight-correction", action="store_true", help="count retained draws with unit weight")
    p.add_argument("--estimator", choices=("simulation", "plug-in"), default="simulation")
    p.add_argument("--normalize-distance", action="store_true", help="scale each summary field before the distance")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="integer seed or 'random'")
    p.add_argument("--threads", type=int, default=1)


def _add_output_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abcbma", description=__doc__)
    parser.add_argument("--version", action="version", version=f"abcbma {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate mean and SD for one study")
    est.add_argument("--method", required=True, help="wan, abc-sd:<family> or abc-bma")
    est.add_argument("--scenario", default=None, help="S1, S2, S3 or custom (inferred from fields if omitted)")
    est.add_argument("--record", default=None, help="one-record stats, e.g. 'scenario=S3 n=111 q1=1.2 ...'")
    est.add_argument("--n", type=int, default=None)
    for f in FIELD_ORDER:
        est.add_argument(f"--{f}", type=float, default=None)
    est.add_argument("--families", default=None, help="comma-separated ABC-BMA families (default all five)")
    est.add_argument("--priors", default=None, help="prior bank file (default: data-driven priors)")
    est.add_argument("--rescale", type=_pair, default=None, metavar="LO,HI", help="known data bounds mapped to [0, 1]")
    est.add_argument("--csv", default=None, help="write the flat result record here")
    est.add_argument("--accepted-csv", default=None, help="write one row per accepted draw here")
    _add_engine_flags(est, ESTIMATE_ITERATIONS)
    _add_output_flag(est)

    sim = sub.add_parser("simulate", help="run a Monte Carlo error study")
    sim.add_argument("--design", default=None, help="'table2' runs the prior-sensitivity protocol")
    sim.add_argument("--family", default=None)
    sim.add_argument("--params", default=None, help="comma-separated parameters of the generating family")
    for name in sorted({n for names in PARAM_FLAGS.values() for n in names}):
        sim.add_argument(f"--{name}", type=float, default=None)
    sim.add_argument("--scenario", default="S1")
    sim.add_argument("--reps", type=int, default=DESK_REPS)
    sim.add_argument("--sizes", type=_int_list, default=STUDY_SIZES)
    sim.add_argument("--full-scale", action="store_true", help=f"{FULL_REPS} repetitions over the full size grid")
    sim.add_argument("--methods", default=None, help="comma-separated, e.g. abc-sd:normal,abc-bma")
    sim.add_argument("--workers", type=int, default=1, help="parallel trial processes")
    _add_engine_flags(sim, None)
    _add_output_flag(sim)

    sens = sub.add_parser("sensitivity", help="prior-sensitivity table for Beta vs Normal")
    sens.add_argument("--combo", action="append", type=_pair, default=None, metavar="BETA_HI,SIGMA_HI")
    sens.add_argument("--beta-prior", type=_pair, default=None, metavar="LO,HI")
    sens.add_argument("--sigma-prior", type=_pair, default=None, metavar="LO,HI")
    sens.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds (default: --seed)")
    sens.add_argument("--csv", default=None)
    _add_engine_flags(sens, None)
    _add_output_flag(sens)

    rep = sub.add_parser("replay", help="re-run a command from its manifest")
    rep.add_argument("manifest")
    _add_output_flag(rep)
    return parser


def _outdir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, threads_ok: bool = True) -> AbcConfig:
    return AbcConfig(
        total_iterations=args.iterations,
        acceptance_fraction=args.acceptance,
        adaptation_interval=args.adapt_every,
        weight_floor=args.weight_floor,
        seed=args.seed,
        estimator=args.estimator,
        tolerance=args.tolerance,
        threads=args.threads if threads_ok else 1,
        normalize_distance=args.normalize_distance,
        weight_correction=not args.no_weight_correction,
    )


def _replay_argv(argv: list[str], seed: int) -> list[str]:
    """argv with the seed pinned and any output directory removed."""
    out, skip = [], False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok in ("--out", "--seed"):
            skip = True
            continue
        if tok.startswith("--out=") or tok.startswith("--seed="):
            continue
        out.append(tok)
    return out + ["--seed", str(seed)]


def _write_manifest(outdir: Path, command: str, argv: list[str], seed: int, resolved: dict, started: float) -> Path:
    manifest = {
        "command": command,
        "argv": _replay_argv(argv, seed),
        "seed": seed,
        "version": __version__,
        "started_at": dt.datetime.fromtimestamp(started, dt.timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
        "resolved": resolved,
    }
    path = outdir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _stats_from_args(args) -> SummaryStats:
    if args.record:
        return SummaryStats.from_record(args.record)
    if args.n is None:
        raise UsageError("--n is required (or pass --record)")
    values = {f: getattr(args, f) for f in FIELD_ORDER if getattr(args, f) is not None}
    if not values:
        raise UsageError("no summary statistics given")
    scenario = SummaryScenario.parse(args.scenario or "custom", fields=values.keys())
    return SummaryStats(scenario, args.n, values)


def cmd_estimate(args, argv: list[str]) -> int:
    started = time.time()
    stats = _stats_from_args(args)
    method = args.method.strip().lower()
    resolved: dict = {"stats": stats.to_record(), "method": method}
    lines = [f"method: {method}", f"input: {stats.to_record()}"]
    outdir = _outdir(args)

    work = stats
    if args.rescale:
        lo, hi = args.rescale
        work = rescale_to_unit(stats, lo, hi)
        resolved["rescale"] = [lo, hi]

    record: dict
    if method == "wan":
        mean, sd = wan_s3(work)
        if args.rescale:
            mean, sd = unscale_moments(mean, sd, *args.rescale)
        lines += [f"mean: {g6(mean)}", f"sd: {g6(sd)}"]
        record = {"method": method, "mean_hat": mean, "sd_hat": sd}
    else:
        cfg = _config(args)
        if method == "abc-bma":
            families = [Family.parse(f) for f in args.families.split(",")] if args.families else list(ALL_FAMILIES)
        elif method.startswith("abc-sd:"):
            families = [Family.parse(method.split(":", 1)[1])]
        else:
            raise UsageError(f"unknown method {args.method!r}; valid: wan, abc-sd:<family>, abc-bma")
        if args.priors:
            prior = PriorBank.from_text(Path(args.priors).read_text())
        else:
            prior = default_priors(work, families)
        resolved["priors"] = prior.to_text()
        resolved["prior_warnings"] = list(prior.warnings)
        if method == "abc-bma":
            res = run_abc_bma(families, work, prior, cfg)
        else:
            res = run_abc_sd(families[0], work, prior, cfg)
        mean, sd = res.mean_hat, res.sd_hat
        if args.rescale:
            mean, sd = unscale_moments(mean, sd, *args.rescale)
        resolved["config"] = {k: v for k, v in res.to_record().items() if k.startswith("cfg_")}
        lines += [f"mean: {g6(mean)}", f"sd: {g6(sd)}"]
        if method == "abc-bma":
            lines.append("model probabilities:")
            lines += [f"  {fam.value}: {g6(p)}" for fam, p in res.model_probs.items()]
        lines.append(f"effective tolerance: {g6(res.effective_tolerance)}")
        lines.append(f"accepted draws: {len(res.accepted)}")
        for w in prior.warnings:
            lines.append(f"note: {w}")
        record = res.to_record()
        record["mean_hat"], record["sd_hat"] = mean, sd
        if args.accepted_csv:
            with open(args.accepted_csv, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=ACCEPTED_HEADER, lineterminator="\n")
                w.writeheader()
                w.writerows(res.accepted_rows())
    lines.append(f"seed: {args.seed}")
    print("\n".join(lines))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(record), lineterminator="\n")
            w.writeheader()
            w.writerow(record)
    _write_manifest(outdir, "estimate", argv, args.seed, resolved, started)
    return EXIT_OK


def _generator_from_args(args) -> FamilyParams:
    if not args.family:
        raise UsageError("--family is required unless --design table2 is given")
    fam = Family.parse(args.family)
    if args.params:
        params = tuple(float(x) for x in args.params.split(","))
    else:
        names = PARAM_FLAGS[fam]
        missing = [f"--{n}" for n in names if getattr(args, n) is None]
        if missing:
            raise UsageError(f"{fam.value} needs {', '.join(missing)} (or --params)")
        params = tuple(getattr(args, n) for n in names)
    return FamilyParams(fam, params)


def _sensitivity_table(rows) -> str:
    head = (
        f"{'prior setting':<44} {'P(beta)':>8} {'P(normal)':>9} | "
        f"{'REmean SD-beta':>14} {'SD-normal':>9} {'BMA':>9} | "
        f"{'RESD SD-beta':>12} {'SD-normal':>9} {'BMA':>9}"
    )
    out = [head, "-" * len(head)]
    for r in rows:
        vals = [r.mean(c) for c in SENSITIVITY_COLUMNS]
        out.append(
            f"{r.combo.label:<44} {vals[0]:>8.3f} {vals[1]:>9.3f} | "
            f"{vals[2]:>14.4f} {vals[3]:>9.4f} {vals[4]:>9.4f} | "
            f"{vals[5]:>12.4f} {vals[6]:>9.4f} {vals[7]:>9.4f}"
        )
    return "\n".join(out)


def _write_sensitivity_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("beta_hi", "sigma_hi", "seed") + SENSITIVITY_COLUMNS)
        for r in rows:
            for seed, rec in zip(r.seeds, r.per_seed):
                w.writerow([r.combo.beta_hi, r.combo.sigma_hi, seed] + [repr(rec[c]) for c in SENSITIVITY_COLUMNS])


def _run_sensitivity(args, combos, argv, command) -> int:
    started = time.time()
    seeds = getattr(args, "seeds", None) or (args.seed,)
    rows = sensitivity_table2(combos, seeds, _config(args))
    print(_sensitivity_table(rows))
    outdir = _outdir(args)
    csv_path = getattr(args, "csv", None) or outdir / "sensitivity.csv"
    _write_sensitivity_csv(csv_path, rows)
    resolved = {"combos": [[c.beta_hi, c.sigma_hi] for c in combos], "seeds": list(seeds)}
    _write_manifest(outdir, command, argv, args.seed, resolved, started)
    return EXIT_OK


def cmd_sensitivity(args, argv: list[str]) -> int:
    if (args.beta_prior is None) != (args.sigma_prior is None):
        raise UsageError("--beta-prior and --sigma-prior must be given together")
    combos = []
    if args.beta_prior is not None:
        for lo in (args.beta_prior[0], args.sigma_prior[0]):
            if lo != 0:
                raise UsageError("prior lower bounds must be 0 (the positivity floor is applied)")
        combos.append(PriorCombo(args.beta_prior[1], args.sigma_prior[1]))
    combos += [PriorCombo(*c) for c in args.combo or ()]
    return _run_sensitivity(args, combos or list(TABLE2_COMBOS), argv, "sensitivity")


def cmd_simulate(args, argv: list[str]) -> int:
    if args.design is not None:
        if args.design.lower() != "table2":
            raise UsageError(f"unknown design {args.design!r}; valid: table2")
        return _run_sensitivity(args, list(TABLE2_COMBOS), argv, "simulate")
    started = time.time()
    gen = _generator_from_args(args)
    scenario = SummaryScenario.parse(args.scenario)
    methods = tuple(MethodSpec.parse(m) for m in args.methods.split(",")) if args.methods else None
    reps, sizes = (FULL_REPS, STUDY_SIZES) if args.full_scale else (args.reps, args.sizes)
    design = ExperimentDesign(
        gen,
        scenario,
        sizes=sizes,
        reps=reps,
        methods=methods,
        config=_config(args),
        master_seed=args.seed,
        workers=args.workers,
    )
    report, trials = run_design(design)
    outdir = _outdir(args)
    write_trials_csv(outdir / "trials.csv", trials, report.families)
    write_are_csv(outdir / "are.csv", report)
    write_model_probs_csv(outdir / "model_probs.csv", report)

    title = f"{gen} under {scenario.name}"
    for key, ylabel, fname in (("are_sd", "ARE of SD", "are_sd.svg"), ("are_mean", "ARE of mean", "are_mean.svg")):
        series = {
            m.label: [(r["n"], r[key]) for r in report.rows if r["method"] == m.label] for m in design.methods
        }
        (outdir / fname).write_text(line_chart(series, title, "sample size n", ylabel, hline=0.0))
    bma = [m for m in design.methods if m.kind == "abc-bma"]
    if bma:
        label = bma[0].label
        series = {
            fam.value: [(r["n"], r["model_probs"][fam]) for r in report.rows if r["method"] == label]
            for fam in report.families
        }
        (outdir / "model_probs.svg").write_text(
            line_chart(series, f"Average model probability, {title}", "sample size n", "probability")
        )

    print(f"{title}: {reps} repetitions")
    print(f"{'method':<22} {'n':>5} {'ARE mean':>10} {'ARE sd':>10} {'failed':>6}")
    for r in report.rows:
        print(f"{r['method']:<22} {r['n']:>5} {r['are_mean']:>10.4f} {r['are_sd']:>10.4f} {r['failed']:>6}")
    resolved = {
        "generator": str(gen),
        "scenario": scenario.name,
        "sizes": list(sizes),
        "reps": reps,
        "methods": [m.label for m in design.methods],
    }
    _write_manifest(outdir, "simulate", argv, args.seed, resolved, started)
    return EXIT_OK


def cmd_replay(args, argv: list[str]) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    replay = list(manifest["argv"])
    if args.out:
        replay += ["--out", args.out]
    return main(replay)


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "sensitivity": cmd_sensitivity, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (UsageError, SummaryError, PriorError, ConfigError, ValueError) as exc:
        print(f"abcbma {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EstimationError, RuntimeError, OSError) as exc:
        print(f"abcbma {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
