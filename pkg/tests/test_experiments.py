import csv
import math

import numpy as np
import pytest

from abcbma.distributions import Family, FamilyParams
from abcbma.engine import AbcConfig
from abcbma.experiments import (
    ARE_HEADER,
    TABLE2_COMBOS,
    ExperimentDesign,
    MethodSpec,
    PriorCombo,
    RelativeErrorUndefined,
    aggregate,
    derive_seed,
    relative_error,
    run_design,
    run_trial,
    sensitivity_table2,
    trial_sample,
    write_are_csv,
    write_model_probs_csv,
    write_trials_csv,
)
from abcbma.summaries import S1, S2, S3

FAST = AbcConfig(total_iterations=3000, acceptance_fraction=0.01)
NORMAL = FamilyParams.of("normal", 50, 17)
LOGNORMAL = FamilyParams.of("lognormal", 4, 0.3)


@pytest.mark.parametrize("est, truth, want", [(10, 10, 0.0), (11, 10, 0.1), (9, 10, -0.1)])
def test_relative_error(est, truth, want):
    assert relative_error(est, truth) == pytest.approx(want, abs=1e-15)


def test_relative_error_zero_truth():
    with pytest.raises(RelativeErrorUndefined):
        relative_error(1.0, 0.0)


def test_design_validation():
    with pytest.raises(ValueError):
        ExperimentDesign(NORMAL, S1, sizes=(10, 10))
    with pytest.raises(ValueError):
        ExperimentDesign(NORMAL, S1, sizes=(1, 10))
    with pytest.raises(ValueError):
        ExperimentDesign(NORMAL, S1, reps=0)


def test_method_spec_parse():
    assert MethodSpec.parse("abc-sd:LogNormal").label == "abc-sd:lognormal"
    assert MethodSpec.parse("abc-bma:beta+normal").families == (Family.BETA, Family.NORMAL)
    with pytest.raises(ValueError):
        MethodSpec.parse("hozo")


def test_single_rep_single_trial():
    design = ExperimentDesign(NORMAL, S1, sizes=(10,), reps=1, config=FAST)
    report, trials = run_design(design)
    assert len(trials) == 1
    assert {r["reps"] for r in report.rows} == {1}


def _small_design(**kw):
    base = dict(generator=LOGNORMAL, scenario=S1, sizes=(20, 60), reps=3, config=FAST, master_seed=7)
    base.update(kw)
    return ExperimentDesign(**base)


@pytest.fixture(scope="module")
def small_run():
    design = _small_design()
    return design, *run_design(design)


def test_re_identities(small_run):
    _, _, trials = small_run
    for t in trials:
        for o in t.outcomes:
            assert o.re_sd == (o.sd_hat - t.true_sd) / t.true_sd
            assert o.re_mean == (o.mean_hat - t.true_mean) / t.true_mean


def test_are_recomputes(small_run):
    design, report, trials = small_run
    for row in report.rows:
        outs = [t.outcome(row["method"]) for t in trials if t.n == row["n"]]
        assert row["are_sd"] == float(np.mean([o.re_sd for o in outs]))
        assert row["are_mean"] == float(np.mean([o.re_mean for o in outs]))
        assert row["reps"] == design.reps and row["failed"] == 0


def test_model_probs_sum_to_one(small_run):
    _, report, _ = small_run
    for row in report.rows:
        assert sum(row["model_probs"].values()) == pytest.approx(1.0, abs=1e-9)


def test_truth_regenerates_bit_exactly(small_run):
    design, _, trials = small_run
    for t in trials:
        x = trial_sample(design, t.rep, t.n)
        assert float(np.mean(x)) == t.true_mean
        assert float(np.std(x, ddof=1)) == t.true_sd


def test_identical_seeds_identical_report(small_run):
    _, report, trials = small_run
    report2, trials2 = run_design(_small_design())
    assert report2.rows == report.rows


def test_subset_rerun_matches(small_run):
    design, _, trials = small_run
    t = run_trial(design, 2, 60)
    orig = next(x for x in trials if (x.rep, x.n) == (2, 60))
    assert [o.sd_hat for o in t.outcomes] == [o.sd_hat for o in orig.outcomes]


def test_process_pool_matches_serial(small_run):
    _, report, _ = small_run
    report2, _ = run_design(_small_design(workers=2))
    assert report2.rows == report.rows


def test_seeds_are_distinct():
    seeds = {derive_seed(1, rep, n, m) for rep in range(20) for n in (10, 40) for m in (1, 2)}
    assert len(seeds) == 80


def test_failed_trials_are_counted():
    # custom prior function that refuses some samples
    calls = {"n": 0}

    from abcbma.distributions import PriorError, default_priors

    def flaky(stats, families):
        calls["n"] += 1
        if calls["n"] % 2:
            raise PriorError("refused")
        return default_priors(stats, families)

    design = _small_design(sizes=(20,), reps=4, priors=flaky, methods=(MethodSpec("abc-sd", Family.LOGNORMAL),))
    report, trials = run_design(design)
    row = report.row("abc-sd:lognormal", 20)
    assert row["failed"] == 2 and row["reps"] == 2
    good = [t.outcomes[0].re_sd for t in trials if t.outcomes[0].ok]
    assert row["are_sd"] == float(np.mean(good))


def test_csv_writers(tmp_path, small_run):
    design, report, trials = small_run
    write_trials_csv(tmp_path / "trials.csv", trials, report.families)
    write_are_csv(tmp_path / "are.csv", report)
    write_model_probs_csv(tmp_path / "mp.csv", report)
    rows = list(csv.DictReader(open(tmp_path / "trials.csv")))
    assert len(rows) == len(trials) * len(design.methods)
    are = list(csv.reader(open(tmp_path / "are.csv")))
    assert tuple(are[0]) == ARE_HEADER and len(are) == 1 + len(report.rows)
    mp = list(csv.DictReader(open(tmp_path / "mp.csv")))
    assert len(mp) == len(report.rows) * len(report.families)


def test_sensitivity_shape():
    rows = sensitivity_table2(
        [PriorCombo(40, 1)], seeds=(1, 2), config=AbcConfig(total_iterations=2000, acceptance_fraction=0.01)
    )
    assert len(rows) == 1 and len(rows[0].per_seed) == 2
    rec = rows[0].per_seed[0]
    assert rec["beta_prob"] + rec["normal_prob"] == pytest.approx(1.0)
    assert len(TABLE2_COMBOS) == 4


@pytest.mark.slow
def test_single_trial_normal_n600():
    design = ExperimentDesign(NORMAL, S1, sizes=(600,), reps=1, methods=(MethodSpec("abc-bma"),), master_seed=2024)
    t = run_trial(design, 0, 600)
    assert abs(t.outcomes[0].re_sd) < 0.15


@pytest.mark.slow
def test_are_sd_normal_n600_near_zero():
    design = ExperimentDesign(NORMAL, S1, sizes=(600,), reps=50, methods=(MethodSpec("abc-bma"),))
    report, _ = run_design(design)
    are = report.row("abc-bma", 600)["are_sd"]
    print(f"ARE_sd Normal(50,17) S1 n=600 R=50 abc-bma: {are:+.4f}")
    assert abs(are) <= 0.05


@pytest.mark.slow
def test_more_statistics_help():
    out = {}
    for scen in (S2, S3):
        design = ExperimentDesign(LOGNORMAL, scen, sizes=(100,), reps=50, methods=(MethodSpec("abc-bma"),))
        report, _ = run_design(design)
        out[scen.name] = report.row("abc-bma", 100)["mean_abs_re_sd"]
    print(f"mean |RE_sd| LN(4,0.3) n=100: S2={out['S2']:.4f} S3={out['S3']:.4f}")
    assert out["S2"] <= out["S3"]
