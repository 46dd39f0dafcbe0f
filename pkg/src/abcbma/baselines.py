"""Closed-form baseline for the three-quartile scenario (Wan et al. 2014)."""

from __future__ import annotations

from statistics import NormalDist

from .summaries import SummaryError, SummaryStats

_STD_NORMAL = NormalDist()


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF."""
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return _STD_NORMAL.inv_cdf(p)


def wan_s3(stats: SummaryStats) -> tuple[float, float]:
    """Estimate (mean, sd) from the three quartiles and n.

    mean = (q1 + median + q3) / 3 and
    sd = (q3 - q1) / (2 z((0.75 n - 0.125) / (n + 0.25))).
    """
    v = stats.values
    try:
        q1, med, q3 = v["q1"], v["median"], v["q3"]
    except KeyError as exc:
        raise SummaryError(f"Wan S3 estimator needs q1, median and q3; missing {exc}") from None
    if q3 < q1:
        raise SummaryError(f"q3={q3:g} < q1={q1:g}")
    n = stats.n
    z = std_normal_quantile((0.75 * n - 0.125) / (n + 0.25))
    mean = (q1 + med + q3) / 3.0
    sd = (q3 - q1) / (2.0 * z)
    return mean, sd

