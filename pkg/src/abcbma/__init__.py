"""Estimate a study's mean and SD from reported summary statistics with rejection ABC."""

from .baselines import std_normal_quantile, wan_s3
from .distributions import (
    ALL_FAMILIES,
    Family,
    FamilyParams,
    Interval,
    PriorBank,
    PriorError,
    analytic_moments,
    default_priors,
    draw_params,
    sample_n,
)
from .engine import (
    AbcConfig,
    AcceptedDraw,
    ConfigError,
    EstimateResult,
    EstimationError,
    Reservoir,
    adapt_model_weights,
    posterior_model_probabilities,
    run_abc_bma,
    run_abc_sd,
)
from .summaries import S1, S2, S3, SummaryError, SummaryScenario, SummaryStats, compute_summary, distance, summary_vector

__version__ = "0.1.0"
