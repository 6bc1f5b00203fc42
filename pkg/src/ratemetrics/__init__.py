"""Rank-weighted average treatment effects (RATE) for evaluating treatment prioritization rules."""

from .errors import PositivityError, RateError, SchemaError
from .estimator import TocCurve, rate_difference, rate_point, toc_curve
from .inference import BootstrapConfig, half_sample_bootstrap, paired_bootstrap_difference, toc_band
from .model import (
    EvalDataset,
    PriorityRanking,
    RateEstimate,
    ScoreVector,
    rank_by_priority,
    ranking_from_values,
    read_csv,
    validate_dataset,
    write_csv,
)
from .scores import (
    Endpoint,
    NuisanceEvaluations,
    aipw_obs_scores,
    aipw_rct_scores,
    aipw_survival_scores,
    cross_fit,
    ipw_scores,
    transform_survival_outcome,
)
from .weights import WeightSpec, empirical_weights, population_weight, tie_average_weights

__version__ = "0.1.0"
