"""Numerical laboratory for Erdos-Renyi laws of nonconventional sums under psi-mixing."""

__version__ = "0.1.0"

from .exceptions import NclError, ValidationError
from .experiments import ExperimentConfig, RunReport, run_experiment
from .large_deviations import (
    RateEvaluator,
    action,
    beta_range,
    contraction_check,
    dist_to_level_set,
    hausdorff_distance,
    level_set_net,
    rate_function,
    sigma_squared,
)
from .process_models import (
    TransitionModel,
    flip_chain,
    gibbs_markov,
    iid_model,
    mixing_profile,
    product_chain,
    psi_coefficient,
    sample_path,
    stationary_distribution,
    validate_doeblin,
)
from .sums import CurveFamily, Observable, StepCurve, window_family, window_maxima

__all__ = [
    "CurveFamily", "ExperimentConfig", "NclError", "Observable", "RateEvaluator", "RunReport", "StepCurve",
    "TransitionModel", "ValidationError", "__version__", "action", "beta_range", "contraction_check",
    "dist_to_level_set", "flip_chain", "gibbs_markov", "hausdorff_distance", "iid_model", "level_set_net",
    "mixing_profile", "product_chain", "psi_coefficient", "rate_function", "run_experiment", "sample_path",
    "sigma_squared", "stationary_distribution", "validate_doeblin", "window_family", "window_maxima",
]
