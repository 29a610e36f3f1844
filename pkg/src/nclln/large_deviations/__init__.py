"""Rate functions, essential ranges, occupation measures and level-set geometry."""

from .cycles import RangeReport, beta_range, cycle_mean, max_mean_cycle, min_mean_cycle
from .levelset import (
    FamilyDistance,
    HausdorffReport,
    LevelSetNet,
    dist_to_level_set,
    hausdorff_distance,
    hausdorff_report,
    level_set_net,
    max_dist_to_level_set,
    sup_distance,
    within_distance,
)
from .occupation import contraction_check, contraction_rate, donsker_varadhan_J, simplex_grid
from .rate import INFINITE, RateEvaluator, action, log_mgf_rate, rate_function, sigma_squared

__all__ = [
    "INFINITE", "FamilyDistance", "HausdorffReport", "LevelSetNet", "RangeReport", "RateEvaluator",
    "action", "beta_range", "contraction_check", "contraction_rate", "cycle_mean", "dist_to_level_set",
    "donsker_varadhan_J", "hausdorff_distance", "hausdorff_report", "level_set_net", "log_mgf_rate",
    "max_dist_to_level_set", "max_mean_cycle", "min_mean_cycle", "rate_function", "sigma_squared",
    "simplex_grid", "sup_distance", "within_distance",
]
