"""Propensity-score-weighted subgroup analysis with overlap weights and post-LASSO."""

__version__ = "0.1.0"

from .config import AnalysisConfig, load_config
from .data import AnalysisDataset, SubgroupCell, build_design, enumerate_cells, load_csv
from .diagnostics import asmd, build_connect_s, render_svg, variance_inflation
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateCellError,
    NumericalError,
    OWSGAError,
    RankError,
    SeparationError,
)
from .glm import fit_lasso_logistic, fit_logistic_irls, post_lasso_refit
from .inference import InferenceConfig, bootstrap_ci, sandwich_se
from .pipeline import AnalysisReport, fit_propensity, run_analysis, run_ow_plasso
from .simulation import ScenarioConfig, run_scenario, true_estimands
from .weighting import IPW, OW, compute_weights, estimate_effect

__all__ = [
    "AnalysisConfig", "AnalysisDataset", "AnalysisReport", "ConfigError", "ConvergenceError",
    "DataError", "DegenerateCellError", "IPW", "InferenceConfig", "NumericalError", "OW",
    "OWSGAError", "RankError", "ScenarioConfig", "SeparationError", "SubgroupCell", "asmd",
    "bootstrap_ci", "build_connect_s", "build_design", "compute_weights", "enumerate_cells",
    "estimate_effect", "fit_lasso_logistic", "fit_logistic_irls", "fit_propensity", "load_config",
    "load_csv", "post_lasso_refit", "render_svg", "run_analysis", "run_ow_plasso", "run_scenario",
    "sandwich_se", "true_estimands", "variance_inflation",
]
