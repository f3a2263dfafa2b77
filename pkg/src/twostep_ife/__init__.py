"""Two-step estimation of nonlinear panel models with interactive fixed effects.

A nuclear-norm regularised first stage gives a consistent starting point;
gradient descent on the factor likelihood then delivers the fixed-effects
estimator, which is bias-corrected analytically or by split-panel jackknife.
"""

from .baselines import fit_additive_fe, fit_pooled
from .dgp import gen_logit_dynamic, gen_logit_static
from .errors import (
    DegeneracyError,
    DomainError,
    IFEError,
    InferenceError,
    JackknifeError,
    NumericError,
    PanelFormatError,
    RankSelectionError,
    StallError,
    TuningError,
)
from .inference import analytic_bias_correct, bias_terms, compute_xi, jackknife_correct, standard_errors
from .local import LocalOptions, LocalSolution, solve_local
from .model import FactorParams, PanelData, get_family
from .montecarlo import McConfig, McResult, run_monte_carlo
from .nnr import NnrOptions, NnrSolution, solve_nnr
from .panelio import read_panel_csv, write_panel_csv
from .pipeline import EstimateReport, PipelineOptions, TwoStepFit, estimate, fit_fixed_rank, fit_two_step
from .tuning import TuningResult, tune

__version__ = "0.1.0"

__all__ = [
    "DegeneracyError", "DomainError", "EstimateReport", "FactorParams", "IFEError", "InferenceError",
    "JackknifeError", "LocalOptions", "LocalSolution", "McConfig", "McResult", "NnrOptions", "NnrSolution",
    "NumericError", "PanelData", "PanelFormatError", "PipelineOptions", "RankSelectionError", "StallError",
    "TuningError", "TuningResult", "TwoStepFit", "analytic_bias_correct", "bias_terms", "compute_xi",
    "estimate", "fit_additive_fe", "fit_fixed_rank", "fit_pooled", "fit_two_step", "gen_logit_dynamic",
    "gen_logit_static", "get_family", "jackknife_correct", "read_panel_csv", "run_monte_carlo", "solve_local",
    "solve_nnr", "standard_errors", "tune", "write_panel_csv",
]
