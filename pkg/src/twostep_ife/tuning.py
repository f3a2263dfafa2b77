"""Data-driven choice of the regularisation level and the number of factors.

Step 1 fits the additive two-way model and sets ``phi_tilde`` from the
operator norm of the score matrix at that fit. Step 2 solves the
regularised problem at ``phi_tilde``, picks ``R_hat`` by the eigenvalue-ratio
test on the singular values of its ``Theta`` and recomputes the level
``phi_hat`` at the rank-``R_hat`` truncation.

Scaling: ``phi = (1 + alpha) sqrt(NT) ||grad_Theta L||_op``, which with
``grad_Theta L = -ell'/(NT)`` equals ``(1 + alpha) ||ell'||_op / sqrt(NT)``.
This is the level at which the penalty ``phi / sqrt(NT) ||Theta||_nuc``
dominates the score. ``literal_scaling=True`` drops the ``sqrt(NT)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lowrank
from .baselines import AdditiveFit, fit_additive_fe
from .errors import TuningError
from .model import PanelData, get_family
from .nnr import NnrOptions, NnrSolution, solve_nnr


@dataclass
class TuningResult:
    phi_tilde: float
    phi_hat: float
    r_hat: int | None
    pilot_fit: AdditiveFit | None
    nnr_fit: NnrSolution
    alpha: float
    r_max: int


def phi_from_score(score: np.ndarray, alpha: float, literal_scaling: bool = False) -> float:
    """Regularisation level from a score matrix ``ell'``."""
    nt = score.size
    grad_norm = lowrank.operator_norm(score) / nt
    scale = 1.0 if literal_scaling else math.sqrt(nt)
    return (1.0 + alpha) * scale * grad_norm


def tune(
    panel: PanelData,
    family,
    alpha: float = 0.05,
    r_max: int = 5,
    literal_scaling: bool = False,
    nnr_options: NnrOptions | None = None,
    select_rank: bool = True,
) -> TuningResult:
    """Select ``phi`` and ``R_hat``.

    ``nnr_options`` supplies solver settings for the step-2 fit; its ``phi``
    is replaced by ``phi_tilde``. With ``select_rank=False`` the caller
    imposes the rank: ``r_hat`` is ``None`` and ``phi_hat`` is left to
    :func:`phi_at_rank`.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    n, t = panel.shape
    if r_max + 1 > min(n, t):
        raise ValueError(f"r_max + 1 = {r_max + 1} exceeds min(N, T) = {min(n, t)}")
    fam = get_family(family)

    pilot = fit_additive_fe(panel, fam)
    if not pilot.converged:
        raise TuningError("additive fixed-effects pilot did not converge", diagnostic=pilot)
    score = fam.score(panel.y, panel.xbeta(pilot.beta) + pilot.effects())
    phi_tilde = phi_from_score(score, alpha, literal_scaling)
    if not (np.isfinite(phi_tilde) and phi_tilde > 0):
        raise TuningError("pilot score is zero; phi_tilde is not positive", diagnostic=pilot)

    base = nnr_options or NnrOptions(phi=phi_tilde)
    opts = NnrOptions(**{**base.__dict__, "phi": phi_tilde})
    fit = solve_nnr(panel, fam, opts)
    if not select_rank:
        return TuningResult(phi_tilde, float("nan"), None, pilot, fit, alpha, r_max)
    r_hat = lowrank.eigenvalue_ratio_rank(fit.singular_values, r_max)
    phi_hat = phi_at_rank(panel, fam, fit, r_hat, alpha, literal_scaling)
    return TuningResult(phi_tilde, phi_hat, r_hat, pilot, fit, alpha, r_max)


def phi_at_rank(panel: PanelData, family, fit: NnrSolution, r: int, alpha: float, literal_scaling: bool = False) -> float:
    """Level from the score at the rank-``r`` truncation of ``fit``."""
    fam = get_family(family)
    lam, gam = fit.factors(r)
    score = fam.score(panel.y, panel.index(fit.beta, lam @ gam.T))
    return phi_from_score(score, alpha, literal_scaling)


def tune_at_phi(
    panel: PanelData,
    family,
    phi: float,
    r_max: int = 5,
    nnr_options: NnrOptions | None = None,
    select_rank: bool = True,
) -> TuningResult:
    """Rank selection at a user-supplied level; ``phi`` is used for both stages."""
    if not phi > 0:
        raise ValueError("phi must be positive")
    n, t = panel.shape
    if r_max < 1 or r_max + 1 > min(n, t):
        raise ValueError(f"r_max must lie in [1, {min(n, t) - 1}]")
    fam = get_family(family)
    base = nnr_options or NnrOptions(phi=phi)
    fit = solve_nnr(panel, fam, NnrOptions(**{**base.__dict__, "phi": float(phi)}))
    r_hat = lowrank.eigenvalue_ratio_rank(fit.singular_values, r_max) if select_rank else None
    return TuningResult(float(phi), float(phi), r_hat, None, fit, float("nan"), r_max)
