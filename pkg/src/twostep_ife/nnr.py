"""First-stage convex estimator: nuclear-norm regularised likelihood.

Minimises ``L(beta, Theta) + phi / sqrt(NT) * ||Theta||_nuc`` by proximal
gradient descent: a gradient step on ``beta`` and a singular-value
soft-thresholding step on ``Theta`` per iteration, both taken from the same
point, with jointly halved step sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lowrank
from .errors import NumericError
from .model import PanelData, get_family
from .optim import backtrack_step


@dataclass
class NnrOptions:
    """Settings for :func:`solve_nnr`.

    ``s_theta_init=None`` means ``N*T``. With ``backtracking=False`` the
    solver runs fixed steps just inside the global Lipschitz bounds
    (see :func:`safe_step_sizes`) and never halves.
    """

    phi: float
    s_beta_init: float = 1.0
    s_theta_init: float | None = None
    max_iters: int = 5000
    tol_rel_obj: float = 1e-9
    tol_param: float = 1e-6
    patience: int = 3
    rho_beta: float | None = None
    rho_theta: float | None = None
    backtracking: bool = True
    beta_init: np.ndarray | None = None
    theta_init: np.ndarray | None = None

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.tol_rel_obj <= 0 or self.tol_param <= 0:
            raise ValueError("tolerances must be positive")
        if self.s_beta_init <= 0 or (self.s_theta_init is not None and self.s_theta_init <= 0):
            raise ValueError("step sizes must be positive")


@dataclass
class NnrSolution:
    beta: np.ndarray
    theta: np.ndarray
    penalized_objective: float
    objective: float
    singular_values: np.ndarray
    phi: float
    iterations: int
    objective_trace: list[float]
    converged: bool
    steps: tuple[float, float]
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.singular_values))

    def factors(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        """Loadings and factors of rank ``r`` extracted from ``theta``."""
        if r not in self._factors:
            self._factors[r] = lowrank.extract_factors(self.theta, r)
        return self._factors[r]


def safe_step_sizes(panel: PanelData, family, beta=None, theta=None, shrink: float = 0.99):
    """Fixed steps ``(s_beta, s_theta)`` strictly inside the global bounds.

    Uses ``L_beta = 4 d_x b_max rho_x^2`` and ``L_theta = 4 b_max`` with
    ``s_beta < 1/L_beta`` and ``s_theta / (NT) < 1/L_theta``. ``rho_x`` is the
    largest absolute covariate; ``b_max`` is the family bound, or for
    Poisson the largest curvature over the index at ``(beta, theta)``.
    """
    fam = get_family(family)
    n, t = panel.shape
    if beta is None:
        beta = np.zeros(panel.d_x)
    if theta is None:
        theta = np.zeros((n, t))
    b_max = fam.b_max(panel.y, panel.index(beta, theta))
    rho_x = float(np.max(np.abs(panel.x))) if panel.d_x else 0.0
    l_beta = 4.0 * panel.d_x * b_max * rho_x**2
    l_theta = 4.0 * b_max
    s_beta = shrink / l_beta if l_beta > 0 else 1.0
    s_theta = shrink * n * t / l_theta
    return s_beta, s_theta


def penalized_objective(panel: PanelData, family, beta, theta, phi: float) -> float:
    """``L(beta, Theta) + phi / sqrt(NT) * ||Theta||_nuc``."""
    from .model import objective_theta

    return objective_theta(panel, family, beta, theta) + phi / math.sqrt(panel.y.size) * lowrank.nuclear_norm(theta)


def solve_nnr(panel: PanelData, family, options: NnrOptions) -> NnrSolution:
    """Proximal gradient descent for the nuclear-norm regularised estimator.

    Converges when, for ``patience`` consecutive iterations, the relative
    change of the penalised objective is below ``tol_rel_obj`` and
    ``||d beta|| + ||d Theta||_F / sqrt(NT)`` is below ``tol_param``.
    Hitting ``max_iters`` returns a solution with ``converged=False``.
    """
    fam = get_family(family)
    panel.validate_for(fam)
    n, t = panel.shape
    nt = n * t
    y, x = panel.y, panel.x
    pen = options.phi / math.sqrt(nt)

    beta = np.zeros(panel.d_x) if options.beta_init is None else np.asarray(options.beta_init, float).copy()
    theta = np.zeros((n, t)) if options.theta_init is None else np.asarray(options.theta_init, float).copy()

    if options.backtracking:
        steps0 = (options.s_beta_init, options.s_theta_init if options.s_theta_init is not None else float(nt))
    else:
        steps0 = safe_step_sizes(panel, fam, beta, theta)

    def index(b, th):
        z = (np.tensordot(b, x, axes=1) + th) if panel.d_x else th
        if not np.all(np.isfinite(z)):
            i, tt = np.argwhere(~np.isfinite(z))[0]
            raise NumericError(f"non-finite index at cell (i={i}, t={tt})")
        return z

    def smooth(point):
        b, th = point
        with np.errstate(over="ignore"):
            val = -float(np.sum(fam.loglik(y, index(b, th)))) / nt
        if not np.isfinite(val):
            raise NumericError("non-finite objective")
        return val

    def prox(trial, steps):
        b, th = trial
        if options.rho_beta is not None:
            b = np.clip(b, -options.rho_beta, options.rho_beta)
        th, d = lowrank.svd_soft_threshold(th, steps[1] * pen, return_singular_values=True)
        if options.rho_theta is not None:
            th = np.clip(th, -options.rho_theta, options.rho_theta)
            d = lowrank.singular_values(th)
        prox.d = d
        return (b, th), pen * float(np.sum(d))

    prox.d = lowrank.singular_values(theta)
    f = smooth((beta, theta))
    penalty = pen * float(np.sum(prox.d))
    trace = [f + penalty]
    steps = steps0
    calm = 0
    converged = False
    it = 0
    for it in range(1, options.max_iters + 1):
        g_theta = -fam.score(y, index(beta, theta)) / nt
        g_beta = np.tensordot(x, g_theta, axes=([1, 2], [0, 1])) if panel.d_x else np.zeros(0)
        if options.backtracking:
            (b_new, th_new), steps, f_new, penalty_new = backtrack_step(
                smooth, (beta, theta), (g_beta, g_theta), steps,
                f_current=f, prox=prox, penalty_current=penalty, initial_steps=steps0,
            )
        else:
            (b_new, th_new), penalty_new = prox((beta - steps[0] * g_beta, theta - steps[1] * g_theta), steps)
            f_new = smooth((b_new, th_new))
        total_new = f_new + penalty_new
        if not np.isfinite(total_new):
            raise NumericError("non-finite penalised objective")
        rel = abs(trace[-1] - total_new) / max(abs(trace[-1]), 1e-300)
        dpar = float(np.linalg.norm(b_new - beta)) + float(np.linalg.norm(th_new - theta)) / math.sqrt(nt)
        beta, theta, f, penalty = b_new, th_new, f_new, penalty_new
        trace.append(total_new)
        calm = calm + 1 if (rel < options.tol_rel_obj and dpar < options.tol_param) else 0
        if calm >= options.patience:
            converged = True
            break

    d = np.sort(np.asarray(prox.d))[::-1]
    return NnrSolution(
        beta=beta,
        theta=theta,
        penalized_objective=trace[-1],
        objective=f,
        singular_values=d,
        phi=options.phi,
        iterations=it,
        objective_trace=trace,
        converged=converged,
        steps=tuple(steps),
    )
