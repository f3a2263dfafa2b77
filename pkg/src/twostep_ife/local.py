"""Second-stage gradient descent on the fixed-effects likelihood.

Starting from the first-stage estimates, ``(beta, Lambda, Gamma)`` are
updated jointly by plain gradient steps with jointly halved step sizes. After
every accepted step the factors can be rotated so that
``Lambda'Lambda/N = Gamma'Gamma/T`` is diagonal; this leaves ``Lambda Gamma'``
and therefore the objective unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lowrank
from .errors import DegeneracyError
from .model import FactorParams, PanelData, _mean_negloglik, get_family
from .optim import backtrack_step


@dataclass
class LocalOptions:
    """Settings for :func:`solve_local`.

    ``None`` step sizes resolve to the reciprocal block curvature bounds at
    the starting point (see :func:`default_steps`).
    Convergence requires ``max(|g_beta|, N |g_Lambda|, T |g_Gamma|)``
    (sup norms) to fall below ``tol_grad``.
    """

    s_beta_init: float = 1.0
    s_lambda_init: float | None = None
    s_gamma_init: float | None = None
    max_iters: int = 10000
    tol_rel_obj: float = 1e-10
    tol_grad: float = 1e-4
    normalize_each_iter: bool = True
    rho_lambda: float | None = None
    rho_gamma: float | None = None

    def __post_init__(self):
        for s in (self.s_beta_init, self.s_lambda_init, self.s_gamma_init):
            if s is not None and not s > 0:
                raise ValueError("step sizes must be positive")
        if self.tol_rel_obj <= 0 or self.tol_grad <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class LocalSolution:
    params: FactorParams
    objective: float
    iterations: int
    objective_trace: list[float]
    converged: bool
    grad_norms_final: tuple[float, float, float]
    steps: tuple[float, float, float]

    @property
    def beta(self) -> np.ndarray:
        return self.params.beta


def scaled_gradient_norm(grads, n: int, t: int) -> float:
    gb, gl, gg = grads
    parts = [np.max(np.abs(gb), initial=0.0), n * np.max(np.abs(gl), initial=0.0), t * np.max(np.abs(gg), initial=0.0)]
    return float(max(parts))


def default_steps(panel: PanelData, family, init: FactorParams) -> tuple[float, float]:
    """``(s_lambda, s_gamma)`` from the curvature bounds of the two blocks.

    The ``lambda_i`` block of the Hessian is bounded by
    ``b_max lambda_max(Gamma'Gamma/T) / N`` and the ``gamma_t`` block by
    ``b_max lambda_max(Lambda'Lambda/N) / T``; the steps are their reciprocals.
    """
    fam = get_family(family)
    n, t = panel.shape
    b_max = fam.b_max(panel.y, panel.index(init.beta, init.theta()))
    eg = float(np.linalg.eigvalsh(init.gam.T @ init.gam / t)[-1])
    el = float(np.linalg.eigvalsh(init.lam.T @ init.lam / n)[-1])
    s_lam = n / (b_max * eg) if b_max * eg > 0 else float(n)
    s_gam = t / (b_max * el) if b_max * el > 0 else float(t)
    return s_lam, s_gam


def delta_radius(n: int, t: int) -> float:
    """Theoretical neighbourhood radius ``log(NT) min(N, T)^(-3/8)``; diagnostic only."""
    return math.log(n * t) * min(n, t) ** (-3.0 / 8.0)


def start_from_nnr(theta: np.ndarray, score: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank-``r`` starting factors from a first-stage ``theta``.

    Normally this is :func:`lowrank.extract_factors`. When ``theta`` has fewer
    than ``r`` nonzero singular values the missing columns would be exactly
    zero, a stationary point that gradient descent cannot leave. Those columns
    are then taken from the unpenalised proximal input ``theta + score`` (the
    score being ``ell'``), whose extra leading directions are the steepest
    rank-one descent directions at the first-stage solution.
    """
    lam, gam = lowrank.extract_factors(theta, r)
    n, t = theta.shape
    d = lowrank.singular_values(theta / math.sqrt(n * t))
    k = int(np.count_nonzero(d[:r] > 1e-12 * max(d[0], 1e-300)))
    if k >= r:
        return lam, gam
    lam_p, gam_p = lowrank.extract_factors(theta + score, r)
    lam[:, k:] = lam_p[:, k:]
    gam[:, k:] = gam_p[:, k:]
    return lam, gam


def _normalize(lam, gam):
    try:
        return lowrank.normalize_factors(lam, gam)
    except DegeneracyError:
        return lam, gam


def solve_local(panel: PanelData, family, r: int, init: FactorParams, options: LocalOptions | None = None) -> LocalSolution:
    """Gradient descent on ``L(beta, Lambda, Gamma)`` from ``init``.

    Stops once the scaled gradient norm is within ``tol_grad`` and the last
    relative objective change is below ``tol_rel_obj``. Hitting ``max_iters``
    returns ``converged=False``.
    """
    opts = options or LocalOptions()
    fam = get_family(family)
    panel.validate_for(fam)
    n, t = panel.shape
    nt = n * t
    if init.rank != r:
        raise ValueError(f"init has rank {init.rank}, expected {r}")
    if init.lam.shape[0] != n or init.gam.shape[0] != t or init.beta.shape[0] != panel.d_x:
        raise ValueError("init dimensions do not match the panel")
    y, x = panel.y, panel.x

    def smooth(point):
        b, lam, gam = point
        z = lam @ gam.T
        if panel.d_x:
            z = z + np.tensordot(b, x, axes=1)
        return _mean_negloglik(fam, y, z)

    def grads(point):
        b, lam, gam = point
        z = lam @ gam.T
        if panel.d_x:
            z = z + np.tensordot(b, x, axes=1)
        g = -fam.score(y, z) / nt
        gb = np.tensordot(x, g, axes=([1, 2], [0, 1])) if panel.d_x else np.zeros(0)
        return gb, g @ gam, g.T @ lam

    clip = None
    if opts.rho_lambda is not None or opts.rho_gamma is not None:

        def clip(trial, steps):
            b, lam, gam = trial
            if opts.rho_lambda is not None:
                lam = np.clip(lam, -opts.rho_lambda, opts.rho_lambda)
            if opts.rho_gamma is not None:
                gam = np.clip(gam, -opts.rho_gamma, opts.rho_gamma)
            return (b, lam, gam), 0.0

    s_lam, s_gam = default_steps(panel, fam, init)
    steps0 = (
        opts.s_beta_init,
        s_lam if opts.s_lambda_init is None else opts.s_lambda_init,
        s_gam if opts.s_gamma_init is None else opts.s_gamma_init,
    )
    point = (init.beta.copy(), init.lam.copy(), init.gam.copy())
    if opts.normalize_each_iter:
        point = (point[0],) + _normalize(point[1], point[2])
    f = smooth(point)
    trace = [f]
    steps = steps0
    g = grads(point)
    gnorm = scaled_gradient_norm(g, n, t)
    converged = gnorm <= opts.tol_grad
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        point, steps, f_new, _ = backtrack_step(smooth, point, g, steps, f_current=f, prox=clip, initial_steps=steps0)
        if opts.normalize_each_iter:
            point = (point[0],) + _normalize(point[1], point[2])
        rel = abs(f - f_new) / max(abs(f), 1e-300)
        f = f_new
        trace.append(f)
        g = grads(point)
        gnorm = scaled_gradient_norm(g, n, t)
        # a small objective change alone is not enough: GD crawls along flat valleys
        converged = gnorm <= opts.tol_grad and rel < opts.tol_rel_obj
    norms = tuple(float(np.linalg.norm(v)) for v in g)
    return LocalSolution(
        params=FactorParams(*point),
        objective=f,
        iterations=it,
        objective_trace=trace,
        converged=converged,
        grad_norms_final=norms,
        steps=tuple(steps),
    )


def hessian_probe_convexity(
    panel: PanelData, family, params: FactorParams, n_probes: int = 20, seed: int = 0, eps: float = 1e-5
) -> float:
    """Smallest Rayleigh quotient ``v'Hv`` over random unit directions.

    ``Hv`` is a central difference of the full gradient. Blocks are weighted
    by ``(1, 1/N, 1/T)``: the quotient is ``v'Hv / v'Wv`` with ``W`` that
    diagonal, so every block is measured on a common scale.
    """
    fam = get_family(family)
    n, t = panel.shape
    nt = n * t
    d, r = panel.d_x, params.rank
    rng = np.random.default_rng(seed)
    w = np.concatenate([np.ones(d), np.full(n * r, 1.0 / n), np.full(t * r, 1.0 / t)])
    base = np.concatenate([params.beta, params.lam.ravel(), params.gam.ravel()])

    def grad_at(p):
        b = p[:d]
        lam = p[d : d + n * r].reshape(n, r)
        gam = p[d + n * r :].reshape(t, r)
        z = lam @ gam.T + (np.tensordot(b, panel.x, axes=1) if d else 0.0)
        g = -fam.score(panel.y, z) / nt
        gb = np.tensordot(panel.x, g, axes=([1, 2], [0, 1])) if d else np.zeros(0)
        return np.concatenate([gb, (g @ gam).ravel(), (g.T @ lam).ravel()])

    best = np.inf
    for _ in range(n_probes):
        u = rng.standard_normal(base.size)
        u /= np.linalg.norm(u)
        v = u / np.sqrt(w)
        hv = (grad_at(base + eps * v) - grad_at(base - eps * v)) / (2 * eps)
        best = min(best, float(v @ hv))
    return best
