"""Pooled MLE and additive two-way fixed-effects MLE.

Both problems are convex and small enough for damped Newton iterations with
a dense Hessian: ``d_x`` unknowns for the pooled fit and
``d_x + N + T - 1`` for the additive fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .model import PanelData, get_family

FE_CLAMP = 20.0
# binary index beyond which fitted probabilities are within 1e-7 of 0 or 1
SATURATION = 16.0


@dataclass
class PooledFit:
    beta: np.ndarray
    objective: float
    converged: bool
    iterations: int
    grad_norm: float


@dataclass
class AdditiveFit:
    beta: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    objective: float
    converged: bool
    iterations: int
    grad_norm: float
    clamped_units: list[int] = field(default_factory=list)
    clamped_periods: list[int] = field(default_factory=list)

    def effects(self) -> np.ndarray:
        """Additive effect matrix ``alpha_i + delta_t``."""
        return self.alpha[:, None] + self.delta[None, :]


def _newton(value, grad_hess, p0, tol, max_iters):
    """Damped Newton with Armijo backtracking on a convex objective."""
    p = p0.copy()
    f = value(p)
    gnorm = np.inf
    for it in range(1, max_iters + 1):
        g, h = grad_hess(p)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= tol:
            return p, f, True, it - 1, gnorm
        try:
            step = linalg.solve(h, g, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(h, g)[0]
        slope = float(g @ step)
        if not np.isfinite(slope) or slope <= 0:
            step, slope = g, float(g @ g)
        a = 1.0
        # rounding slack lets the final Newton steps through once f stops moving
        slack = 1e-15 * max(1.0, abs(f))
        while True:
            p_new = p - a * step
            f_new = value(p_new)
            if np.isfinite(f_new) and f_new <= f - 1e-4 * a * slope + slack:
                break
            a /= 2.0
            if a < 1e-12:
                return p, f, False, it, gnorm
        if not np.any(p_new != p):
            return p, f, gnorm <= tol, it, gnorm
        p, f = p_new, f_new
    return p, f, False, max_iters, gnorm


def fit_pooled(panel: PanelData, family, tol: float = 1e-10, max_iters: int = 100) -> PooledFit:
    """Pooled MLE ignoring all unobserved effects.

    Perfectly separated binary data have no finite maximiser; the iterations
    then stop with ``converged=False``.
    """
    fam = get_family(family)
    panel.validate_for(fam)
    if panel.d_x < 1:
        raise ValueError("pooled fit needs at least one covariate")
    y = panel.y.reshape(-1)
    xs = panel.x.reshape(panel.d_x, -1)
    nt = y.size

    def value(b):
        with np.errstate(over="ignore"):
            v = -float(np.sum(fam.loglik(y, b @ xs))) / nt
        return v if np.isfinite(v) else np.inf

    def grad_hess(b):
        z = b @ xs
        s, h, _ = fam.derivs(y, z)
        g = -(xs @ s) / nt
        hm = (xs * -h) @ xs.T / nt
        return g, hm

    b, f, ok, it, gn = _newton(value, grad_hess, np.zeros(panel.d_x), tol, max_iters)
    if np.max(np.abs(b)) > 1e6:
        ok = False
    # A vanishing gradient with saturated fits can be separation, not an optimum.
    if ok and fam.binary and np.max(np.abs(b @ xs)) > SATURATION and _separated(y, xs):
        ok = False
    return PooledFit(b, f, ok, it, gn)


def _separated(y: np.ndarray, xs: np.ndarray) -> bool:
    """Whether some direction ``b`` has ``(2y - 1) x'b >= 0`` everywhere and ``> 0`` somewhere.

    Then the binary likelihood increases without bound along ``b``.
    """
    a = (2.0 * y - 1.0) * xs  # d x NT
    d = xs.shape[0]
    res = optimize.linprog(-a.sum(axis=1), A_ub=-a.T, b_ub=np.zeros(a.shape[1]), bounds=[(-1, 1)] * d, method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9)


def _degenerate(fam, y: np.ndarray, axis: int):
    """Indices whose outcomes have no variation that pins a finite effect."""
    if fam.binary:
        m = y.mean(axis=axis)
        return np.flatnonzero(m == 0.0), np.flatnonzero(m == 1.0)
    total = y.sum(axis=axis)
    return np.flatnonzero(total == 0.0), np.array([], dtype=int)


def fit_additive_fe(panel: PanelData, family, tol: float = 1e-10, max_iters: int = 200) -> AdditiveFit:
    """MLE with additive unit and period effects ``alpha_i + delta_t``.

    The location is pinned by ``sum_t delta_t = 0`` (over periods with a
    finite effect), with the last free period eliminated by substitution.
    Units or periods whose binary outcomes are all 0 or all 1 (all-zero
    counts for Poisson) would diverge; their effects are clamped at
    ``-/+20`` and reported.
    """
    fam = get_family(family)
    panel.validate_for(fam)
    n, t = panel.shape
    if n < 2 or t < 2:
        raise ValueError("additive fixed effects need N, T >= 2")
    d = panel.d_x
    y, x = panel.y, panel.x
    nt = n * t

    lo_u, hi_u = _degenerate(fam, y, 1)
    lo_t, hi_t = _degenerate(fam, y, 0)
    alpha_fixed = np.zeros(n)
    delta_fixed = np.zeros(t)
    alpha_fixed[lo_u], alpha_fixed[hi_u] = -FE_CLAMP, FE_CLAMP
    delta_fixed[lo_t], delta_fixed[hi_t] = -FE_CLAMP, FE_CLAMP
    free_a = np.ones(n, bool)
    free_a[lo_u] = free_a[hi_u] = False
    free_d = np.ones(t, bool)
    free_d[lo_t] = free_d[hi_t] = False
    clamped_units = sorted(int(i) for i in np.concatenate([lo_u, hi_u]))
    clamped_periods = sorted(int(i) for i in np.concatenate([lo_t, hi_t]))
    if clamped_units or clamped_periods:
        warnings.warn(
            f"outcomes without variation: clamping effects of units {clamped_units} "
            f"and periods {clamped_periods} at +/-{FE_CLAMP:g}",
            RuntimeWarning,
            stacklevel=2,
        )
    ia = np.flatnonzero(free_a)
    idd = np.flatnonzero(free_d)
    na, nd = ia.size, idd.size
    if nd == 0:
        raise ValueError("no period has outcome variation")
    # delta_free = J @ q with J = [I; -1'] imposing sum(delta_free) = 0
    nq = nd - 1

    def unpack(p):
        beta = p[:d]
        alpha = alpha_fixed.copy()
        alpha[ia] = p[d : d + na]
        q = p[d + na :]
        delta = delta_fixed.copy()
        delta[idd] = np.concatenate([q, [-q.sum()]])
        return beta, alpha, delta

    def index(p):
        beta, alpha, delta = unpack(p)
        z = alpha[:, None] + delta[None, :]
        if d:
            z = z + np.tensordot(beta, x, axes=1)
        return z

    def value(p):
        with np.errstate(over="ignore"):
            v = -float(np.sum(fam.loglik(y, index(p)))) / nt
        return v if np.isfinite(v) else np.inf

    def grad_hess(p):
        s, h, _ = fam.derivs(y, index(p))
        w = -h
        xw = x * w if d else np.zeros((0, n, t))
        g_b = -np.tensordot(x, s, axes=([1, 2], [0, 1])) / nt if d else np.zeros(0)
        g_a = -s.sum(axis=1)[ia] / nt
        g_dfull = -s.sum(axis=0)[idd] / nt
        g_q = g_dfull[:-1] - g_dfull[-1]

        h_bb = np.tensordot(xw, x, axes=([1, 2], [1, 2])) if d else np.zeros((0, 0))
        h_ba = xw.sum(axis=2)[:, ia] if d else np.zeros((0, na))
        h_bdf = xw.sum(axis=1)[:, idd] if d else np.zeros((0, nd))
        h_bq = h_bdf[:, :-1] - h_bdf[:, -1:]
        h_aa = np.diag(w.sum(axis=1)[ia])
        w_ad = w[np.ix_(ia, idd)]
        h_aq = w_ad[:, :-1] - w_ad[:, -1:]
        wd = w.sum(axis=0)[idd]
        h_qq = np.diag(wd[:-1]) + wd[-1]
        hm = np.block([[h_bb, h_ba, h_bq], [h_ba.T, h_aa, h_aq], [h_bq.T, h_aq.T, h_qq]]) / nt
        return np.concatenate([g_b, g_a, g_q]), hm

    p0 = np.zeros(d + na + nq)
    p, f, ok, it, gn = _newton(value, grad_hess, p0, tol, max_iters)
    beta, alpha, delta = unpack(p)
    if np.max(np.abs(p), initial=0.0) > 1e6:
        ok = False
    return AdditiveFit(beta, alpha, delta, f, ok, it, gn, clamped_units, clamped_periods)
