"""Bias correction and standard errors for the second-stage estimator.

The incidental-parameter bias of ``beta_hat`` is ``B/T + D/N`` to first
order. The analytic correction estimates ``B``, ``D`` and the Hessian ``W``
by plug-in at the fitted values, using covariates ``X_tilde = X - Xi`` that
are residualised on the tangent space of the factor structure. The
split-panel jackknife removes both terms by re-estimating on half panels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InferenceError, JackknifeError
from .model import FactorParams, PanelData, get_family

XI_RCOND = 1e-10


# ------------------------------------------------------------------ #
# Xi projection
# ------------------------------------------------------------------ #


def _xi_schur(x: np.ndarray, w: np.ndarray, lam: np.ndarray, gam: np.ndarray, rcond: float):
    """Weighted projection with the ``lam``-side blocks eliminated.

    Solves, for every covariate slice ``x[d]``,
    ``min sum_it w_it (x_it - a_i' gam_t - lam_i' b_t)^2`` over ``a`` (N x R)
    and ``b`` (T x R). Each ``a_i`` is an ``R x R`` solve given ``b``;
    substituting leaves a ``TR x TR`` system in ``b`` whose ``R^2``-dimensional
    null space (``a -> a + lam G``, ``b -> b - gam G'``) does not affect the fit.
    """
    d = x.shape[0]
    n, r = lam.shape
    t = gam.shape[0]
    h = np.einsum("it,ta,tb->iab", w, gam, gam)
    e, v = np.linalg.eigh(h)
    top = np.max(e, axis=1, keepdims=True)
    keep = e > rcond * np.maximum(top, 1e-300)
    inv_root = np.where(keep, 1.0 / np.sqrt(np.where(keep, e, 1.0)), 0.0)
    # h_i^+ = v diag(inv_root^2) v'
    c = np.einsum("it,ta,ib->iatb", w, gam, lam).reshape(n, r, t * r)
    k = np.einsum("ia,iba,ibm->iam", inv_root, v, c)
    g = np.zeros((t, r, t, r))
    g_diag = np.einsum("it,ia,ib->tab", w, lam, lam)
    g[np.arange(t), :, np.arange(t), :] = g_diag
    s = g.reshape(t * r, t * r) - np.einsum("iam,ian->mn", k, k)

    bvec = np.einsum("it,dit,ta->dia", w, x, gam)
    hb = np.einsum("ia,iba,dib->dia", inv_root, v, bvec)
    cvec = np.einsum("it,dit,ia->dta", w, x, lam).reshape(d, t * r)
    rhs = cvec - np.einsum("iam,dia->dm", k, hb)
    scale = max(float(np.max(np.abs(s))), 1e-300)
    sol = np.linalg.lstsq(s / scale, (rhs / scale).T, rcond=rcond)[0].T
    b = sol.reshape(d, t, r)
    # a_i = h_i^+ (bvec_i - c_i b)
    cb = np.einsum("iam,dm->dia", c, sol)
    a = np.einsum("iba,ia,ica,dic->dib", v, inv_root**2, v, bvec - cb)
    return a, b


def _xi_als(x, w, lam, gam, max_iters: int = 20000, tol: float = 1e-13):
    d = x.shape[0]
    n, r = lam.shape
    t = gam.shape[0]
    a = np.zeros((d, n, r))
    b = np.zeros((d, t, r))
    h_lam = np.einsum("it,ta,tb->iab", w, gam, gam)
    h_gam = np.einsum("it,ia,ib->tab", w, lam, lam)
    prev = np.inf
    for _ in range(max_iters):
        resid = x - np.einsum("ta,dib->dit", gam, b * 0) - np.einsum("ia,dta->dit", lam, b)
        rhs = np.einsum("it,dit,ta->dia", w, resid, gam)
        a = np.stack([np.linalg.lstsq(h_lam[i], rhs[:, i].T, rcond=None)[0].T for i in range(n)], axis=1)
        resid = x - np.einsum("dia,ta->dit", a, gam)
        rhs = np.einsum("it,dit,ia->dta", w, resid, lam)
        b = np.stack([np.linalg.lstsq(h_gam[s], rhs[:, s].T, rcond=None)[0].T for s in range(t)], axis=1)
        fit = np.einsum("dia,ta->dit", a, gam) + np.einsum("ia,dta->dit", lam, b)
        obj = float(np.sum(w * (x - fit) ** 2))
        if abs(prev - obj) <= tol * max(1.0, obj):
            break
        prev = obj
    return a, b


def compute_xi(
    x: np.ndarray, weights: np.ndarray, lam: np.ndarray, gam: np.ndarray, method: str = "schur", rcond: float = XI_RCOND
) -> np.ndarray:
    """Projection ``Xi_d = a_d Gamma' + Lambda b_d'`` of each covariate.

    ``(a_d, b_d)`` minimise ``sum_it weights_it (X_d,it - a_d,i' gamma_t - lambda_i' b_d,t)^2``.
    ``method="schur"`` eliminates the larger of the two index sets and solves
    the reduced normal equations by least squares; ``"als"`` alternates the
    two blockwise least-squares problems.

    Returns an array shaped like ``x`` (``d_x x N x T``).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise InferenceError("projection weights must be nonnegative")
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    gam = np.atleast_2d(np.asarray(gam, dtype=float))
    if lam.shape[1] == 0 or x.shape[0] == 0:
        return np.zeros_like(x)
    if method == "als":
        a, b = _xi_als(x, w, lam, gam)
    elif method == "schur":
        n, t = w.shape
        if n >= t:
            a, b = _xi_schur(x, w, lam, gam, rcond)
        else:
            bt, at = _xi_schur(np.swapaxes(x, 1, 2), w.T, gam, lam, rcond)
            a, b = at, bt
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.einsum("dia,ta->dit", a, gam) + np.einsum("ia,dta->dit", lam, b)


def xi_normal_residual(x, weights, lam, gam, xi) -> float:
    """Largest violation of the projection's first-order conditions.

    Scaled by ``sum |w x| * max(|lam|, |gam|)`` so it is comparable across inputs.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    e = weights * (x - xi)
    g1 = np.einsum("dit,ta->dia", e, gam)
    g2 = np.einsum("dit,ia->dta", e, lam)
    scale = float(np.sum(np.abs(weights * x))) * max(float(np.max(np.abs(lam))), float(np.max(np.abs(gam))), 1e-300)
    return max(float(np.max(np.abs(g1), initial=0.0)), float(np.max(np.abs(g2), initial=0.0))) / max(scale, 1e-300)


# ------------------------------------------------------------------ #
# Analytic correction
# ------------------------------------------------------------------ #


@dataclass
class BiasTerms:
    b_hat: np.ndarray
    d_hat: np.ndarray
    w_hat: np.ndarray
    x_tilde: np.ndarray


def bias_terms(panel: PanelData, family, params: FactorParams, xi_method: str = "schur") -> BiasTerms:
    """Plug-in ``B_hat``, ``D_hat`` and ``W_hat`` at the fitted values."""
    fam = get_family(family)
    n, t = panel.shape
    if panel.d_x == 0:
        raise InferenceError("bias correction needs at least one covariate")
    lam, gam = params.lam, params.gam
    z = panel.index(params.beta, params.theta())
    l1, l2, l3 = fam.derivs(panel.y, z)
    x_tilde = panel.x - compute_xi(panel.x, -l2, lam, gam, method=xi_method)

    # q_it = gamma_t' (sum_tau gamma_tau gamma_tau' l2_itau)^+ gamma_t, and the lam analogue
    h_i = np.einsum("it,ta,tb->iab", l2, gam, gam)
    h_t = np.einsum("it,ia,ib->tab", l2, lam, lam)
    q = np.einsum("ta,iab,tb->it", gam, np.linalg.pinv(h_i, hermitian=True), gam)
    p = np.einsum("ia,tab,ib->it", lam, np.linalg.pinv(h_t, hermitian=True), lam)
    core = (l1 * l2 + 0.5 * l3)[None] * x_tilde
    b_hat = -np.einsum("it,dit->d", q, core) / n
    d_hat = -np.einsum("it,dit->d", p, core) / t
    w_hat = -np.einsum("it,dit,eit->de", l2, x_tilde, x_tilde) / (n * t)
    return BiasTerms(b_hat, d_hat, w_hat, x_tilde)


def _w_inverse(w_hat: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(w_hat)):
        raise InferenceError("W_hat is not finite")
    e = np.linalg.eigvalsh((w_hat + w_hat.T) / 2)
    if e[0] <= 1e-12 * max(abs(e[-1]), 1e-300):
        raise InferenceError(f"W_hat is not positive definite (smallest eigenvalue {e[0]:.3g})")
    return np.linalg.inv(w_hat)


def analytic_bias_correct(panel: PanelData, family, params: FactorParams, terms: BiasTerms | None = None) -> np.ndarray:
    """``beta - W^{-1} B / T - W^{-1} D / N``."""
    terms = terms or bias_terms(panel, family, params)
    n, t = panel.shape
    w_inv = _w_inverse(terms.w_hat)
    return params.beta - w_inv @ terms.b_hat / t - w_inv @ terms.d_hat / n


def standard_errors(w_hat: np.ndarray, n: int, t: int) -> np.ndarray:
    """``sqrt(diag(W^{-1}) / (NT))``."""
    return np.sqrt(np.diag(_w_inverse(w_hat)) / (n * t))


# ------------------------------------------------------------------ #
# Split-panel jackknife
# ------------------------------------------------------------------ #


def half_panels(n: int, t: int) -> dict[str, tuple[slice, slice]]:
    """The four half panels; the first half takes ``ceil(.../2)`` rows or columns."""
    hn, ht = math.ceil(n / 2), math.ceil(t / 2)
    return {
        "T1": (slice(None), slice(0, ht)),
        "T2": (slice(None), slice(ht, t)),
        "N1": (slice(0, hn), slice(None)),
        "N2": (slice(hn, n), slice(None)),
    }


def jackknife_combine(beta: np.ndarray, halves: dict[str, np.ndarray]) -> np.ndarray:
    """``3 beta - mean(T halves) - mean(N halves)``."""
    bar_t = (np.asarray(halves["T1"]) + np.asarray(halves["T2"])) / 2
    bar_n = (np.asarray(halves["N1"]) + np.asarray(halves["N2"])) / 2
    return 3 * np.asarray(beta) - bar_t - bar_n


def jackknife_correct(
    panel: PanelData, beta: np.ndarray, estimator: Callable[[PanelData], np.ndarray]
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Split-panel jackknife with ``estimator`` applied to each half panel.

    Raises :class:`JackknifeError` naming the halves whose estimation failed.
    """
    n, t = panel.shape
    if n < 2 or t < 2:
        raise JackknifeError("jackknife needs N, T >= 2", failing=list(half_panels(2, 2)))
    halves = {}
    failing = []
    errors = {}
    for name, (rows, cols) in half_panels(n, t).items():
        try:
            halves[name] = np.asarray(estimator(panel.subpanel(rows, cols)), dtype=float)
        except Exception as exc:  # noqa: BLE001 - every failure is reported per half
            failing.append(name)
            errors[name] = exc
    if failing:
        detail = "; ".join(f"{k}: {type(v).__name__}: {v}" for k, v in errors.items())
        raise JackknifeError(f"half-panel estimation failed ({detail})", failing=failing)
    return jackknife_combine(beta, halves), halves
