"""Simulation designs: static logit with an exogenous covariate and
dynamic logit with a lagged outcome.

Both designs carry two factors. Every random stream is a counter-based
Philox generator keyed by ``(seed, *stream)`` so a replication can be
regenerated in isolation.
"""

from __future__ import annotations

import numpy as np

from .model import FactorParams, PanelData

BURN_IN = 50


def rng_for(seed, *stream: int) -> np.random.Generator:
    """Philox generator keyed by the master seed and a stream path."""
    entropy = [int(s) for s in np.atleast_1d(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _factor_covariate(rng, lam, gam, n, t):
    # X = lambda'gamma + lambda'iota + gamma'iota + lambda_X gamma_X + eps_X, eps_X ~ N(0, 4)
    lam_x = rng.standard_normal(n)
    gam_x = rng.standard_normal(t)
    eps_x = rng.normal(0.0, 2.0, size=(n, t))
    return lam @ gam.T + lam.sum(axis=1)[:, None] + gam.sum(axis=1)[None, :] + np.outer(lam_x, gam_x) + eps_x


def gen_logit_static(n: int, t: int, seed, beta: float = 0.2, r: int = 2):
    """Static logit panel ``Y = 1(beta X + lambda'gamma + eps > 0)``.

    Returns the panel and the true ``FactorParams``.
    """
    if n < 2 or t < 2:
        raise ValueError("n and t must be at least 2")
    rng = rng_for(seed)
    lam = rng.standard_normal((n, r))
    gam = rng.standard_normal((t, r))
    x = _factor_covariate(rng, lam, gam, n, t)
    eps_y = rng.logistic(size=(n, t))
    y = (beta * x + lam @ gam.T + eps_y > 0).astype(float)
    return PanelData(y, x[None], ("x1",)), FactorParams(np.array([beta]), lam, gam)


def gen_logit_dynamic(n: int, t: int, seed, beta=(0.5, 0.2), r: int = 2, burn_in: int = BURN_IN):
    """Dynamic logit ``Y_t = 1(b1 Y_{t-1} + b2 Z + lambda'gamma_t + eps > 0)``.

    The process starts at ``Y = 0`` and runs ``burn_in`` pre-sample periods
    with their own factors and covariates; the last of them supplies
    ``Y_{i,0}``. Covariates are ``(Y_{t-1}, Z_t)``.
    """
    if n < 2 or t < 2:
        raise ValueError("n and t must be at least 2")
    b1, b2 = float(beta[0]), float(beta[1])
    rng = rng_for(seed)
    total = t + burn_in
    lam = rng.standard_normal((n, r))
    gam_all = rng.standard_normal((total, r))
    z_all = _factor_covariate(rng, lam, gam_all, n, total)
    eps_y = rng.logistic(size=(n, total))
    signal = b2 * z_all + lam @ gam_all.T + eps_y
    y_all = np.zeros((n, total + 1))
    for s in range(total):
        y_all[:, s + 1] = (b1 * y_all[:, s] + signal[:, s] > 0)
    y = y_all[:, burn_in + 1 :]
    lag = y_all[:, burn_in:-1]
    z = z_all[:, burn_in:]
    panel = PanelData(y, np.stack([lag, z]), ("y_lag", "z"))
    return panel, FactorParams(np.array([b1, b2]), lam, gam_all[burn_in:])
