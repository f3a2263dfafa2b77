"""Panel containers, likelihood families and the fixed-effects objective.

The model is single-index: the log-likelihood of cell ``(i, t)`` is
``ell(Y_it | X_it' beta + theta_it)`` where ``theta_it = lambda_i' gamma_t``.
The objective minimised everywhere in the package is the negative average
log-likelihood

    L(beta, Theta) = -(NT)^{-1} sum_it ell(Y_it | X_it' beta + theta_it).

Covariates are stored as a ``(d_x, N, T)`` array so that ``beta @ x``
contracts over the first axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, NumericError

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


# ------------------------------------------------------------------ #
# Likelihood families
# ------------------------------------------------------------------ #


class LikelihoodFamily:
    """Scalar log-likelihood ``ell(y | z)`` and its index derivatives.

    All methods are vectorised over numpy arrays of matching shape.
    Subclasses implement :meth:`loglik` and :meth:`derivs`; :meth:`score`
    and :meth:`hess` default to slices of :meth:`derivs` and are overridden
    where a cheaper closed form exists.
    """

    kind: str = ""
    binary: bool = False
    #: sup over z of -ell''(y|z), or None if unbounded
    b_max_global: float | None = None

    def validate(self, y: np.ndarray) -> None:
        raise NotImplementedError

    def loglik(self, y, z):
        raise NotImplementedError

    def derivs(self, y, z):
        """Return ``(ell', ell'', ell''')`` with respect to the index."""
        raise NotImplementedError

    def score(self, y, z):
        return self.derivs(y, z)[0]

    def hess(self, y, z):
        return self.derivs(y, z)[1]

    def b_max(self, y, z) -> float:
        """Largest curvature ``-ell''`` over the given cells."""
        if self.b_max_global is not None:
            return self.b_max_global
        return float(np.max(-self.hess(y, z)))

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    def __eq__(self, other) -> bool:
        return type(self) is type(other)

    def __hash__(self) -> int:
        return hash(self.kind)


class Logit(LikelihoodFamily):
    kind = "logit"
    binary = True
    b_max_global = 0.25

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DomainError("logit outcomes must be 0 or 1")

    def loglik(self, y, z):
        # log(1 + e^z) without overflow; cheaper than np.logaddexp
        return y * z - (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))))

    def score(self, y, z):
        return y - special.expit(z)

    def hess(self, y, z):
        f = special.expit(z)
        return -f * (1.0 - f)

    def derivs(self, y, z):
        f = special.expit(z)
        v = f * (1.0 - f)
        return y - f, -v, -v * (1.0 - 2.0 * f)


class Probit(LikelihoodFamily):
    """Probit likelihood.

    With ``q = 2y - 1`` and ``u = q z`` the log-likelihood is
    ``log Phi(u)``. The inverse Mills ratio ``m(u) = phi(u) / Phi(u)`` is
    evaluated through the scaled complementary error function, which stays
    accurate deep in the lower tail where ``phi / Phi`` would be 0/0.
    """

    kind = "probit"
    binary = True
    b_max_global = 1.0

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DomainError("probit outcomes must be 0 or 1")

    @staticmethod
    def _mills(u):
        with np.errstate(over="ignore"):
            return _SQRT_2_OVER_PI / special.erfcx(-u * _INV_SQRT2)

    def loglik(self, y, z):
        q = 2.0 * np.asarray(y, dtype=float) - 1.0
        return special.log_ndtr(q * z)

    def derivs(self, y, z):
        q = 2.0 * np.asarray(y, dtype=float) - 1.0
        u = q * z
        m = self._mills(u)
        um = u + m
        return q * m, -m * um, q * m * (um * (u + 2.0 * m) - 1.0)

    def score(self, y, z):
        q = 2.0 * np.asarray(y, dtype=float) - 1.0
        return q * self._mills(q * z)

    def hess(self, y, z):
        q = 2.0 * np.asarray(y, dtype=float) - 1.0
        u = q * z
        m = self._mills(u)
        return -m * (u + m)


class Poisson(LikelihoodFamily):
    kind = "poisson"

    def validate(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise DomainError("poisson outcomes must be nonnegative integers")
        if np.any(np.abs(y - np.round(y)) > 1e-9):
            raise DomainError("poisson outcomes must be nonnegative integers")

    def loglik(self, y, z):
        return -np.exp(z) + y * z - special.gammaln(np.asarray(y, dtype=float) + 1.0)

    def score(self, y, z):
        return y - np.exp(z)

    def hess(self, y, z):
        return -np.exp(z)

    def derivs(self, y, z):
        e = np.exp(z)
        return y - e, -e, -e


FAMILIES = {"logit": Logit, "probit": Probit, "poisson": Poisson}


def get_family(family: str | LikelihoodFamily) -> LikelihoodFamily:
    """Resolve a family name (``logit``, ``probit``, ``poisson``)."""
    if isinstance(family, LikelihoodFamily):
        return family
    try:
        return FAMILIES[str(family).lower()]()
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}") from None


def _check_scalar_y(family: LikelihoodFamily, y) -> None:
    family.validate(np.atleast_1d(np.asarray(y, dtype=float)))


def loglik(family, y, ystar):
    """Log-likelihood ``ell(y | ystar)`` for scalars or arrays."""
    fam = get_family(family)
    _check_scalar_y(fam, y)
    if not np.all(np.isfinite(ystar)):
        raise NumericError("non-finite index")
    out = fam.loglik(np.asarray(y, dtype=float), np.asarray(ystar, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def loglik_derivs(family, y, ystar):
    """First three index derivatives ``(ell', ell'', ell''')``."""
    fam = get_family(family)
    _check_scalar_y(fam, y)
    if not np.all(np.isfinite(ystar)):
        raise NumericError("non-finite index")
    d = fam.derivs(np.asarray(y, dtype=float), np.asarray(ystar, dtype=float))
    if np.ndim(d[0]) == 0:
        return tuple(float(v) for v in d)
    return d


# ------------------------------------------------------------------ #
# Data containers
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class PanelData:
    """Balanced ``N x T`` panel.

    Attributes
    ----------
    y : ndarray, shape (N, T)
        Outcomes.
    x : ndarray, shape (d_x, N, T)
        Covariate matrices stacked along the first axis; ``d_x`` may be 0.
    """

    y: np.ndarray
    x: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise ValueError("y must be an N x T matrix")
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((0,) + y.shape)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != y.shape:
            raise ValueError(f"covariates must have shape (d_x, {y.shape[0]}, {y.shape[1]}), got {x.shape}")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise ValueError("panel contains non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        names = tuple(self.names) or tuple(f"x{d + 1}" for d in range(x.shape[0]))
        if len(names) != x.shape[0]:
            raise ValueError("one name per covariate required")
        object.__setattr__(self, "names", names)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    def xbeta(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if beta.shape[0] != self.d_x:
            raise ValueError(f"beta has length {beta.shape[0]}, expected {self.d_x}")
        if self.d_x == 0:
            return np.zeros(self.shape)
        return np.tensordot(beta, self.x, axes=1)

    def index(self, beta, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.shape:
            raise ValueError(f"theta has shape {theta.shape}, expected {self.shape}")
        return self.xbeta(beta) + theta

    def subpanel(self, rows=slice(None), cols=slice(None)) -> "PanelData":
        return PanelData(self.y[rows][:, cols], self.x[:, rows][:, :, cols], self.names)

    def validate_for(self, family) -> None:
        get_family(family).validate(self.y)


@dataclass(frozen=True)
class FactorParams:
    """Common coefficients with loadings ``lam`` (N x R) and factors ``gam`` (T x R)."""

    beta: np.ndarray
    lam: np.ndarray
    gam: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        lam = np.asarray(self.lam, dtype=float)
        gam = np.asarray(self.gam, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        if gam.ndim == 1:
            gam = gam[:, None]
        if lam.shape[1] != gam.shape[1]:
            raise ValueError("loadings and factors need the same number of columns")
        if lam.shape[1] > min(lam.shape[0], gam.shape[0]):
            raise ValueError("rank exceeds min(N, T)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gam", gam)

    @property
    def rank(self) -> int:
        return self.lam.shape[1]

    def theta(self) -> np.ndarray:
        return self.lam @ self.gam.T


# ------------------------------------------------------------------ #
# Objective and gradients
# ------------------------------------------------------------------ #


def _check_index(z: np.ndarray) -> None:
    if not np.all(np.isfinite(z)):
        i, t = np.argwhere(~np.isfinite(z))[0]
        raise NumericError(f"non-finite index at cell (i={i}, t={t})")


def _mean_negloglik(family: LikelihoodFamily, y: np.ndarray, z: np.ndarray) -> float:
    _check_index(z)
    with np.errstate(over="ignore"):
        ll = family.loglik(y, z)
    val = -float(np.sum(ll)) / y.size
    if not np.isfinite(val):
        i, t = np.argwhere(~np.isfinite(ll))[0]
        raise NumericError(f"non-finite log-likelihood at cell (i={i}, t={t})")
    return val


def objective_theta(panel: PanelData, family, beta, theta) -> float:
    """Negative average log-likelihood at ``(beta, Theta)``."""
    fam = get_family(family)
    return _mean_negloglik(fam, panel.y, panel.index(beta, theta))


def objective_factors(panel: PanelData, family, params: FactorParams) -> float:
    """Negative average log-likelihood at ``(beta, Lambda, Gamma)``."""
    return objective_theta(panel, family, params.beta, params.theta())


def _score(panel: PanelData, family, beta, theta) -> np.ndarray:
    fam = get_family(family)
    z = panel.index(beta, theta)
    _check_index(z)
    return fam.score(panel.y, z)


def grad_theta(panel: PanelData, family, beta, theta) -> np.ndarray:
    """Gradient with respect to Theta: ``-ell'_it / (NT)``."""
    return -_score(panel, family, beta, theta) / panel.y.size


def grad_beta(panel: PanelData, family, beta, theta) -> np.ndarray:
    """Gradient with respect to beta: ``-(NT)^{-1} sum_it ell'_it X_it``."""
    g = grad_theta(panel, family, beta, theta)
    return np.tensordot(panel.x, g, axes=([1, 2], [0, 1]))


def grad_lambda(panel: PanelData, family, params: FactorParams) -> np.ndarray:
    return grad_theta(panel, family, params.beta, params.theta()) @ params.gam


def grad_gamma(panel: PanelData, family, params: FactorParams) -> np.ndarray:
    return grad_theta(panel, family, params.beta, params.theta()).T @ params.lam


def grad_factors(panel: PanelData, family, params: FactorParams):
    """All three gradients ``(g_beta, g_lambda, g_gamma)`` from one score pass."""
    g = grad_theta(panel, family, params.beta, params.theta())
    gb = np.tensordot(panel.x, g, axes=([1, 2], [0, 1]))
    return gb, g @ params.gam, g.T @ params.lam
