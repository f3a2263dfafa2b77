"""SVD utilities: singular-value soft-thresholding, factor extraction,
matrix norms, eigenvalue-ratio rank selection and factor normalisation.

Singular vectors are sign-normalised so that the largest-magnitude entry of
every left singular vector is positive; this makes extracted loadings and
factors deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, NumericError, RankSelectionError

RATIO_EPS = 1e-12


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray

    @property
    def k(self) -> int:
        return self.d.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if u.shape[1] == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s, v * s


def svd(m: np.ndarray) -> SvdFactors:
    """Thin SVD ``m = u diag(d) v'`` with deterministic signs."""
    m = np.asarray(m, dtype=float)
    try:
        u, d, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    u, v = _fix_signs(u, vt.T)
    return SvdFactors(u, d, v)


def singular_values(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc


def operator_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    return float(singular_values(m)[0])


def nuclear_norm(m: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(singular_values(m)))


def svd_soft_threshold(m: np.ndarray, tau: float, return_singular_values: bool = False):
    """Shrink every singular value of ``m`` by ``tau`` and floor at zero.

    This is the proximal map of ``tau * ||.||_nuc``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    try:
        u, d, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    ds = np.maximum(d - tau, 0.0)
    k = int(np.count_nonzero(ds))
    out = (u[:, :k] * ds[:k]) @ vt[:k]
    if return_singular_values:
        return out, ds
    return out


def extract_factors(theta: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Loadings and factors of the best rank-``r`` approximation of ``theta``.

    With ``theta / sqrt(NT) = U D V'``, returns ``sqrt(N) U_r D_r^{1/2}`` and
    ``sqrt(T) V_r D_r^{1/2}``, so that ``Lambda' Lambda / N = Gamma' Gamma / T = D_r``.
    """
    theta = np.asarray(theta, dtype=float)
    n, t = theta.shape
    if not 1 <= r <= min(n, t):
        raise ValueError(f"rank r={r} must lie in [1, min(N, T)={min(n, t)}]")
    f = svd(theta / np.sqrt(n * t))
    root = np.sqrt(f.d[:r])
    return np.sqrt(n) * f.u[:, :r] * root, np.sqrt(t) * f.v[:, :r] * root


def eigenvalue_ratio_rank(singular_values, r_max: int, eps: float = RATIO_EPS) -> int:
    """Rank maximising ``psi_r / psi_{r+1}`` over ``r = 1..r_max``.

    Values at or below ``eps * psi_1`` count as zero. A ratio with a zero
    denominator and a nonzero numerator is infinite, so if the numerical rank
    ``k`` of the matrix is at most ``r_max`` the answer is ``k``; ratios of two
    zeros are skipped. Ties go to the smallest ``r``.
    """
    psi = np.asarray(singular_values, dtype=float).reshape(-1)
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    if psi.shape[0] < r_max + 1:
        raise ValueError(f"need at least r_max + 1 = {r_max + 1} singular values, got {psi.shape[0]}")
    if np.any(np.diff(psi) > 1e-12 * max(abs(psi[0]), 1.0)):
        raise ValueError("singular values must be nonincreasing")
    if not np.isfinite(psi[0]) or psi[0] <= 0.0:
        raise RankSelectionError("all singular values are zero; no rank can be selected")
    floor = eps * psi[0]
    positive = psi > floor
    k = int(np.count_nonzero(positive[: r_max + 1]))
    if k <= r_max:
        return k
    ratios = psi[:r_max] / psi[1 : r_max + 1]
    return int(np.argmax(ratios)) + 1


def normalize_factors(lam: np.ndarray, gam: np.ndarray, rtol: float = 1e-12):
    """Rotate ``(Lambda, Gamma)`` so ``Lambda'Lambda/N = Gamma'Gamma/T`` is diagonal.

    The product ``Lambda Gamma'`` is unchanged; the common diagonal is
    nonincreasing and signs follow the module convention. The result equals
    :func:`extract_factors` applied to ``Lambda Gamma'``.
    """
    lam = np.asarray(lam, dtype=float)
    gam = np.asarray(gam, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    if gam.ndim == 1:
        gam = gam[:, None]
    n, r = lam.shape
    t = gam.shape[0]
    if r == 0:
        return lam.copy(), gam.copy()
    ql, rl = np.linalg.qr(lam)
    qg, rg = np.linalg.qr(gam)
    core = rl @ rg.T
    try:
        uc, d, vct = np.linalg.svd(core)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    if d[-1] <= rtol * d[0] or d[0] == 0.0:
        raise DegeneracyError("loadings/factors are rank deficient; cannot normalise")
    u, v = _fix_signs(ql @ uc, qg @ vct.T)
    root = np.sqrt(d / np.sqrt(n * t))
    return np.sqrt(n) * u * root, np.sqrt(t) * v * root

