"""The full estimator: tuning, regularised first stage, local second stage
and bias correction, wired together."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InferenceError, JackknifeError
from .inference import BiasTerms, analytic_bias_correct, bias_terms, jackknife_correct, standard_errors
from .local import LocalOptions, LocalSolution, delta_radius, hessian_probe_convexity, solve_local, start_from_nnr
from .model import FactorParams, PanelData, get_family
from .nnr import NnrOptions, NnrSolution, solve_nnr
from .tuning import TuningResult, phi_at_rank, tune, tune_at_phi


@dataclass
class PipelineOptions:
    """Knobs shared by full-panel and half-panel runs."""

    alpha: float = 0.05
    r_max: int = 5
    literal_scaling: bool = False
    nnr: NnrOptions | None = None
    local: LocalOptions | None = None
    xi_method: str = "schur"
    phi: float | None = None  # fixed level; None tunes it from the data
    jackknife_reselect_rank: bool = False  # halves inherit the full-panel rank by default


def tune_for(panel: PanelData, family, opts: PipelineOptions) -> TuningResult:
    if opts.phi is not None:
        return tune_at_phi(panel, family, opts.phi, opts.r_max, opts.nnr)
    return tune(panel, family, opts.alpha, opts.r_max, opts.literal_scaling, opts.nnr)


@dataclass
class TwoStepFit:
    r: int
    tuning: TuningResult
    nnr: NnrSolution
    local: LocalSolution

    @property
    def beta(self) -> np.ndarray:
        return self.local.params.beta

    @property
    def beta_nnr(self) -> np.ndarray:
        return self.nnr.beta


def _nnr_options(opts: PipelineOptions, phi: float, beta0=None, theta0=None) -> NnrOptions:
    base = opts.nnr or NnrOptions(phi=phi)
    return replace(base, phi=phi, beta_init=beta0, theta_init=theta0)


def nnr_at_phi_hat(panel: PanelData, family, tuning: TuningResult, opts: PipelineOptions) -> NnrSolution:
    """First-stage estimate at ``phi_hat``, warm-started from the ``phi_tilde`` fit."""
    first = tuning.nnr_fit
    return solve_nnr(panel, family, _nnr_options(opts, tuning.phi_hat, first.beta, first.theta))


def local_from_nnr(panel: PanelData, family, nnr: NnrSolution, r: int, opts: PipelineOptions) -> LocalSolution:
    fam = get_family(family)
    score = fam.score(panel.y, panel.index(nnr.beta, nnr.theta))
    lam, gam = start_from_nnr(nnr.theta, score, r)
    return solve_local(panel, fam, r, FactorParams(nnr.beta, lam, gam), opts.local)


def tuning_at_rank(panel: PanelData, family, r: int, opts: PipelineOptions) -> TuningResult:
    """Tuning for an imposed rank: ``phi_hat`` comes from the rank-``r`` truncation.

    No rank is selected, so this works even when the first-stage fit is zero.
    """
    fam = get_family(family)
    n, t = panel.shape
    r_max = max(1, min(opts.r_max, min(n, t) - 1))
    if opts.phi is not None:
        return tune_at_phi(panel, fam, opts.phi, r_max, opts.nnr, select_rank=False)
    base = tune(panel, fam, opts.alpha, r_max, opts.literal_scaling, opts.nnr, select_rank=False)
    return replace(base, phi_hat=phi_at_rank(panel, fam, base.nnr_fit, r, opts.alpha, opts.literal_scaling))


def fit_two_step(
    panel: PanelData,
    family,
    r: int | None = None,
    options: PipelineOptions | None = None,
    tuning: TuningResult | None = None,
) -> TwoStepFit:
    """Tune, solve the regularised problem at ``phi_hat`` and run the local step.

    ``r=None`` selects the rank by the eigenvalue-ratio test. A given ``r``
    skips selection and ``phi_hat`` is computed at the rank-``r`` truncation.
    """
    opts = options or PipelineOptions()
    fam = get_family(family)
    if tuning is None:
        tuning = tune_for(panel, fam, opts) if r is None else tuning_at_rank(panel, fam, int(r), opts)
    nnr = nnr_at_phi_hat(panel, fam, tuning, opts)
    r_used = tuning.r_hat if r is None else int(r)
    local = local_from_nnr(panel, fam, nnr, r_used, opts)
    return TwoStepFit(r_used, tuning, nnr, local)


def fit_fixed_ranks(panel: PanelData, family, ranks, options: PipelineOptions | None = None) -> dict[int, TwoStepFit]:
    """Two-step fits for each imposed rank, sharing one first-stage tuning run.

    This is the half-panel estimator of the jackknife: ``phi`` is re-tuned
    on the given panel while the number of factors is inherited.
    """
    opts = options or PipelineOptions()
    fam = get_family(family)
    ranks = list(dict.fromkeys(int(r) for r in ranks))
    base = tuning_at_rank(panel, fam, ranks[0], opts)
    fits = {}
    for r in ranks:
        tuning = base
        if opts.phi is None and r != ranks[0]:
            tuning = replace(base, phi_hat=phi_at_rank(panel, fam, base.nnr_fit, r, opts.alpha, opts.literal_scaling))
        fits[r] = fit_two_step(panel, fam, r, opts, tuning)
    return fits


def fit_fixed_rank(panel: PanelData, family, r: int, options: PipelineOptions | None = None) -> TwoStepFit:
    """:func:`fit_fixed_ranks` for a single rank."""
    return fit_fixed_ranks(panel, family, [r], options)[int(r)]


def _half_estimate(sub: PanelData, family, r: int, opts: PipelineOptions) -> np.ndarray:
    if opts.jackknife_reselect_rank:
        return fit_two_step(sub, family, None, opts).beta
    return fit_fixed_rank(sub, family, r, opts).beta


BIAS_MODES = ("analytic", "jackknife", "both", "none")


@dataclass
class EstimateReport:
    names: tuple[str, ...]
    fit: TwoStepFit
    rank_source: str
    beta_analytic_bc: np.ndarray | None = None
    beta_jackknife_bc: np.ndarray | None = None
    se: np.ndarray | None = None
    w_hat: np.ndarray | None = None
    b_hat: np.ndarray | None = None
    d_hat: np.ndarray | None = None
    jackknife_halves: dict | None = None
    errors: dict[str, str] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.fit.beta

    @property
    def beta_nnr(self) -> np.ndarray:
        return self.fit.beta_nnr

    @property
    def converged(self) -> bool:
        return bool(self.fit.nnr.converged and self.fit.local.converged)


def estimate(
    panel: PanelData,
    family,
    r: int | None = None,
    options: PipelineOptions | None = None,
    bias: str = "both",
    convexity_probes: int = 0,
    seed: int = 0,
    strict: bool = True,
) -> EstimateReport:
    """Two-step estimate followed by the requested bias corrections.

    Standard errors are always computed. With ``strict=False`` inference
    failures are stored in ``report.errors`` (keys ``"analytic"`` and
    ``"jackknife"``) instead of being raised, so the point estimates survive.
    """
    if bias not in BIAS_MODES:
        raise ValueError(f"bias must be one of {BIAS_MODES}")
    opts = options or PipelineOptions()
    fam = get_family(family)
    if panel.d_x == 0:
        raise InferenceError("estimation needs at least one covariate")
    fit = fit_two_step(panel, fam, r, opts)
    report = EstimateReport(panel.names, fit, "eigenvalue_ratio" if r is None else "user")

    try:
        terms: BiasTerms = bias_terms(panel, fam, fit.local.params, opts.xi_method)
        report.w_hat, report.b_hat, report.d_hat = terms.w_hat, terms.b_hat, terms.d_hat
        report.se = standard_errors(terms.w_hat, *panel.shape)
        if bias in ("analytic", "both"):
            report.beta_analytic_bc = analytic_bias_correct(panel, fam, fit.local.params, terms)
    except InferenceError as exc:
        if strict:
            raise
        report.errors["analytic"] = str(exc)
    if bias in ("jackknife", "both"):
        try:
            report.beta_jackknife_bc, report.jackknife_halves = jackknife_correct(
                panel, fit.beta, lambda sub: _half_estimate(sub, fam, fit.r, opts)
            )
        except JackknifeError as exc:
            if strict:
                raise
            report.errors["jackknife"] = str(exc)

    n, t = panel.shape
    report.diagnostics = {
        "phi_tilde": fit.tuning.phi_tilde,
        "phi_hat": fit.tuning.phi_hat,
        "r_selected": fit.tuning.r_hat,
        "iters_nnr": fit.nnr.iterations,
        "iters_local": fit.local.iterations,
        "nnr_converged": fit.nnr.converged,
        "local_converged": fit.local.converged,
        "converged": report.converged,
        "nnr_objective": fit.nnr.penalized_objective,
        "objective": fit.local.objective,
        "delta_radius": delta_radius(n, t),
        "convexity_probe_min": None,
    }
    if convexity_probes > 0:
        report.diagnostics["convexity_probe_min"] = hessian_probe_convexity(
            panel, fam, fit.local.params, convexity_probes, seed=seed
        )
    return report
