"""Monte Carlo harness: replication loop, estimator columns and aggregation.

Every replication draws its data from a stream keyed by ``(seed, rep)``, so
results do not depend on the number of workers or their scheduling. Any
stage failure drops the whole replication from every column and is recorded
with its stage and error message.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import fit_pooled
from .dgp import gen_logit_dynamic, gen_logit_static, rng_for  # noqa: F401 - re-exported
from .inference import analytic_bias_correct, bias_terms, jackknife_combine, half_panels
from .local import LocalOptions
from .model import get_family
from .pipeline import PipelineOptions, fit_fixed_ranks, local_from_nnr, nnr_at_phi_hat
from .tuning import tune

ESTIMATORS = ("POOL", "NNR", "FE", "FE_A", "FE_J", "FER", "FER_A", "FER_J")
GENERATORS = {"logit_static": gen_logit_static, "logit_dynamic": gen_logit_dynamic}
DEFAULT_BETA = {"logit_static": (0.2,), "logit_dynamic": (0.5, 0.2)}
# The FE likelihood has no finite maximiser once a unit or period is
# quasi-separated, so the local step is capped in simulations.
MC_LOCAL_MAX_ITERS = 500


@dataclass
class McConfig:
    dgp: str = "logit_static"
    n: int = 100
    t: int = 100
    replications: int = 200
    seed: int = 0
    alpha: float = 0.05
    r_max: int = 5
    estimators: tuple[str, ...] = ESTIMATORS
    true_r: int = 2
    beta_true: tuple[float, ...] | None = None
    local_max_iters: int = MC_LOCAL_MAX_ITERS
    workers: int = 1

    def __post_init__(self):
        if self.dgp not in GENERATORS:
            raise ValueError(f"unknown dgp {self.dgp!r}; expected one of {sorted(GENERATORS)}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.n < 2 or self.t < 2:
            raise ValueError("n and t must be at least 2")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}; expected a subset of {list(ESTIMATORS)}")
        self.estimators = tuple(e for e in ESTIMATORS if e in self.estimators)
        if self.beta_true is None:
            self.beta_true = DEFAULT_BETA[self.dgp]
        self.beta_true = tuple(float(b) for b in self.beta_true)
        if self.true_r < 1 or self.r_max < 1 or self.workers < 1 or self.local_max_iters < 1:
            raise ValueError("true_r, r_max, workers and local_max_iters must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def jackknife_allowed(self) -> bool:
        return self.dgp == "logit_static"

    @property
    def active_estimators(self) -> tuple[str, ...]:
        if self.jackknife_allowed:
            return self.estimators
        return tuple(e for e in self.estimators if not e.endswith("_J"))


@dataclass
class ReplicationOutcome:
    rep: int
    estimates: dict[str, list[float]]
    r_hat: int | None
    failure: dict | None = None


@dataclass
class McResult:
    config: McConfig
    names: tuple[str, ...]
    estimates: dict[str, np.ndarray]
    bias: dict[str, np.ndarray]
    std: dict[str, np.ndarray]
    std_defined: bool
    r_bar: float
    r_hats: list[int]
    n_success: int
    failures: list[dict] = field(default_factory=list)


def _needs(cfg: McConfig, *names: str) -> bool:
    return any(n in cfg.active_estimators for n in names)


def _replication(cfg: McConfig, rep: int) -> ReplicationOutcome:
    stage = "generate"
    try:
        fam = get_family("logit")
        gen = GENERATORS[cfg.dgp]
        panel, _ = gen(cfg.n, cfg.t, seed=(int(cfg.seed), rep), beta=cfg.beta_true if cfg.dgp == "logit_dynamic" else cfg.beta_true[0], r=cfg.true_r)
        opts = PipelineOptions(alpha=cfg.alpha, r_max=cfg.r_max, local=LocalOptions(max_iters=cfg.local_max_iters))
        out: dict[str, list[float]] = {}

        if "POOL" in cfg.active_estimators:
            stage = "pool"
            out["POOL"] = fit_pooled(panel, fam).beta.tolist()

        if not _needs(cfg, *ESTIMATORS[1:]):
            return ReplicationOutcome(rep, out, None)
        stage = "tune"
        tuning = tune(panel, fam, cfg.alpha, cfg.r_max)
        r_hat = tuning.r_hat
        stage = "nnr"
        nnr = nnr_at_phi_hat(panel, fam, tuning, opts)
        if "NNR" in cfg.active_estimators:
            out["NNR"] = nnr.beta.tolist()

        ranks = {}
        if _needs(cfg, "FE", "FE_A", "FE_J"):
            ranks["FE"] = cfg.true_r
        if _needs(cfg, "FER", "FER_A", "FER_J"):
            ranks["FER"] = r_hat
        locals_by_rank = {}
        for col, r in ranks.items():
            stage = "local"
            if r not in locals_by_rank:
                locals_by_rank[r] = local_from_nnr(panel, fam, nnr, r, opts)
            loc = locals_by_rank[r]
            if col in cfg.active_estimators:
                out[col] = loc.params.beta.tolist()
            if f"{col}_A" in cfg.active_estimators:
                stage = "analytic"
                out[f"{col}_A"] = analytic_bias_correct(panel, fam, loc.params, bias_terms(panel, fam, loc.params)).tolist()

        jk_ranks = {col: r for col, r in ranks.items() if f"{col}_J" in cfg.active_estimators}
        if jk_ranks:
            stage = "jackknife"
            halves = {}
            for name, (rows, cols) in half_panels(cfg.n, cfg.t).items():
                fits = fit_fixed_ranks(panel.subpanel(rows, cols), fam, list(jk_ranks.values()), opts)
                halves[name] = {r: f.beta for r, f in fits.items()}
            for col, r in jk_ranks.items():
                beta = locals_by_rank[r].params.beta
                out[f"{col}_J"] = jackknife_combine(beta, {k: v[r] for k, v in halves.items()}).tolist()
        return ReplicationOutcome(rep, out, r_hat)
    except Exception as exc:  # noqa: BLE001 - recorded per replication, run continues
        failure = {"rep": rep, "seed": [int(cfg.seed), rep], "stage": stage, "error": f"{type(exc).__name__}: {exc}"}
        return ReplicationOutcome(rep, {}, None, failure)


def _single_blas_thread():
    threadpool_limits(1)


def _run_chunk(args):
    cfg, reps = args
    return [_replication(cfg, r) for r in reps]


def _fsum_mean(values: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) / len(col) for col in values.T])


def _fsum_std(values: np.ndarray, mean: np.ndarray) -> np.ndarray:
    k = values.shape[0]
    if k < 2:
        return np.full(values.shape[1], np.nan)
    return np.array([math.sqrt(math.fsum((c - m) ** 2 for c in col) / (k - 1)) for col, m in zip(values.T, mean)])


def aggregate(cfg: McConfig, outcomes: list[ReplicationOutcome]) -> McResult:
    outcomes = sorted(outcomes, key=lambda o: o.rep)
    ok = [o for o in outcomes if o.failure is None]
    failures = [o.failure for o in outcomes if o.failure is not None]
    d = len(cfg.beta_true)
    truth = np.asarray(cfg.beta_true)
    estimates, bias, std = {}, {}, {}
    for col in cfg.active_estimators:
        vals = np.array([o.estimates[col] for o in ok], dtype=float).reshape(len(ok), d)
        estimates[col] = vals
        if len(ok):
            mean = _fsum_mean(vals)
            bias[col] = mean - truth
            std[col] = _fsum_std(vals, mean)
        else:
            bias[col] = np.full(d, np.nan)
            std[col] = np.full(d, np.nan)
    r_hats = [int(o.r_hat) for o in ok if o.r_hat is not None]
    r_bar = math.fsum(r_hats) / len(r_hats) if r_hats else float("nan")
    names = ("y_lag", "z") if cfg.dgp == "logit_dynamic" else ("x1",)
    return McResult(cfg, names, estimates, bias, std, len(ok) >= 2, r_bar, r_hats, len(ok), failures)


def run_monte_carlo(config: McConfig) -> McResult:
    """Run all replications and aggregate bias, std and mean ``R_hat``.

    BLAS runs single-threaded in every worker, so the draws do not depend on
    ``config.workers``.
    """
    reps = list(range(config.replications))
    if config.workers == 1:
        with threadpool_limits(1):
            outcomes = [_replication(config, r) for r in reps]
    else:
        chunks = [(config, reps[k :: config.workers]) for k in range(config.workers)]
        with ProcessPoolExecutor(max_workers=config.workers, initializer=_single_blas_thread) as pool:
            outcomes = [o for part in pool.map(_run_chunk, chunks) for o in part]
    return aggregate(config, outcomes)


# ------------------------------------------------------------------ #
# Reporting
# ------------------------------------------------------------------ #


def table_rows(result: McResult, scale: float = 100.0) -> list[list[str]]:
    """Table in the layout ``row, POOL ... FER_J, R_bar`` (values times ``scale``).

    One BIAS and one STD row per coefficient. Columns for estimators that
    were not run are empty; ``R_bar`` is filled on BIAS rows only. When some
    replications failed, a final ``successes`` row gives the count behind
    each column.
    """
    header = ["row", *ESTIMATORS, "R_bar"]
    rows = [header]
    for j, name in enumerate(result.names):
        for kind, source in (("BIAS", result.bias), ("STD", result.std)):
            row = [f"{name} {kind}"]
            for col in ESTIMATORS:
                v = source.get(col)
                row.append("" if v is None or not np.isfinite(v[j]) else repr(float(v[j] * scale)))
            row.append(repr(float(result.r_bar)) if kind == "BIAS" and np.isfinite(result.r_bar) else "")
            rows.append(row)
    if result.n_success < result.config.replications:
        active = result.config.active_estimators
        rows.append(["successes", *(str(result.n_success) if c in active else "" for c in ESTIMATORS), ""])
    return rows


def result_to_json(result: McResult) -> dict:
    cfg = asdict(result.config)
    cfg["estimators"] = list(cfg["estimators"])
    cfg["beta_true"] = list(cfg["beta_true"])
    return {
        "config": cfg,
        "names": list(result.names),
        "n_success": result.n_success,
        "std_defined": result.std_defined,
        "r_bar": result.r_bar if np.isfinite(result.r_bar) else None,
        "r_hats": result.r_hats,
        "bias": {k: _finite_list(v) for k, v in result.bias.items()},
        "std": {k: _finite_list(v) for k, v in result.std.items()},
        "estimates": {k: v.tolist() for k, v in result.estimates.items()},
        "failures": result.failures,
    }


def _finite_list(v) -> list[float | None]:
    return [float(x) if np.isfinite(x) else None for x in v]
