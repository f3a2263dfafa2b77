"""Command-line front end.

``twostep-ife estimate panel.csv --out DIR`` writes ``DIR/report.json`` (and,
with ``--write-factors``, ``theta.csv``, ``lambda.csv``, ``gamma.csv``).
``twostep-ife simulate --dgp logit_static --out DIR`` writes ``DIR/table.csv``
and ``DIR/draws.json``.

Exit codes: 0 success, 1 bad input or configuration, 2 an optimiser stopped
before converging (the report is still written), 3 inference failed (for
example a singular ``W_hat``; the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import IFEError, StallError, TuningError
from .local import LocalOptions
from .model import FAMILIES, get_family
from .montecarlo import ESTIMATORS, GENERATORS, McConfig, result_to_json, run_monte_carlo, table_rows
from .nnr import NnrOptions
from .panelio import read_panel_csv, write_matrix_csv
from .pipeline import BIAS_MODES, PipelineOptions, estimate

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_INFERENCE = 0, 1, 2, 3
CONVEXITY_PROBES = 20


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for non-convergence here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _auto_or(kind):
    def parse(text: str):
        if text == "auto":
            return None
        try:
            return kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'auto' or a {kind.__name__}, got {text!r}") from None

    return parse


def _default_threads() -> int:
    raw = os.environ.get("IFE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _jsonable(v):
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twostep-ife", description="Two-step estimation of nonlinear panels with interactive fixed effects.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", help="estimate a panel from a long-format CSV")
    e.add_argument("csv", type=Path, help="columns unit,time,y,x1,...,xd")
    e.add_argument("--family", choices=sorted(FAMILIES), default="logit")
    e.add_argument("--rank", type=_auto_or(int), default=None, metavar="INT|auto")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--rmax", type=int, default=5)
    e.add_argument("--phi", type=_auto_or(float), default=None, metavar="REAL|auto")
    e.add_argument("--bias", choices=BIAS_MODES, default="both")
    e.add_argument("--threads", type=int, default=None, help="BLAS threads (default $IFE_THREADS or 1)")
    e.add_argument("--tol", type=float, default=None, help="relative objective tolerance for both stages")
    e.add_argument("--max-iters", type=int, default=None, help="iteration cap for both stages")
    e.add_argument("--seed", type=int, default=0, help="seed of the convexity probe")
    e.add_argument("--out", type=Path, default=Path("."))
    e.add_argument("--write-factors", action="store_true", help="also write theta.csv, lambda.csv, gamma.csv")

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--config", type=Path, help="JSON file with McConfig fields; flags override it")
    s.add_argument("--dgp", choices=sorted(GENERATORS))
    s.add_argument("--n", type=int)
    s.add_argument("--t", type=int)
    s.add_argument("--reps", type=int, dest="replications")
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--rmax", type=int, dest="r_max")
    s.add_argument("--estimators", type=lambda v: tuple(x.strip() for x in v.split(",") if x.strip()),
                   help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    s.add_argument("--local-max-iters", type=int, dest="local_max_iters")
    s.add_argument("--threads", type=int, default=None, dest="workers", help="worker processes (default $IFE_THREADS or 1)")
    s.add_argument("--out", type=Path, default=Path("."))
    return p


def _pipeline_options(args) -> PipelineOptions:
    nnr_kw, local_kw = {}, {}
    if args.tol is not None:
        nnr_kw["tol_rel_obj"] = local_kw["tol_rel_obj"] = args.tol
    if args.max_iters is not None:
        nnr_kw["max_iters"] = local_kw["max_iters"] = args.max_iters
    # phi=1 is a placeholder; the pipeline replaces it before solving
    nnr = NnrOptions(phi=1.0, **nnr_kw) if nnr_kw else None
    local = LocalOptions(**local_kw) if local_kw else None
    return PipelineOptions(alpha=args.alpha, r_max=args.rmax, nnr=nnr, local=local, phi=args.phi)


def cmd_estimate(args) -> int:
    threads = args.threads if args.threads is not None else _default_threads()
    try:
        if threads < 1:
            raise ValueError("--threads must be positive")
        if args.rank is not None and args.rank < 1:
            raise ValueError("--rank must be a positive integer or 'auto'")
        loaded = read_panel_csv(args.csv)
        panel = loaded.panel
        fam = get_family(args.family)
        panel.validate_for(fam)
        opts = _pipeline_options(args)
    except (OSError, ValueError, IFEError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        with threadpool_limits(threads):
            rep = estimate(panel, fam, args.rank, opts, bias=args.bias, convexity_probes=CONVEXITY_PROBES,
                           seed=args.seed, strict=False)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except IFEError as exc:
        # No estimate to report; record the failure so scripted callers see it.
        stalled = isinstance(exc, (TuningError, StallError))
        print(f"error: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            _write_json(args.out / "report.json", {"error": f"{type(exc).__name__}: {exc}",
                                                    "diagnostics": {"converged": False}})
        except OSError:
            pass
        return EXIT_NOT_CONVERGED if stalled else EXIT_INFERENCE

    fit = rep.fit
    n, t = panel.shape
    diag = dict(rep.diagnostics)
    report = {
        "beta": rep.beta,
        "beta_nnr": rep.beta_nnr,
        "beta_bc_analytic": rep.beta_analytic_bc,
        "beta_bc_jackknife": rep.beta_jackknife_bc,
        "se": rep.se,
        "r_hat": fit.r,
        "rank_source": rep.rank_source,
        "phi_hat": fit.tuning.phi_hat,
        "phi_source": "user" if args.phi is not None else "auto",
        "w_hat": rep.w_hat,
        "b_hat": rep.b_hat,
        "d_hat": rep.d_hat,
        "names": list(panel.names),
        "family": args.family,
        "n": n,
        "t": t,
        "units": loaded.units,
        "periods": loaded.periods,
        "bias": args.bias,
        "errors": rep.errors,
        "diagnostics": diag,
    }
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "report.json", report)
        if args.write_factors:
            params = fit.local.params
            cols = [f"f{k + 1}" for k in range(fit.r)]
            write_matrix_csv(args.out / "theta.csv", params.theta(), loaded.units, loaded.periods, "unit")
            write_matrix_csv(args.out / "lambda.csv", params.lam, loaded.units, cols, "unit")
            write_matrix_csv(args.out / "gamma.csv", params.gam, loaded.periods, cols, "time")
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if rep.errors:
        for k, v in rep.errors.items():
            print(f"error: {k} inference failed: {v}", file=sys.stderr)
        return EXIT_INFERENCE
    if not rep.converged:
        print("warning: optimiser stopped before convergence; see diagnostics in the report", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _mc_config(args) -> McConfig:
    known = {f.name for f in fields(McConfig)}
    kw = {}
    if args.config is not None:
        raw = json.loads(args.config.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        kw.update(raw)
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if "workers" not in kw:
        kw["workers"] = _default_threads()
    for key in ("estimators", "beta_true"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    return McConfig(**kw)


def cmd_simulate(args) -> int:
    try:
        cfg = _mc_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    result = run_monte_carlo(cfg)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "table.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(table_rows(result))
        _write_json(args.out / "draws.json", result_to_json(result))
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if result.failures:
        print(f"warning: {len(result.failures)} of {cfg.replications} replications failed; see draws.json",
              file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "estimate":
        return cmd_estimate(args)
    return cmd_simulate(args)


if __name__ == "__main__":
    sys.exit(main())
