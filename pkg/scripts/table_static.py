"""Static logit Monte Carlo table (bias and std times 100, mean R_hat).

    python scripts/table_static.py --n 100 --t 100 --reps 200 --workers 1 --out results/static
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from twostep_ife.montecarlo import ESTIMATORS, McConfig, result_to_json, run_monte_carlo, table_rows


def run(dgp, defaults, argv=None):
    ap = argparse.ArgumentParser(description=f"{dgp} Monte Carlo table")
    ap.add_argument("--n", type=int, default=defaults["n"])
    ap.add_argument("--t", type=int, default=defaults["t"])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--estimators", default=",".join(defaults["estimators"]))
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args(argv)

    cfg = McConfig(dgp=dgp, n=args.n, t=args.t, replications=args.reps, seed=args.seed,
                   workers=args.workers, estimators=tuple(args.estimators.split(",")))
    start = time.perf_counter()
    res = run_monte_carlo(cfg)
    rows = table_rows(res)
    width = max(len(r[0]) for r in rows)
    print(rows[0][0].ljust(width), *(c.rjust(8) for c in rows[0][1:]))
    for row in rows[1:]:
        cells = [c if not c or i == 0 else f"{float(c):8.3f}" for i, c in enumerate(row)]
        print(cells[0].ljust(width), *(c.rjust(8) for c in cells[1:]))
    print(f"{res.n_success}/{cfg.replications} replications, {len(res.failures)} failed, "
          f"{time.perf_counter() - start:.0f} s", file=sys.stderr)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "table.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        (args.out / "draws.json").write_text(json.dumps(result_to_json(res), indent=1) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(run("logit_static", {"n": 100, "t": 100, "estimators": ESTIMATORS}))
