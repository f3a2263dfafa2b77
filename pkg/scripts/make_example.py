"""Regenerate data/example_poisson_20x10.csv.

Poisson panel, N=20, T=10, one factor, beta=0.5:
y ~ Poisson(exp(0.5 x + lambda_i gamma_t)), x = N(0,1) + lambda_i gamma_t.
"""

from pathlib import Path

import numpy as np

from twostep_ife import PanelData, write_panel_csv
from twostep_ife.dgp import rng_for

N, T, BETA, SEED = 20, 10, 0.5, 0


def make_panel():
    rng = rng_for(SEED)
    lam = rng.normal(0.0, 0.7, (N, 1))
    gam = rng.normal(0.0, 0.7, (T, 1))
    theta = lam @ gam.T
    x = rng.normal(size=(N, T)) + theta
    y = rng.poisson(np.exp(BETA * x + theta)).astype(float)
    return PanelData(y, x[None], ("x1",))


if __name__ == "__main__":
    out = Path(__file__).resolve().parent.parent / "data" / "example_poisson_20x10.csv"
    out.parent.mkdir(exist_ok=True)
    write_panel_csv(out, make_panel())
    print(out)
