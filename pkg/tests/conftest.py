import numpy as np
import pytest

from twostep_ife import PanelData
from twostep_ife.dgp import rng_for


def random_panel(family: str, n: int, t: int, d_x: int = 1, seed: int = 0, scale: float = 1.0) -> PanelData:
    """Panel with standard normal covariates and outcomes drawn at a random index."""
    rng = rng_for(seed, 99)
    x = rng.standard_normal((d_x, n, t))
    z = scale * rng.standard_normal((n, t))
    if family == "poisson":
        y = rng.poisson(np.exp(1.5 + 0.5 * np.clip(z, -3, 3))).astype(float)
    elif family == "logit":
        y = (rng.random((n, t)) < 1 / (1 + np.exp(-z))).astype(float)
    else:
        y = (z + rng.standard_normal((n, t)) > 0).astype(float)
    return PanelData(y, x)


@pytest.fixture
def panel_factory():
    return random_panel
