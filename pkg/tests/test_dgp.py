import math

import numpy as np
import pytest
from scipy import stats

from twostep_ife.dgp import gen_logit_dynamic, gen_logit_static, rng_for


def test_rng_streams_are_reproducible_and_distinct():
    a = rng_for(3, 7).standard_normal(5)
    assert np.array_equal(a, rng_for(3, 7).standard_normal(5))
    assert not np.array_equal(a, rng_for(3, 8).standard_normal(5))
    assert not np.array_equal(a, rng_for(4, 7).standard_normal(5))


def test_static_shapes_and_determinism():
    p1, truth = gen_logit_static(12, 9, seed=(1, 2))
    p2, _ = gen_logit_static(12, 9, seed=(1, 2))
    assert p1.shape == (12, 9) and p1.x.shape == (1, 12, 9)
    assert truth.lam.shape == (12, 2) and truth.gam.shape == (9, 2)
    assert np.array_equal(p1.y, p2.y) and np.array_equal(p1.x, p2.x)
    assert set(np.unique(p1.y)) <= {0.0, 1.0}


def test_static_covariate_loads_on_the_factors():
    p, truth = gen_logit_static(300, 300, seed=5)
    resid = p.x[0] - truth.theta() - truth.lam.sum(1)[:, None] - truth.gam.sum(1)[None, :]
    # remainder is rank one plus N(0, 4) noise
    s = np.linalg.svd(resid, compute_uv=False) / np.sqrt(300 * 300)
    assert s[0] > 3 * s[1]
    assert abs(resid.var() - 5.0) < 0.5


def test_dynamic_lag_column_is_the_lagged_outcome():
    p, truth = gen_logit_dynamic(15, 10, seed=4)
    lag, z = p.x
    assert np.array_equal(lag[:, 1:], p.y[:, :-1])
    assert set(np.unique(lag[:, 0])) <= {0.0, 1.0}
    assert p.names == ("y_lag", "z")
    assert np.array_equal(truth.beta, [0.5, 0.2])
    again, _ = gen_logit_dynamic(15, 10, seed=4)
    assert np.array_equal(again.y, p.y)


@pytest.mark.parametrize("gen", [gen_logit_static, gen_logit_dynamic])
def test_rejects_degenerate_sizes(gen):
    with pytest.raises(ValueError):
        gen(1, 5, seed=0)


def test_covariate_mean_is_zero():
    # 10^6 draws spread over many small panels so the shared effects average out
    total = math.fsum(float(gen_logit_static(5, 5, seed=(6, k))[0].x.sum()) for k in range(40_000))
    assert abs(total / 1e6) <= 0.01


def test_outcome_is_a_fair_coin_at_zero_index():
    p, truth = gen_logit_static(1000, 1000, seed=7)
    index = 0.2 * p.x[0] + truth.theta()
    near = np.abs(index) < 0.05
    assert near.sum() > 10_000
    assert abs(p.y[near].mean() - 0.5) <= 0.02


def test_dynamic_without_state_dependence_matches_static_margin():
    counts = []
    for gen, beta in ((gen_logit_static, 0.2), (gen_logit_dynamic, (0.0, 0.2))):
        ones = sum(float(gen(400, 250, seed=(8, k), beta=beta)[0].y.sum()) for k in range(2))
        counts.append([ones, 2 * 400 * 250 - ones])
    assert stats.chi2_contingency(np.array(counts))[1] > 0.01
