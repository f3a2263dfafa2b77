import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostep_ife import FactorParams, InferenceError, JackknifeError, PanelData, compute_xi, gen_logit_static, get_family
from twostep_ife.inference import (
    BiasTerms,
    analytic_bias_correct,
    bias_terms,
    half_panels,
    jackknife_combine,
    jackknife_correct,
    standard_errors,
    xi_normal_residual,
)

from conftest import random_panel


def _setup(seed, n=6, t=6, r=2, d=2):
    rng = np.random.default_rng(seed)
    return (
        rng.standard_normal((d, n, t)),
        rng.uniform(0.05, 0.25, (n, t)),
        rng.standard_normal((n, r)),
        rng.standard_normal((t, r)),
    )


def _weighted_lsq_oracle(x, w, lam, gam):
    # dense least squares over vec(a), vec(b)
    n, r = lam.shape
    t = gam.shape[0]
    rows = []
    for i in range(n):
        for s in range(t):
            a_part = np.zeros((n, r))
            a_part[i] = gam[s]
            b_part = np.zeros((t, r))
            b_part[s] = lam[i]
            rows.append(np.concatenate([a_part.ravel(), b_part.ravel()]))
    design = np.array(rows) * np.sqrt(w.reshape(-1, 1))
    target = x.reshape(-1) * np.sqrt(w.reshape(-1))
    coef = np.linalg.lstsq(design, target, rcond=None)[0]
    return (np.array(rows) @ coef).reshape(n, t)


@pytest.mark.parametrize("shape", [(6, 6), (7, 4), (4, 7)])
def test_xi_matches_dense_least_squares(shape):
    n, t = shape
    x, w, lam, gam = _setup(0, n, t)
    xi = compute_xi(x, w, lam, gam)
    for d in range(2):
        assert np.allclose(xi[d], _weighted_lsq_oracle(x[d], w, lam, gam), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_xi_normal_equations(seed, r):
    x, w, lam, gam = _setup(seed, 7, 6, r)
    xi = compute_xi(x, w, lam, gam)
    assert xi_normal_residual(x, w, lam, gam, xi) <= 1e-8
    again = compute_xi(xi, w, lam, gam)
    assert np.allclose(again, xi, atol=1e-9)


def test_xi_of_target_in_span_is_identity():
    _, w, lam, gam = _setup(1)
    rng = np.random.default_rng(1)
    x = (rng.standard_normal((6, 2)) @ gam.T + lam @ rng.standard_normal((6, 2)).T)[None]
    assert np.allclose(compute_xi(x, w, lam, gam), x, atol=1e-8)


def test_xi_of_orthogonal_target_is_zero():
    n = t = 6
    w = np.ones((n, t))
    lam = np.zeros((n, 1))
    lam[:3, 0] = 1.0
    gam = np.zeros((t, 1))
    gam[:3, 0] = 1.0
    x = np.zeros((1, n, t))
    x[0, 3:, 3:] = np.random.default_rng(2).standard_normal((3, 3))
    assert np.allclose(compute_xi(x, w, lam, gam), 0.0, atol=1e-12)


def test_xi_minimises_weighted_residual():
    x, w, lam, gam = _setup(3, r=1, d=1)
    xi = compute_xi(x, w, lam, gam)[0]
    best = np.sum(w * (x[0] - xi) ** 2)
    rng = np.random.default_rng(3)
    for _ in range(100):
        cand = rng.standard_normal((6, 1)) @ gam.T + lam @ rng.standard_normal((6, 1)).T
        assert best <= np.sum(w * (x[0] - cand) ** 2) + 1e-12


def test_xi_als_agrees_with_schur():
    x, w, lam, gam = _setup(4, r=1)
    a = compute_xi(x, w, lam, gam, method="schur")
    b = compute_xi(x, w, lam, gam, method="als")
    assert np.allclose(a, b, atol=1e-6)


def test_xi_rejects_negative_weights():
    x, w, lam, gam = _setup(5)
    with pytest.raises(InferenceError):
        compute_xi(x, -w, lam, gam)


def _fitted(seed=6):
    panel = random_panel("logit", 8, 7, d_x=2, seed=seed)
    rng = np.random.default_rng(seed)
    return panel, FactorParams(0.2 * rng.standard_normal(2), 0.5 * rng.standard_normal((8, 1)), 0.5 * rng.standard_normal((7, 1)))


def test_w_hat_symmetric_and_pd():
    panel, params = _fitted()
    terms = bias_terms(panel, "logit", params)
    assert np.max(np.abs(terms.w_hat - terms.w_hat.T)) <= 1e-12
    assert np.linalg.eigvalsh(terms.w_hat)[0] > 0


def test_bias_terms_against_loops():
    panel, params = _fitted(7)
    terms = bias_terms(panel, "logit", params)
    fam = get_family("logit")
    z = panel.index(params.beta, params.theta())
    l1, l2, l3 = fam.derivs(panel.y, z)
    n, t = panel.shape
    xt = terms.x_tilde
    b = np.zeros(2)
    dd = np.zeros(2)
    w = np.zeros((2, 2))
    for i in range(n):
        h_i = sum(l2[i, s] * np.outer(params.gam[s], params.gam[s]) for s in range(t))
        for s in range(t):
            q = params.gam[s] @ np.linalg.pinv(h_i) @ params.gam[s]
            b += q * (l1[i, s] * l2[i, s] + 0.5 * l3[i, s]) * xt[:, i, s]
            w += l2[i, s] * np.outer(xt[:, i, s], xt[:, i, s])
    for s in range(t):
        h_t = sum(l2[i, s] * np.outer(params.lam[i], params.lam[i]) for i in range(n))
        for i in range(n):
            p = params.lam[i] @ np.linalg.pinv(h_t) @ params.lam[i]
            dd += p * (l1[i, s] * l2[i, s] + 0.5 * l3[i, s]) * xt[:, i, s]
    assert np.allclose(terms.b_hat, -b / n, atol=1e-12)
    assert np.allclose(terms.d_hat, -dd / t, atol=1e-12)
    assert np.allclose(terms.w_hat, -w / (n * t), atol=1e-12)


def test_zero_bias_terms_leave_beta_unchanged():
    panel, params = _fitted()
    terms = BiasTerms(np.zeros(2), np.zeros(2), np.eye(2), panel.x)
    assert np.array_equal(analytic_bias_correct(panel, "logit", params, terms), params.beta)


def test_correction_formula():
    panel, params = _fitted()
    w = np.array([[2.0, 0.5], [0.5, 1.0]])
    terms = BiasTerms(np.array([1.0, -1.0]), np.array([0.5, 2.0]), w, panel.x)
    want = params.beta - np.linalg.solve(w, terms.b_hat) / 7 - np.linalg.solve(w, terms.d_hat) / 8
    assert np.allclose(analytic_bias_correct(panel, "logit", params, terms), want, atol=1e-14)


def test_non_pd_w_is_an_inference_error():
    panel, params = _fitted()
    terms = BiasTerms(np.zeros(2), np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]), panel.x)
    with pytest.raises(InferenceError):
        analytic_bias_correct(panel, "logit", params, terms)
    with pytest.raises(InferenceError):
        standard_errors(terms.w_hat, 5, 5)


def test_standard_errors():
    assert np.allclose(standard_errors(np.eye(3), 100, 100), 1e-2)
    w = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert np.allclose(standard_errors(w, 10, 10) / standard_errors(w, 20, 20), 2.0)


def test_half_panel_boundaries():
    h = half_panels(4, 5)
    t = np.arange(5)
    assert list(t[h["T1"][1]]) == [0, 1, 2] and list(t[h["T2"][1]]) == [3, 4]
    u = np.arange(4)
    assert list(u[h["N1"][0]]) == [0, 1] and list(u[h["N2"][0]]) == [2, 3]


@given(st.lists(st.floats(-5, 5), min_size=10, max_size=10))
def test_jackknife_is_affine_combination(vals):
    v = np.array(vals).reshape(5, 2)
    beta, halves = v[0], dict(zip(["T1", "T2", "N1", "N2"], v[1:]))
    out = jackknife_combine(beta, halves)
    assert np.allclose(out, 3 * v[0] - (v[1] + v[2]) / 2 - (v[3] + v[4]) / 2, atol=1e-12)


def test_jackknife_fixed_point():
    panel = random_panel("logit", 6, 5, seed=8)
    beta = np.array([0.4])
    out, halves = jackknife_correct(panel, beta, lambda sub: beta)
    assert np.allclose(out, beta, rtol=0, atol=1e-15)
    assert halves["T1"].shape == (1,)


def test_jackknife_reports_failing_halves():
    panel = random_panel("logit", 6, 5, seed=9)

    def estimator(sub):
        if sub.shape == (6, 3):
            raise RuntimeError("boom")
        return np.zeros(1)

    with pytest.raises(JackknifeError) as info:
        jackknife_correct(panel, np.zeros(1), estimator)
    assert info.value.failing == ["T1"]


def _term_at_truth(panel, truth, rows, cols, which):
    sub = panel.subpanel(rows, cols)
    terms = bias_terms(sub, "logit", FactorParams(truth.beta, truth.lam[rows], truth.gam[cols]))
    vec = terms.b_hat if which == "b" else terms.d_hat
    size = len(cols) if which == "b" else len(rows)
    return abs(np.linalg.solve(terms.w_hat, vec)[0]) / size


@pytest.mark.parametrize("seed", [0, 1])
def test_bias_terms_shrink_like_one_over_t(seed):
    # evaluated at the truth on a wide cross-section so the plug-in noise is small
    panel, truth = gen_logit_static(2000, 80, seed=(79, seed))
    rows = np.arange(2000)
    ratio = _term_at_truth(panel, truth, rows, np.arange(40), "b") / _term_at_truth(panel, truth, rows, np.arange(80), "b")
    assert abs(ratio - 2.0) <= 0.5


@pytest.mark.parametrize("seed", [0, 1])
def test_bias_terms_shrink_like_one_over_n(seed):
    panel, truth = gen_logit_static(80, 2000, seed=(80, seed))
    cols = np.arange(2000)
    ratio = _term_at_truth(panel, truth, np.arange(40), cols, "d") / _term_at_truth(panel, truth, np.arange(80), cols, "d")
    assert abs(ratio - 2.0) <= 0.5
