import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import special, stats

from artifact import depmeasure as dm
from artifact import elliptical as el


def _gauss_pair(rho, n, seed):
    return el.sample_elliptical(el.EllipticalSpec("gaussian", rho), n, seed=seed)


def _student_pair(nu, rho, n, seed):
    return el.sample_elliptical(el.EllipticalSpec("student", rho, nu=nu), n, seed=seed)


# ---------------------------------------------------------------- ranks

def test_pseudo_ranks_ties_stable():
    assert_allclose(dm.pseudo_ranks([3.0, 1.0, 3.0, 2.0]), [3, 1, 4, 2])


# -------------------------------------------------------- empirical copula

def test_raw_unbiased_on_rank_grid():
    # N = 10, M = 5: nodes u = i/5 fall on the rank grid k/10
    rng = np.random.default_rng(0)
    acc = np.zeros((5, 5))
    reps = 20000
    for _ in range(reps):
        x, y = rng.random(10), rng.random(10)
        acc += dm.empirical_copula(x, y, m=5, correct_bias=False).values
    u = np.arange(1, 6) / 5
    assert_allclose(acc / reps, np.outer(u, u), atol=4e-3)


def test_small_sample_bias_and_correction():
    rng = np.random.default_rng(1)
    reps = 20000
    raw = cor = 0.0
    for _ in range(reps):
        x, y = rng.random(7), rng.random(7)
        raw += dm.empirical_copula(x, y, m=2, correct_bias=False).values[0, 0]
        cor += dm.empirical_copula(x, y, m=2).values[0, 0]
    assert raw / reps == pytest.approx(9 / 49, abs=3e-3)
    assert cor / reps == pytest.approx(0.25, abs=4e-3)


def test_comonotone_diagonal():
    x = np.random.default_rng(2).standard_normal(1000)
    c = dm.empirical_copula(x, x, m=50, correct_bias=False)
    u = c.nodes
    assert np.max(np.abs(c.diagonal() - u)) <= 1 / 1000


def test_corner_is_one():
    x = np.random.default_rng(3).standard_normal((2, 333))
    for cb in (True, False):
        assert dm.empirical_copula(x[0], x[1], m=30, correct_bias=cb).values[-1, -1] == 1.0


def test_copula_errors():
    with pytest.raises(ValueError):
        dm.empirical_copula(np.arange(5.0), np.arange(5.0), m=10)
    with pytest.raises(ValueError):
        dm.empirical_copula(np.arange(5.0), np.arange(6.0))
    with pytest.raises(ValueError):
        dm.self_copula(np.arange(5.0), 5)
    with pytest.raises(ValueError):
        dm.product_copula(10)(1.2, 0.5)


def test_default_grid():
    x = np.random.default_rng(4).standard_normal((2, 500))
    assert dm.empirical_copula(x[0], x[1]).grid_size == 50
    x = np.random.default_rng(4).standard_normal((2, 5000))
    assert dm.empirical_copula(x[0], x[1]).grid_size == 100


def test_bilinear_on_nodes_and_between():
    c = dm.product_copula(10)
    assert c(0.3, 0.7) == pytest.approx(0.21)
    assert c(0.35, 0.7) == pytest.approx(0.245)
    assert c(0.0, 0.5) == 0.0


@given(st.integers(0, 10**6), st.integers(50, 400), st.floats(-0.95, 0.95))
@settings(max_examples=30, deadline=None)
def test_frechet_bounds_and_monotone(seed, n, rho):
    xy = _gauss_pair(rho, n, seed)
    c = dm.empirical_copula(xy[:, 0], xy[:, 1], m=min(20, n))
    u = c.nodes
    uu, vv = np.meshgrid(u, u, indexing="ij")
    delta = 2.0 / n
    assert np.all(c.values >= np.maximum(uu + vv - 1, 0) - delta)
    assert np.all(c.values <= np.minimum(uu, vv) + delta)
    assert np.all(np.diff(c.values, axis=0) >= -delta)
    assert np.all(np.diff(c.values, axis=1) >= -delta)


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_rank_invariance(seed):
    xy = _student_pair(5, 0.4, 400, seed)
    x, y = xy[:, 0], xy[:, 1]
    a = dm.empirical_copula(x, y, m=20)
    b = dm.empirical_copula(np.exp(x), y**3, m=20)
    assert_allclose(a.values, b.values, atol=1e-12)
    pa = dm.dependence_coefficients(x, y, p_list=(0.9,))
    pb = dm.dependence_coefficients(np.exp(x), y, p_list=(0.9,))
    for k in ("spearman", "kendall", "blomqvist", "rho_b"):
        assert getattr(pa, k) == pytest.approx(getattr(pb, k), abs=1e-12)
    for q in pa.tail:
        assert_allclose(pa.tail[q], pb.tail[q], atol=1e-12)


# ------------------------------------------------------------ coefficients

def test_comonotone_coefficients():
    x = np.random.default_rng(5).standard_normal(1001)
    p = dm.dependence_coefficients(x, x)
    assert p.spearman == pytest.approx(1.0)
    assert p.kendall == pytest.approx(1.0)
    assert p.blomqvist == pytest.approx(1.0, abs=2e-3)


@pytest.mark.slow
def test_gaussian_pair_kendall_blomqvist():
    xy = _gauss_pair(0.5, 10**6, 6)
    p = dm.dependence_coefficients(xy[:, 0], xy[:, 1], p_list=())
    assert p.kendall == pytest.approx(1 / 3, abs=3e-3)
    assert p.blomqvist == pytest.approx(1 / 3, abs=4e-3)
    assert p.rho_b == pytest.approx(0.5, abs=6e-3)


def test_independent_center():
    xy = _gauss_pair(0.0, 200_000, 7)
    c = dm.empirical_copula(xy[:, 0], xy[:, 1], m=100)
    assert c(0.5, 0.5) == pytest.approx(0.25, abs=4e-3)
    p = dm.dependence_coefficients(xy[:, 0], xy[:, 1], p_list=())
    assert abs(p.rho_b) < 0.02


def test_coefficients_bounds_and_dict():
    xy = _student_pair(4, -0.3, 2000, 8)
    p = dm.dependence_coefficients(xy[:, 0], xy[:, 1], d_list=(0, 1, 2, 3))
    vals = [p.pearson, p.spearman, p.kendall, p.blomqvist, p.rho_b,
            *p.signed.values(), *p.absolute.values()]
    assert all(-1 <= v <= 1 for v in vals)
    assert all(np.all((t >= 0) & (t <= 1)) for t in p.tail.values())
    json.dumps(p.as_dict())


def test_zero_variance_names_d():
    x = np.where(np.arange(40) % 2, 1.0, -1.0)
    y = np.random.default_rng(9).standard_normal(40)
    with pytest.raises(ValueError, match="absolute d=1"):
        dm.dependence_coefficients(x, y, d_list=(1,), p_list=())


@pytest.mark.parametrize("p_list", [(0.5,), (1.0,), (0.3, 0.9)])
def test_tail_levels_checked(p_list):
    x = np.random.default_rng(10).standard_normal((2, 100))
    with pytest.raises(ValueError):
        dm.dependence_coefficients(x[0], x[1], p_list=p_list)


@pytest.mark.slow
def test_tau_and_beta_invariant_across_elliptical():
    g = _gauss_pair(0.4, 400_000, 11)
    s = _student_pair(5, 0.4, 400_000, 12)
    pg = dm.dependence_coefficients(g[:, 0], g[:, 1], p_list=())
    ps = dm.dependence_coefficients(s[:, 0], s[:, 1], p_list=())
    assert pg.kendall == pytest.approx(ps.kendall, abs=6e-3)
    assert pg.blomqvist == pytest.approx(ps.blomqvist, abs=1e-2)


# --------------------------------------------------------- tail dependence

def test_tail_product():
    assert dm.tail_dependence(dm.product_copula(100), 0.9) == pytest.approx(0.1)
    u = np.array([0.6, 0.75, 0.9])
    assert_allclose(dm.tail_dependence(lambda a, b: a * b, u), 1 - u)


@pytest.mark.parametrize("q", ["UU", "LL"])
def test_tail_comonotone(q):
    u = np.array([0.55, 0.8, 0.97])
    assert_allclose(dm.tail_dependence(np.minimum, u, q), 1.0)


def test_tail_quadrant_errors():
    with pytest.raises(ValueError):
        dm.tail_dependence(np.minimum, 0.9, "XY")
    with pytest.raises(ValueError):
        dm.tail_dependence(np.minimum, 1.0)


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_tail_symmetric_in_margins(seed):
    xy = _student_pair(3, 0.5, 500, seed)
    a = dm.empirical_copula(xy[:, 0], xy[:, 1], m=50)
    b = dm.empirical_copula(xy[:, 1], xy[:, 0], m=50)
    p = np.array([0.6, 0.8, 0.9])
    assert_allclose(dm.tail_dependence(a, p), dm.tail_dependence(b, p), atol=1e-12)
    assert_allclose(dm.tail_dependence(a, p, "UL"), dm.tail_dependence(b, p, "LU"), atol=1e-12)


@pytest.mark.slow
def test_tail_student_matches_exact():
    n = 2 * 10**6
    xy = _student_pair(5, 0.3, n, 13)
    c = dm.empirical_copula(xy[:, 0], xy[:, 1], m=200)
    est = dm.tail_dependence(c, 0.95)
    exact = el.student_tail_exact(0.95, 5, 0.3)
    se = np.sqrt(exact * (1 - exact) / (n * 0.05))
    assert abs(est - exact) < 4 * se
    k1 = np.sqrt(6 * 0.7 / 1.3)
    assert el.student_tail_dependence(5, 0.3).tau_star == pytest.approx(
        2 - 2 * stats.t(6).cdf(k1), abs=1e-12)


# ------------------------------------------------------ Gaussian reference

def test_bvn_special_values():
    assert dm.bvn_cdf(0, 0, 0.5) == pytest.approx(0.25 + np.arcsin(0.5) / (2 * np.pi), abs=1e-13)
    assert dm.bvn_cdf(0, 0, 0.95) == pytest.approx(0.25 + np.arcsin(0.95) / (2 * np.pi),
                                                    abs=1e-12)
    assert dm.bvn_cdf(1.0, -0.5, 0.0) == pytest.approx(special.ndtr(1) * special.ndtr(-0.5))


@pytest.mark.parametrize("h,k,rho", [(0.3, -1.2, 0.6), (-2.0, 1.5, -0.4), (1.1, 0.7, 0.97)])
def test_bvn_against_scipy(h, k, rho):
    ref = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]]).cdf([h, k])
    assert dm.bvn_cdf(h, k, rho) == pytest.approx(ref, abs=1e-6)


def test_gaussian_reference_zero():
    rho = 0.45
    cop = lambda u, v: dm.gaussian_copula(u, v, rho)
    _, dd, da = dm.copula_vs_gaussian(cop, rho)
    assert np.max(np.abs(dd)) < 1e-10 and np.max(np.abs(da)) < 1e-10


@pytest.mark.slow
def test_student_departure_shape():
    n = 2 * 10**6
    xy = _student_pair(5, 0.0, n, 14)
    c = dm.empirical_copula(xy[:, 0], xy[:, 1], m=100)
    u, dd, _ = dm.copula_vs_gaussian(c, 0.0, u=np.array([0.05, 0.1, 0.5, 0.9, 0.95]))
    assert np.all(dd[[0, 1, 3, 4]] > 0)
    assert abs(dd[2]) < 4 * np.sqrt(0.25 * 0.75 / n) / 0.25


@pytest.mark.slow
def test_student_departure_tends_to_tail():
    n = 2 * 10**6
    nu, rho, p = 5, 0.3, 0.99
    xy = _student_pair(nu, rho, n, 15)
    c = dm.empirical_copula(xy[:, 0], xy[:, 1], m=200)
    _, dd, _ = dm.copula_vs_gaussian(c, rho, u=np.array([p]))
    tau_g = dm.tail_dependence(lambda a, b: dm.gaussian_copula(a, b, rho), p)
    expect = (el.student_tail_exact(p, nu, rho) - tau_g) / p
    assert dd[0] == pytest.approx(expect, abs=4 * np.sqrt(0.1 / (n * 0.01)))
    # the exact Student curve then tends to tau*
    far = el.student_tail_exact(1 - 1e-9, nu, rho)
    assert far == pytest.approx(el.student_tail_dependence(nu, rho).tau_star, abs=1e-3)


# ---------------------------------------------------- conditional events

def test_event_probs_product():
    q = 0.8
    pp, mm, mp, pm = dm.conditional_event_probs(lambda u, v: u * v, 1 - q, 1 - q)
    assert_allclose([pp, mm, mp, pm], [1 - q] * 4, atol=1e-12)


@pytest.mark.parametrize("rho", [-0.5, 0.1, 0.6])
def test_event_probs_gaussian_half(rho):
    cop = lambda u, v: dm.gaussian_copula(u, v, rho)
    pp, mm, mp, pm = dm.conditional_event_probs(cop, 0.5, 0.5)
    assert pp == pytest.approx(0.5 + np.arcsin(rho) / np.pi, abs=1e-12)
    assert mm == pytest.approx(pp, abs=1e-12)
    assert pm == pytest.approx(1 - pp, abs=1e-12)


def test_event_probs_comonotone():
    pp, mm, mp, pm = dm.conditional_event_probs(np.minimum, 0.1, 0.1)
    assert pp == pytest.approx(1.0) and mm == pytest.approx(1.0)
    assert pm == pytest.approx(0.0, abs=1e-15) and mp == pytest.approx(0.0, abs=1e-15)


def _ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = z[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + np.sqrt(1 - rho * rho) * z[i]
    return x


def test_conditional_shortfall_gaussian():
    x = _ar1(0.5, 400_000, 16)
    out = dm.conditional_expected_shortfall(x, 0.5)
    ref = np.sqrt(2 / np.pi) * 0.5
    assert dm.gaussian_conditional_mean(0.5, 0.5)[0] == pytest.approx(ref, rel=1e-12)
    se = np.sqrt((1 - 0.25 * 2 / np.pi) / 200_000)
    assert out["mean_plus"] == pytest.approx(ref, abs=4 * se)
    assert out["mean_minus"] == pytest.approx(-ref, abs=4 * se)


def test_conditional_shortfall_iid_zero():
    x = np.random.default_rng(17).standard_normal(200_000)
    out = dm.conditional_expected_shortfall(x, 0.9)
    assert abs(out["mean_plus"]) < 0.015 and abs(out["mean_minus"]) < 0.015


def test_gaussian_conditional_mean_q90():
    up, dn = dm.gaussian_conditional_mean(0.5, 0.9)
    v = 0.5 * stats.norm.pdf(1.2815515655446004) / 0.1
    assert up == pytest.approx(v, rel=1e-12) and dn == pytest.approx(-v, rel=1e-12)


def test_conditional_shortfall_empty():
    with pytest.raises(ValueError, match="count"):
        dm.conditional_expected_shortfall(np.ones(100), 0.9)
