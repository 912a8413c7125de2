import json
from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, stats

from artifact import depmeasure as dm
from artifact import gof_dep as gd
from artifact import selfcopula as sc


# ---------------------------------------------------------------- marginal

def test_cdf_s0_is_normal():
    x = np.linspace(-4, 4, 17)
    assert_allclose(sc.lognormal_cdf(x, 0.0), stats.norm.cdf(x), atol=1e-14)


@pytest.mark.parametrize("s", [0.0, 0.3, 0.7, 1.0, 1.5])
def test_cdf_median_zero(s):
    assert sc.lognormal_cdf(0.0, s) == pytest.approx(0.5, abs=1e-14)


def test_cdf_against_sampling():
    rng = np.random.default_rng(0)
    s, n = 0.5, 10**7
    x = rng.standard_normal(n) * np.exp(s * rng.standard_normal(n) - s * s)
    ind = x <= 1.0
    se = ind.std() / np.sqrt(n)
    assert abs(sc.lognormal_cdf(1.0, s) - ind.mean()) < 3 * se


@pytest.mark.parametrize("s", [0.2, 0.5, 1.0])
def test_ppf_inverts_cdf(s):
    u = np.linspace(0.001, 0.999, 101)
    assert_allclose(sc.lognormal_cdf(sc.lognormal_ppf(u, s), s), u, atol=1e-10)


def test_pdf_is_derivative():
    x = np.linspace(-3, 3, 13)
    h = 1e-5
    num = (sc.lognormal_cdf(x + h, 0.6) - sc.lognormal_cdf(x - h, 0.6)) / (2 * h)
    assert_allclose(sc.lognormal_pdf(x, 0.6), num, rtol=1e-7)


def test_ppf_rejects_boundary():
    with pytest.raises(ValueError):
        sc.lognormal_ppf([0.0, 0.5], 1.0)


def test_negative_s_rejected():
    with pytest.raises(ValueError):
        sc.lognormal_cdf(0.0, -0.1)


# ------------------------------------------------------------------- basis

@pytest.fixture(scope="module")
def fine_basis():
    u = np.linspace(0, 1, 4001)[1:-1]
    a, r = sc.basis_functions(u, 1.0)
    return u, a, r


def test_basis_medial_zero():
    a, _ = sc.basis_functions(np.array([0.5]), 1.0)
    assert abs(a[0]) < 1e-12


def test_basis_traces(fine_basis):
    u, a, r = fine_basis
    assert integrate.simpson(a * a, x=u) == pytest.approx(0.01176, abs=5e-5)
    assert integrate.simpson(r * r, x=u) == pytest.approx(0.07806, abs=5e-5)


@pytest.mark.parametrize("m", [10, 51, 200, 1000])
def test_basis_parity_on_refinements(m):
    u = np.arange(1, m) / m
    a, r = sc.basis_functions(u, 1.0)
    assert_allclose(a, -a[::-1], atol=1e-9)
    assert_allclose(r, r[::-1], atol=1e-9)


@given(st.floats(0.01, 0.99), st.floats(0.05, 1.5))
@settings(max_examples=40, deadline=None)
def test_basis_parity_property(u, s):
    a, r = sc.basis_functions(np.array([u, 1 - u]), s)
    assert a[0] == pytest.approx(-a[1], abs=1e-9)
    assert r[0] == pytest.approx(r[1], abs=1e-9)


@pytest.mark.parametrize("s", [0.2, 0.5])
def test_node_doubling_stable(s):
    u = np.linspace(0.001, 0.999, 200)
    a, r = sc.basis_functions(u, s)
    a2, r2 = sc.basis_functions(u, s, nodes=128)
    assert np.max(np.abs(a - a2)) < 1e-9
    assert np.max(np.abs(r - r2)) < 1e-9


def test_node_doubling_unit_volvol():
    # 64-node quadrature error of F is ~1e-7 at s = 1
    u = np.linspace(0.001, 0.999, 200)
    a, r = sc.basis_functions(u, 1.0)
    a2, r2 = sc.basis_functions(u, 1.0, nodes=128)
    assert np.max(np.abs(a - a2)) < 1e-5
    assert np.max(np.abs(r - r2)) < 1e-5


# --------------------------------------------------------------- expansion

def test_expansion_zero():
    u = np.linspace(0.05, 0.95, 7)
    assert_allclose(sc.copula_expansion(u, u[::-1], 0, 0, 0), 0.0)


def test_expansion_asymmetry_from_beta():
    u, v = np.array([0.2]), np.array([0.7])
    assert sc.copula_expansion(u, v, 0.0, 0.05, 0.0) != pytest.approx(
        sc.copula_expansion(v, u, 0.0, 0.05, 0.0), abs=1e-6)
    assert_allclose(sc.copula_expansion(u, v, 0.05, 0.0, 0.02),
                    sc.copula_expansion(v, u, 0.05, 0.0, 0.02))


@given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
@settings(max_examples=30, deadline=None)
def test_expansion_medial_point(alpha, beta, rho):
    _, r = sc.basis_functions(np.array([0.5]), 1.0)
    val = sc.copula_expansion(np.array([0.5]), np.array([0.5]), alpha, beta, rho)
    assert val[0] == pytest.approx(rho * r[0] ** 2, abs=1e-12)


def test_expansion_warns_large():
    with pytest.warns(UserWarning):
        sc.copula_expansion(np.array([0.3]), np.array([0.3]), 0.5, 0, 0)


# --------------------------------------------------------------------- fit

def test_fit_recovers_exact_expansion():
    a, b, r = 0.05, -0.02, -0.01
    cop = lambda u, v: u * v + sc.copula_expansion(u, v, a, b, r)
    fit = sc.fit_lag_coefficients(cop)
    assert_allclose([fit.alpha, fit.beta, fit.rho], [a, b, r], atol=1e-6)
    assert fit.residual < 1e-10


def test_fit_full_surface_recovers():
    cop = lambda u, v: u * v + sc.copula_expansion(u, v, 0.03, 0.01, 0.02)
    fit = sc.fit_lag_coefficients(cop, full_surface=True)
    assert_allclose([fit.alpha, fit.beta, fit.rho], [0.03, 0.01, 0.02], atol=1e-6)


def test_fit_product_copula_zero():
    fit = sc.fit_lag_coefficients(dm.product_copula(100))
    assert_allclose([fit.alpha, fit.beta, fit.rho], 0.0, atol=1e-12)


def test_fit_small_grid_rejected():
    with pytest.raises(ValueError):
        sc.fit_lag_coefficients(dm.product_copula(20))


def test_fit_json_roundtrip():
    fit = sc.LagFit(1, 0.1, 0.0, -0.01, 1e-3)
    d = json.loads(json.dumps(asdict(fit)))
    assert set(d) == {"lag", "alpha", "beta", "rho", "residual"}


@pytest.mark.slow
def test_fit_mc_logvol_pair():
    rng = np.random.default_rng(3)
    n, a = 10**7, 0.05
    w1 = rng.standard_normal(n)
    w2 = a * w1 + np.sqrt(1 - a * a) * rng.standard_normal(n)
    x = rng.standard_normal(n) * np.exp(w1 - 1)
    y = rng.standard_normal(n) * np.exp(w2 - 1)
    fit = sc.fit_lag_coefficients(dm.empirical_copula(x, y, m=100), s=1.0)
    assert abs(fit.alpha / a - 1) < 0.1


@pytest.mark.slow
def test_fit_ar1_lag_one():
    g, s2 = 0.88, 0.05
    x = sc.simulate_lognormal_vol(g, s2, 10**6, seed=1)
    s = np.sqrt(s2 / (1 - g * g))
    fit = sc.fit_lag_coefficients(dm.self_copula(x, 1, m=100), s=s)
    target = s2 * g / (1 - g * g)
    assert abs(fit.alpha / target - 1) < 0.1


# ------------------------------------------------------------ multifractal

def test_multifractal_noiseless():
    lags = 2.0 ** np.arange(9)
    f = sc.multifractal_fit(lags, -0.046 * np.log(lags / 1467))
    assert f.sigma2 == pytest.approx(0.046, rel=1e-10)
    assert f.horizon == pytest.approx(1467, rel=1e-8)
    assert not f.extrapolated and not f.degenerate


def test_multifractal_constant_degenerate():
    f = sc.multifractal_fit(2.0 ** np.arange(9), np.full(9, 0.1))
    assert f.degenerate and np.isinf(f.horizon)


def test_multifractal_noisy():
    rng = np.random.default_rng(0)
    lags = 2.0 ** np.arange(9)
    a = -0.046 * np.log(lags / 1467)
    est = np.array([sc.multifractal_fit(lags, a * (1 + 0.1 * rng.standard_normal(9))).sigma2
                    for _ in range(100)])
    assert np.mean(np.abs(est / 0.046 - 1) < 0.2) > 0.9


def test_multifractal_errors():
    with pytest.raises(ValueError):
        sc.multifractal_fit(np.arange(1, 6), -np.ones(5))
    with pytest.raises(ValueError):
        sc.multifractal_fit(np.arange(1, 6), [0.1, 0.1, -1, -1, -1])


def test_multifractal_extrapolated_flag():
    # flat positive tail pulls the fitted horizon below the largest lag
    f = sc.multifractal_fit([1, 2, 4, 8, 16, 32, 64], [0.2, 0.16, 0.12, 0.06, 0.01, 0.01, 0.01])
    assert f.extrapolated and f.horizon < 64


# ----------------------------------------------------------------- kernels

def test_ar1_amplitude_value():
    assert sc.ar1_amplitude(0.88, 0.05) == pytest.approx(3.250591, abs=1e-6)


def test_ar1_kernel_vanishes():
    assert np.max(np.abs(sc.model_kernel("ar1", m=50, g=0.0, sigma2=0.05))) == 0.0
    k = sc.model_dependence_kernel("ar1", m=50, g=1e-9, sigma2=0.05)
    assert_allclose(k.H, gd.independence_kernel_matrix(k.u), atol=1e-9)


def test_fgn_asymptotics():
    nu, t = 0.4, 1000.0
    ratio = sc.fgn_autocovariance(t, nu, 1.0) / (0.5 * (2 - 3 * nu + nu * nu) * t**-nu)
    assert abs(ratio - 1) < 0.01


def test_fgn_amplitude_positive():
    amp = sc.fgn_amplitude(0.4, 1.0, 1500)
    assert np.isfinite(amp) and amp > 0
    assert amp == pytest.approx(79.47, abs=0.01)


@pytest.mark.parametrize("kind,params", [
    ("ar1", {"g": 1.0, "sigma2": 0.05}),
    ("ar1", {"g": -0.1, "sigma2": 0.05}),
    ("fgn", {"nu": 1.2, "sigma2": 1.0, "n": 100}),
    ("garch", {}),
])
def test_kernel_bad_params(kind, params):
    with pytest.raises((ValueError, KeyError)):
        sc.model_kernel(kind, m=20, **params)


def test_kernel_trace_increment():
    k = sc.model_dependence_kernel("ar1", m=200, g=0.88, sigma2=0.05)
    s = np.sqrt(0.05 / (1 - 0.88**2))
    u = gd.interior_grid(200)
    a, _ = sc.basis_functions(u, s)
    expected = np.sum(u * (1 - u) + sc.ar1_amplitude(0.88, 0.05) * a * a) / 201
    assert k.trace == pytest.approx(expected, rel=1e-12)
    assert k.trace > 1 / 6


@pytest.mark.slow
def test_weak_ar1_laws_converge_to_classical():
    k = sc.model_dependence_kernel("ar1", m=100, g=1e-6, sigma2=0.05)
    law = gd.cm_law(k, method="mc", trials=10**6, seed=1)
    sel = (law.ks_x > 0.2) & (law.ks_x < 2.9)
    kx, kc = gd.classical_ks_table(law.ks_x[sel])
    assert np.max(np.abs(np.interp(kx, law.ks_x, law.ks_cdf) - kc)) < 2e-3
    li = gd.cm_law(gd.build_kernel(None, m=100))
    lk = gd.cm_law(k)
    assert np.max(np.abs(np.interp(li.cm_x, lk.cm_x, lk.cm_cdf) - li.cm_cdf)) < 2e-3


# -------------------------------------------------------------- simulation

def test_simulate_zero_sigma_is_iid_gaussian():
    x = sc.simulate_lognormal_vol(0.5, 0.0, 20000, seed=1)
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_simulate_ar1_autocorrelation():
    g, t = 0.88, 10**6
    _, w = sc.simulate_lognormal_vol(g, 0.05, t, seed=2, return_logvol=True)
    r1 = np.corrcoef(w[:-1], w[1:])[0, 1]
    se = np.sqrt((1 + g * g) / (1 - g * g) / t) * (1 - g * g)
    assert abs(r1 - g) < 3 * max(se, 1 / np.sqrt(t))


def test_simulate_kurtosis():
    x = sc.simulate_lognormal_vol(0.88, 0.05, 10**6, seed=3)
    assert stats.kurtosis(x, fisher=False) > 3


def test_simulate_deterministic():
    assert_allclose(sc.simulate_lognormal_vol(0.5, 0.1, 100, seed=9),
                    sc.simulate_lognormal_vol(0.5, 0.1, 100, seed=9), atol=0)


def test_fgn_simulator_covariance():
    _, w = sc.simulate_fgn_vol(0.4, 1.0, 2**16, seed=4, return_logvol=True)
    assert np.var(w) == pytest.approx(1.0, rel=0.1)


# ----------------------------------------------------------------- vol-vol

def test_volvol_gaussian_zero():
    x = np.random.default_rng(5).standard_normal(10**6)
    assert sc.volvol_estimate(x) < 5e-3


@given(st.floats(1e-3, 1e3))
@settings(max_examples=20, deadline=None)
def test_volvol_scale_invariant(c):
    x = np.random.default_rng(6).standard_normal(1000)
    assert sc.volvol_estimate(c * x) == pytest.approx(sc.volvol_estimate(x), abs=1e-10)


def test_volvol_lognormal():
    g, s2 = 0.88, 0.05
    v = s2 / (1 - g * g)
    x = sc.simulate_lognormal_vol(g, s2, 10**6, seed=7)
    assert abs(sc.volvol_estimate(x) / v - 1) < 0.1


def test_volvol_zero_input():
    with pytest.raises(ValueError):
        sc.volvol_estimate(np.zeros(10))
