import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from artifact import depmeasure as dm
from artifact import elliptical as el
from artifact.elliptical import EllipticalSpec

FAMILIES = [
    EllipticalSpec("gaussian", 0.4),
    EllipticalSpec("student", 0.4, nu=5),
    EllipticalSpec("lognormal", 0.4, s=0.4),
]


def test_spec_validation():
    with pytest.raises(ValueError):
        EllipticalSpec("cauchy", 0.1)
    with pytest.raises(ValueError):
        EllipticalSpec("gaussian", 1.0)
    with pytest.raises(ValueError):
        EllipticalSpec("student", 0.1)
    with pytest.raises(ValueError):
        EllipticalSpec("lognormal", 0.1, s=-1)
    with pytest.raises(ValueError):
        EllipticalSpec("lognormal", 0.1, s=0.3, c=1.5)


# ----------------------------------------------------------------- moments

def test_fd_student_d2():
    assert el.fd_moment(EllipticalSpec("student", 0.0, nu=6), 2) == pytest.approx(2.0)


def test_fd_lognormal():
    assert el.fd_moment(EllipticalSpec("lognormal", 0.0, s=0.5), 1) == pytest.approx(
        1.2840254166877414, rel=1e-14)
    assert el.fd_moment(EllipticalSpec("lognormal", 0.0, s=0.5, c=0.5), 1, c=0.5) == \
        pytest.approx(np.exp(0.125))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_fd_gaussian(d):
    assert el.fd_moment(EllipticalSpec("gaussian", 0.2), d) == 1.0
    assert el.fd_moment(EllipticalSpec("student", 0.2, nu=2e6), d) == 1.0


def test_fd_student_d1_against_sampling():
    nu = 7.0
    spec = EllipticalSpec("student", 0.0, nu=nu)
    rng = np.random.default_rng(0)
    sig = np.sqrt(nu / rng.chisquare(nu, 4 * 10**6))
    assert el.fd_moment(spec, 1) == pytest.approx(np.mean(sig**2) / np.mean(sig) ** 2,
                                                  rel=5e-3)


@pytest.mark.parametrize("nu,d", [(2.0, 1), (4.0, 2), (3.5, 2)])
def test_fd_divergence(nu, d):
    with pytest.raises(ValueError):
        el.fd_moment(EllipticalSpec("student", 0.0, nu=nu), d)


# ------------------------------------------------------------- predictions

def test_predicted_gaussian():
    p = el.predicted_coefficients(EllipticalSpec("gaussian", 0.5))
    assert p["rho2"] == pytest.approx(0.25)
    assert p["pearson"] == pytest.approx(0.5)
    assert p["kendall"] == pytest.approx(1 / 3)
    assert el.predicted_coefficients(EllipticalSpec("gaussian", 0.0))["rho_abs1"] == \
        pytest.approx(0.0, abs=1e-15)


def test_predicted_student_rho2():
    p = el.predicted_coefficients(EllipticalSpec("student", 0.0, nu=5))
    assert p["rho2"] == pytest.approx(0.25)


def test_predicted_student_low_nu_has_nan_rho2():
    p = el.predicted_coefficients(EllipticalSpec("student", 0.3, nu=3.5))
    assert np.isnan(p["rho2"]) and np.isfinite(p["pearson"])


@given(st.floats(-0.99, 0.99))
@settings(max_examples=50, deadline=None)
def test_blomqvist_kendall_family_invariant(r):
    vals = [el.predicted_coefficients(EllipticalSpec(s.family, r, nu=s.nu, s=s.s))
            for s in FAMILIES]
    for v in vals:
        assert v["blomqvist"] == v["kendall"] == vals[0]["kendall"]
        assert v["rho_b"] == r


@pytest.mark.slow
@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family)
def test_predictions_against_samples(spec):
    xy = el.sample_elliptical(spec, 10**6, seed=1)
    got = dm.dependence_coefficients(xy[:, 0], xy[:, 1], d_list=(1,), p_list=())
    pred = el.predicted_coefficients(spec)
    assert got.kendall == pytest.approx(pred["kendall"], abs=4e-3)
    assert got.blomqvist == pytest.approx(pred["blomqvist"], abs=5e-3)
    assert got.rho_b == pytest.approx(spec.r, abs=6e-3)
    assert got.absolute[1] == pytest.approx(pred["rho_abs1"], abs=1e-2)


# ---------------------------------------------------------- tail expansion

def test_tail_beta_nu4():
    e = el.student_tail_dependence(4, 0.3)
    assert e.beta == pytest.approx(0.263, abs=5e-4)
    assert e.beta * 0.01**0.5 == pytest.approx(0.026, abs=5e-4)
    assert e.exponent == 0.5


def test_tail_gaussian_limit():
    assert el.student_tail_dependence(1e7, 0.3).tau_star == 0.0
    taus = [el.student_tail_dependence(nu, 0.3).tau_star for nu in (5, 20, 100, 1000)]
    assert np.all(np.diff(taus) < 0) and taus[-1] < 1e-10


def test_tail_comonotone_limit():
    assert el.student_tail_dependence(5, 1 - 1e-12).tau_star == pytest.approx(1.0, abs=1e-5)


def test_tail_degenerate_flag():
    e = el.student_tail_dependence(5, -1.0)
    assert e.degenerate and e.tau_star == 0.0


@given(st.floats(0.5, 30), st.floats(-0.95, 0.95))
@settings(max_examples=50, deadline=None)
def test_tail_star_range(nu, rho):
    e = el.student_tail_dependence(nu, rho)
    assert 0 < e.tau_star < 1
    assert e.beta > 0


@pytest.mark.parametrize("nu", [3.0, 4.0, 5.0, 7.5])
def test_exact_limit_matches_expansion(nu):
    e = el.student_tail_dependence(nu, 0.3)
    p = 1 - 1e-12
    assert el.student_tail_exact(p, nu, 0.3) == pytest.approx(e(p), abs=1e-6)


def test_exact_against_sampling():
    nu, rho, p, n = 5, 0.3, 0.95, 10**7
    xy = el.sample_elliptical(EllipticalSpec("student", rho, nu=nu), n, seed=2)
    x = stats.t(nu).ppf(p)
    est = np.mean((xy[:, 0] > x) & (xy[:, 1] > x)) / (1 - p)
    exact = el.student_tail_exact(p, nu, rho)
    se = np.sqrt(exact * (1 - exact) / (n * (1 - p)))
    assert abs(est - exact) < 3 * se


def test_exact_positive_at_zero_rho():
    assert el.student_tail_exact(0.99, 5, 0.0) > 0.01


def test_exact_residual_order():
    nu, rho = 5, 0.3
    e = el.student_tail_dependence(nu, rho)
    r = [el.student_tail_exact(1 - q, nu, rho) - e(1 - q) for q in (0.02, 0.01)]
    assert r[0] / r[1] == pytest.approx(2 ** (4 / nu), rel=0.2)


def test_exact_range_check():
    with pytest.raises(ValueError):
        el.student_tail_exact(1.0, 5, 0.3)


# --------------------------------------------------------------- dictionary

def test_dictionary_values():
    assert el.lognormal_student_dictionary(0.4) == pytest.approx(5.125)
    assert el.lognormal_student_dictionary(0.5) == pytest.approx(4.0)
    assert el.lognormal_student_dictionary(1e6) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        el.lognormal_student_dictionary(0.0)


# ---------------------------------------------------------------- sampling

def test_sample_gaussian_uncorrelated():
    n = 100_000
    xy = el.sample_elliptical(EllipticalSpec("gaussian", 0.0), n, seed=3)
    assert abs(np.corrcoef(xy.T)[0, 1]) < 3 / np.sqrt(n)


def test_sample_deterministic():
    spec = EllipticalSpec("lognormal", 0.2, s=0.3, c=0.5)
    assert_allclose(el.sample_elliptical(spec, 50, seed=4), el.sample_elliptical(spec, 50, seed=4),
                    rtol=0, atol=0)


def test_sample_student_kurtosis():
    spec = EllipticalSpec("student", 0.0, nu=10)
    xy = el.sample_elliptical(spec, 2 * 10**6, seed=5)
    excess = stats.kurtosis(xy[:, 0])
    assert excess == pytest.approx(3 * (el.fd_moment(spec, 2) - 1), abs=0.15)


def test_sample_student_marginal():
    xy = el.sample_elliptical(EllipticalSpec("student", 0.5, nu=5), 50_000, seed=6)
    assert stats.kstest(xy[:, 1], stats.t(5).cdf).pvalue > 0.01


def test_sample_lognormal_blomqvist():
    xy = el.sample_elliptical(EllipticalSpec("lognormal", 0.5, s=0.4), 10**6, seed=7)
    p = dm.dependence_coefficients(xy[:, 0], xy[:, 1], p_list=())
    assert p.blomqvist == pytest.approx(1 / 3, abs=5e-3)
