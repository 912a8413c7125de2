"""Closed-form dependence predictions for (pseudo-)elliptical ensembles.

A pair is written ``X_i = sigma_i * eps_i`` with Gaussian ``eps`` of
correlation ``r`` and a random scale.  Gaussian, Student and log-normal
scales are supported; for the log-normal family the two log-scales may have
correlation ``c`` (pseudo-elliptical case, ``c = 1`` is elliptical).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "EllipticalSpec",
    "StudentTailExpansion",
    "fd_moment",
    "predicted_coefficients",
    "student_tail_dependence",
    "student_tail_exact",
    "lognormal_student_dictionary",
    "sample_elliptical",
]

NU_GAUSS = 1e6


@dataclass(frozen=True)
class EllipticalSpec:
    """Family descriptor.

    Parameters
    ----------
    family : {'gaussian', 'student', 'lognormal'}
    r : float
        Correlation of the Gaussian residuals.
    nu : float, optional
        Student degrees of freedom.
    s : float, optional
        Log-normal vol-of-vol.
    c : float
        Log-volatility correlation (log-normal family only).
    """

    family: str
    r: float
    nu: float | None = None
    s: float | None = None
    c: float = 1.0

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        if fam not in ("gaussian", "student", "lognormal"):
            raise ValueError(f"unknown family {self.family!r}")
        if not -1 < self.r < 1:
            raise ValueError("r must lie in (-1, 1)")
        if fam == "student" and (self.nu is None or self.nu <= 0):
            raise ValueError("student family needs nu > 0")
        if fam == "lognormal" and (self.s is None or self.s < 0):
            raise ValueError("lognormal family needs s >= 0")
        if not -1 <= self.c <= 1:
            raise ValueError("c must lie in [-1, 1]")

    @property
    def is_gaussian(self) -> bool:
        return self.family == "gaussian" or (self.family == "student" and self.nu >= NU_GAUSS)


def fd_moment(spec: EllipticalSpec, d: int, c: float | None = None) -> float:
    """Scale moment ratio ``f^(d) = E[s_i^d s_j^d] / (E[s^d])^2``.

    With ``c`` omitted the diagonal value (``c = 1``) is returned, which is
    ``E[s^2d] / E[s^d]^2``.

    Raises
    ------
    ValueError
        Student moment of order ``2d`` diverges (``nu <= 2d``), or ``d`` not
        in ``{1, 2}`` for the Student family.
    """
    if spec.is_gaussian:
        return 1.0
    if spec.family == "lognormal":
        cc = 1.0 if c is None else c
        return float(np.exp(d * d * spec.s**2 * cc))
    nu = spec.nu
    if nu <= 2 * d:
        raise ValueError(f"f^({d}) diverges for nu={nu} <= {2 * d}")
    if d == 1:
        return float(2.0 / (nu - 2) * np.exp(special.gammaln(nu / 2)
                                             - special.gammaln((nu - 1) / 2)) ** 2)
    if d == 2:
        return float((nu - 2) / (nu - 4))
    raise ValueError("student f^(d) implemented for d in {1, 2}")


def _d_of_r(r: float) -> float:
    return float(np.sqrt(1 - r * r) + r * np.arcsin(r))


def predicted_coefficients(spec: EllipticalSpec) -> dict:
    """Model values of the dependence coefficients.

    Returns
    -------
    dict
        ``pearson``, ``rho2`` (correlation of signed squares),
        ``rho_abs1`` (correlation of absolute values), ``blomqvist``,
        ``kendall``, ``rho_b``.
    """
    r, c = spec.r, spec.c
    f1c, f11 = fd_moment(spec, 1, c), fd_moment(spec, 1)
    out = {
        "pearson": r * f1c / f11,
        "rho_abs1": (f1c * _d_of_r(r) - 1) / (np.pi / 2 * f11 - 1),
        "blomqvist": 2 / np.pi * np.arcsin(r),
        "kendall": 2 / np.pi * np.arcsin(r),
        "rho_b": r,
    }
    try:
        f2c, f21 = fd_moment(spec, 2, c), fd_moment(spec, 2)
        out["rho2"] = (f2c * (1 + 2 * r * r) - 1) / (3 * f21 - 1)
    except ValueError:
        out["rho2"] = float("nan")
    return {k: float(v) for k, v in out.items()}


@dataclass(frozen=True)
class StudentTailExpansion:
    tau_star: float
    beta: float
    exponent: float
    k1: float
    l_nu: float
    degenerate: bool = False

    def __call__(self, p):
        """First-order value ``tau* + beta (1-p)^(2/nu)``."""
        return self.tau_star + self.beta * (1 - np.asarray(p, dtype=float)) ** self.exponent


def _k1(nu: float, rho: float) -> float:
    return float(np.sqrt((nu + 1) * (1 - rho)) / np.sqrt(1 + rho))


def student_tail_dependence(nu: float, rho: float) -> StudentTailExpansion:
    """Asymptotic upper tail dependence of a bivariate Student pair and its
    leading ``(1-p)^(2/nu)`` correction.

    ``nu`` above 1e6 is treated as Gaussian (``tau* = beta = 0``).
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if rho <= -1:
        return StudentTailExpansion(0.0, 0.0, 2.0 / nu, np.inf, np.nan, degenerate=True)
    if not rho < 1:
        raise ValueError("rho must be < 1")
    if nu >= NU_GAUSS:
        return StudentTailExpansion(0.0, 0.0, 0.0, np.inf, np.nan)
    k1 = _k1(nu, rho)
    t1 = stats.t(nu + 1)
    tau = float(2 * t1.sf(k1))
    log_l = (-0.5 * np.log(np.pi) + nu / 2 * np.log(nu) + special.gammaln((nu + 1) / 2)
             - special.gammaln(nu / 2))
    e = 2.0 / nu
    beta = nu ** (e + 1) / (e + 1) * k1 * t1.pdf(k1) * np.exp(-e * log_l)
    l_nu = float(np.exp(log_l)) if log_l < 700 else np.inf
    return StudentTailExpansion(tau, float(beta), e, k1, l_nu)


def student_tail_exact(p: float, nu: float, rho: float) -> float:
    """Exact ``tau_UU(p)`` of a bivariate Student pair.

    ``tau(p) = 2 - (1/(1-p)) int_p^1 2 T_{nu+1}(k(p')) dp'`` with
    ``k(p) = k(1) / sqrt(1 + nu / x_p^2)`` and ``x_p = T_nu^{-1}(p)``.
    The integral is computed in ``x`` space, ``dp = t_nu(x) dx``, so that the
    endpoint ``p = 1`` maps to ``x = inf``.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    k1 = _k1(nu, rho)
    tn, t1 = stats.t(nu), stats.t(nu + 1)
    x0 = tn.ppf(p)
    eps = tn.sf(x0)

    def f(x):
        kp = k1 * abs(x) / np.sqrt(x * x + nu)
        kp = kp if x >= 0 else -kp
        return 2 * t1.sf(kp) * tn.pdf(x)

    # 2 - (1/eps) int 2 T dp = (1/eps) int 2 (1 - T) dp
    val, err = integrate.quad(f, x0, np.inf, epsabs=0.0, epsrel=1e-10, limit=500)
    if not np.isfinite(val) or err > 1e-8 * eps:
        raise ArithmeticError("tail-dependence quadrature did not converge")
    return float(val / eps)


def lognormal_student_dictionary(s: float) -> float:
    """Student degrees of freedom mimicking a log-normal vol-of-vol ``s``."""
    if s <= 0:
        raise ValueError("s must be positive")
    return 2.0 + 0.5 / (s * s)


def sample_elliptical(spec: EllipticalSpec, t: int, seed=None) -> np.ndarray:
    """Draw ``t`` pairs ``X = sigma * eps``.

    Returns
    -------
    ndarray, shape (t, 2)
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((t, 2))
    r = spec.r
    eps = np.column_stack([z[:, 0], r * z[:, 0] + np.sqrt(1 - r * r) * z[:, 1]])
    if spec.is_gaussian:
        return eps
    if spec.family == "student":
        # sigma^2 = nu / chi2_nu: inverse-Gamma scale, Student marginals
        sig = np.sqrt(spec.nu / (2.0 * rng.gamma(spec.nu / 2.0, size=t)))
        return eps * sig[:, None]
    w = rng.standard_normal((t, 2))
    c = spec.c
    om = np.column_stack([w[:, 0], c * w[:, 0] + np.sqrt(1 - c * c) * w[:, 1]])
    return eps * np.exp(spec.s * om - spec.s**2)
