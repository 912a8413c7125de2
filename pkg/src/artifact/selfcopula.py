"""Log-normal stochastic-volatility self-copula model.

Returns are ``X = xi * exp(s w - s^2)`` with Gaussian ``xi`` and ``w``.  To
first order in the small dependence parameters the lagged copula reads

    C_t(u, v) - uv = alpha_t A(u) A(v) - beta_t R(u) A(v) + rho_t R(u) R(v)

with ``A(u) = E_w[phi'(F^-1(u) / sigma(w))]`` and
``R(u) = E_w[phi(F^-1(u) / sigma(w))]``.  All ``w`` integrals use 64-node
Gauss-Hermite quadrature.  The same ``s`` enters the marginal ``F`` and the
basis functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal, special

from .gof_dep import DependenceKernel, build_kernel, independence_kernel_matrix, interior_grid

__all__ = [
    "lognormal_cdf",
    "lognormal_pdf",
    "lognormal_ppf",
    "basis_functions",
    "copula_expansion",
    "LagFit",
    "fit_lag_coefficients",
    "MultifractalFit",
    "multifractal_fit",
    "ar1_amplitude",
    "fgn_autocovariance",
    "fgn_amplitude",
    "model_kernel",
    "model_dependence_kernel",
    "simulate_lognormal_vol",
    "simulate_fgn_vol",
    "volvol_estimate",
]

_PI2 = np.sqrt(2 * np.pi)


@lru_cache(maxsize=8)
def _gh(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / _PI2


def _sigma(s: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gh(n)
    return np.exp(s * x - s * s), w


def lognormal_cdf(x, s: float, nodes: int = 64):
    """``F(x) = int phi(w) Phi(x / exp(s w - s^2)) dw``."""
    if s < 0:
        raise ValueError("s must be >= 0")
    x = np.asarray(x, dtype=float)
    sig, w = _sigma(s, nodes)
    out = special.ndtr(x[..., None] / sig) @ w
    return out if out.ndim else float(out)


def lognormal_pdf(x, s: float, nodes: int = 64):
    x = np.asarray(x, dtype=float)
    sig, w = _sigma(s, nodes)
    z = x[..., None] / sig
    out = (np.exp(-0.5 * z * z) / (_PI2 * sig)) @ w
    return out if out.ndim else float(out)


def lognormal_ppf(u, s: float, nodes: int = 64, tol: float = 1e-10):
    """Inverse of :func:`lognormal_cdf` by bisection followed by Newton steps."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    flat = u.ravel()
    hi = np.full(flat.shape, 1.0)
    while True:
        grow = lognormal_cdf(hi, s, nodes) < np.maximum(flat, 1 - flat)
        if not grow.any():
            break
        hi[grow] *= 2.0
    lo = -hi.copy()
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        below = lognormal_cdf(mid, s, nodes) < flat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(8):
        step = (lognormal_cdf(x, s, nodes) - flat) / lognormal_pdf(x, s, nodes)
        x = x - step
        if np.max(np.abs(step)) < tol:
            break
    out = x.reshape(u.shape)
    return out if out.ndim else float(out)


def basis_functions(u, s: float, nodes: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Basis ``(A(u), R(u))`` of the first-order copula expansion.

    ``A`` is odd about ``u = 1/2`` and ``R`` even.
    """
    u = np.asarray(u, dtype=float)
    x = lognormal_ppf(u, s, nodes)
    sig, w = _sigma(s, nodes)
    z = np.asarray(x)[..., None] / sig
    phi = np.exp(-0.5 * z * z) / _PI2
    return (-z * phi) @ w, phi @ w


def copula_expansion(u, v, alpha: float, beta: float, rho: float, s: float = 1.0,
                     basis=None):
    """``C(u, v) - uv`` to first order in ``(alpha, beta, rho)``.

    Parameters
    ----------
    basis : tuple of callables, optional
        ``(A, R)``; defaults to :func:`basis_functions` at ``s``.
    """
    if max(abs(alpha), abs(beta), abs(rho)) > 0.3:
        warnings.warn("expansion parameters above 0.3: first order may be inaccurate",
                      stacklevel=2)
    if basis is None:
        au, ru = basis_functions(u, s)
        av, rv = basis_functions(v, s)
    else:
        a, r = basis
        au, ru, av, rv = a(u), r(u), a(v), r(v)
    return alpha * au * av - beta * ru * av + rho * ru * rv


@dataclass(frozen=True)
class LagFit:
    lag: int | None
    alpha: float
    beta: float
    rho: float
    residual: float


def fit_lag_coefficients(cop, s: float = 1.0, full_surface: bool = False,
                         lag: int | None = None) -> LagFit:
    """Least-squares ``(alpha, beta, rho)`` from the copula diagonal and
    anti-diagonal.

    Parameters
    ----------
    cop : EmpiricalCopula or callable
        Any ``C(u, v)``.  Grid copulas are evaluated on their interior nodes.
    s : float
        Vol-of-vol used for the basis.
    full_surface : bool
        Fit on the full interior grid instead of the two diagonals.
    """
    m = getattr(cop, "grid_size", 100)
    u = np.arange(1, m) / m
    if u.size < 49:
        raise ValueError("need at least 50 diagonal nodes")
    a, r = basis_functions(u, s)
    if full_surface:
        uu, vv = np.meshgrid(u, u, indexing="ij")
        y = (cop(uu, vv) - uu * vv).ravel()
        x = np.column_stack([np.outer(a, a).ravel(), -np.outer(r, a).ravel(),
                             np.outer(r, r).ravel()])
    else:
        y = np.concatenate([cop(u, u) - u * u, cop(u, 1 - u) - u * (1 - u)])
        a_rev, r_rev = a[::-1], r[::-1]  # A(1-u), R(1-u) on the symmetric grid
        x = np.vstack([np.column_stack([a * a, -r * a, r * r]),
                       np.column_stack([a * a_rev, -r * a_rev, r * r_rev])])
    if np.linalg.matrix_rank(x) < 3:
        raise ValueError("singular design")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    res = float(np.linalg.norm(x @ coef - y))
    return LagFit(lag if lag is not None else getattr(cop, "lag", None), *map(float, coef), res)


@dataclass(frozen=True)
class MultifractalFit:
    sigma2: float
    horizon: float
    residual: float
    extrapolated: bool
    degenerate: bool = False


def multifractal_fit(lags, alpha) -> MultifractalFit:
    """Fit ``alpha_t = -Sigma^2 ln(t / T)`` by least squares in ``(Sigma^2, ln T)``.

    When the fitted slope is not negative the horizon is infinite and the
    result is flagged ``degenerate``; ``sigma2 * ln T`` is then meaningless
    and ``horizon = inf`` is returned with ``sigma2`` clipped at 0.
    """
    t = np.asarray(lags, dtype=float)
    a = np.asarray(alpha, dtype=float)
    keep = a > 0
    if keep.sum() < 5:
        if not keep.any():
            raise ValueError("all alpha_t <= 0: fit degenerate")
        raise ValueError("need at least 5 lags with positive alpha_t")
    t, a = t[keep], a[keep]
    x = np.column_stack([-np.log(t), np.ones_like(t)])
    (s2, b), *_ = np.linalg.lstsq(x, a, rcond=None)
    res = float(np.linalg.norm(x @ [s2, b] - a))
    if s2 <= 1e-12 * max(1.0, abs(b)):
        return MultifractalFit(max(float(s2), 0.0), np.inf, res, True, degenerate=True)
    horizon = float(np.exp(b / s2))
    return MultifractalFit(float(s2), horizon, res, horizon <= t.max())


# --------------------------------------------------------------------------
# Model kernels
# --------------------------------------------------------------------------

def ar1_amplitude(g: float, sigma2: float) -> float:
    """``2 sum_t alpha_t = 2 g Sigma^2 / ((1-g)^2 (1+g))`` for the AR(1) log-vol."""
    if not 0 <= g < 1:
        raise ValueError("need 0 <= g < 1")
    return 2 * g * sigma2 / ((1 - g) ** 2 * (1 + g))


def fgn_autocovariance(t, nu: float, sigma2: float):
    """Log-vol autocovariance of fractional Gaussian noise with Hurst ``(2-nu)/2``."""
    t = np.abs(np.asarray(t, dtype=float))
    e = 2.0 - nu
    return 0.5 * sigma2 * (np.abs(t + 1) ** e - 2 * t**e + np.abs(t - 1) ** e)


def fgn_amplitude(nu: float, sigma2: float, n: int) -> float:
    """``2 sum_{t=1}^{N} (1 - t/N) alpha_t``."""
    if not 0 < nu < 1:
        raise ValueError("need 0 < nu < 1")
    t = np.arange(1, n + 1)
    return float(2 * np.sum((1 - t / n) * fgn_autocovariance(t, nu, sigma2)))


def model_kernel(kind: str, m: int = 200, **params) -> np.ndarray:
    """``Psi`` on the interior grid for the AR(1) or fGn log-vol model.

    Parameters
    ----------
    kind : {'ar1', 'fgn'}
        ``ar1`` takes ``g`` and ``sigma2``; ``fgn`` takes ``nu``, ``sigma2``
        and ``n``.

    Returns
    -------
    ndarray, shape (m, m)
        ``amp * A(u) A(v) / I(u, v)`` so that ``H = I + amp * A (x) A``.
        The basis uses the stationary log-vol standard deviation.
    """
    kind = kind.lower()
    if kind == "ar1":
        g, s2 = params["g"], params["sigma2"]
        amp = ar1_amplitude(g, s2)
        s = np.sqrt(s2 / (1 - g * g))
    elif kind == "fgn":
        nu, s2, n = params["nu"], params["sigma2"], params["n"]
        amp = fgn_amplitude(nu, s2, n)
        s = np.sqrt(s2)
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    u = interior_grid(m)
    a, _ = basis_functions(u, s)
    return amp * np.outer(a, a) / independence_kernel_matrix(u)


def model_dependence_kernel(kind: str, m: int = 200, **params) -> DependenceKernel:
    """:func:`model_kernel` followed by :func:`artifact.gof_dep.build_kernel`."""
    return build_kernel(model_kernel(kind, m, **params))


# --------------------------------------------------------------------------
# Simulation and calibration
# --------------------------------------------------------------------------

def simulate_lognormal_vol(g: float, sigma2: float, t: int, seed=None,
                           return_logvol: bool = False):
    """Simulate ``X_n = xi_n exp(w_n - Var w)`` with ``w_{n+1} = g w_n + Sigma eta_n``.

    ``w_0`` is drawn from the stationary law ``N(0, Sigma^2 / (1 - g^2))``.
    """
    if not 0 <= g < 1:
        raise ValueError("need 0 <= g < 1")
    rng = np.random.default_rng(seed)
    var = sigma2 / (1 - g * g)
    w0 = rng.standard_normal() * np.sqrt(var)
    eta = rng.standard_normal(t) * np.sqrt(sigma2)
    w = np.empty(t)
    w[0] = w0
    if t > 1:
        w[1:], _ = signal.lfilter([1.0], [1.0, -g], eta[:-1], zi=[g * w0])
    x = rng.standard_normal(t) * np.exp(w - var)
    return (x, w) if return_logvol else x


def simulate_fgn_vol(nu: float, sigma2: float, t: int, seed=None, return_logvol: bool = False):
    """Log-normal volatility driven by fractional Gaussian noise.

    The log-vol path is drawn exactly by circulant embedding of the fGn
    autocovariance.
    """
    if not 0 < nu < 1:
        raise ValueError("need 0 < nu < 1")
    rng = np.random.default_rng(seed)
    gam = fgn_autocovariance(np.arange(t + 1), nu, sigma2)
    row = np.concatenate([gam, gam[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-8 * lam.max():
        raise ArithmeticError("circulant embedding is not positive")
    lam = np.clip(lam, 0, None)
    k = row.size
    z = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    w = np.fft.fft(np.sqrt(lam / k) * z).real[:t]
    x = rng.standard_normal(t) * np.exp(w - sigma2)
    return (x, w) if return_logvol else x


def volvol_estimate(x) -> float:
    """Vol-of-vol ``s^2 = ln((2/pi) <x^2> / <|x|>^2)`` floored at zero."""
    x = np.asarray(x, dtype=float)
    m1 = np.mean(np.abs(x))
    if m1 == 0:
        raise ValueError("zero mean absolute value")
    return float(max(0.0, np.log(2 / np.pi * np.mean(x * x) / m1**2)))
