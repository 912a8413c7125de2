"""Kolmogorov-Smirnov laws for i.i.d. samples.

Two laws are provided:

* the classical Kolmogorov law of ``sqrt(N) sup|F_N - F|``;
* the law of the variance-weighted distance
  ``sqrt(N) sup |F_N - F| / sqrt(F (1 - F))`` restricted to
  ``u in [1/(N+1), N/(N+1)]``, which reads ``S(N; k) = A(k) N**(-theta0(k))``.

The weighted law maps the weighted Brownian bridge onto an Ornstein-Uhlenbeck
particle confined between absorbing walls at ``+-k``.  ``theta0(k)`` is the
lowest even eigenvalue of that problem and ``A(k)`` the squared overlap of the
fundamental mode with the stationary Gaussian initial condition.
"""

from __future__ import annotations

import hashlib
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "ks_law",
    "ks_law_dual",
    "ks_statistic",
    "ks_test",
    "y_plus",
    "y_minus",
    "theta0",
    "theta1",
    "fundamental_mode",
    "a_tilde",
    "WeightedKsLaw",
    "weighted_ks_law",
    "weighted_ks_survival",
    "weighted_ks_critical",
    "weighted_ks_statistic",
    "weighted_ks_test",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)
K_MAX = 8.0  # theta0 underflows double precision beyond this


# --------------------------------------------------------------------------
# Classical KS law
# --------------------------------------------------------------------------

def ks_law(k):
    """Limit CDF of the classical Kolmogorov-Smirnov statistic.

    Parameters
    ----------
    k : float or array_like
        Threshold(s) for ``sqrt(N) sup|F_N - F|``.

    Returns
    -------
    ndarray or float
        ``P = 1 - 2 sum_{n>=1} (-1)^(n-1) exp(-2 n^2 k^2)``, summed until the
        terms drop below 1e-16.

    Notes
    -----
    The alternating series converges poorly for ``k < 0.3``; there
    :func:`ks_law_dual` is used instead.
    """
    k = np.asarray(k, dtype=float)
    out = np.empty_like(k)
    small = k < 0.3
    if np.any(small):
        out[small] = ks_law_dual(k[small])
    kk = k[~small]
    if kk.size:
        total = np.zeros_like(kk)
        n = 1
        while True:
            term = np.exp(-2.0 * n * n * kk * kk)
            total += (-1) ** (n - 1) * term
            if np.all(term < 1e-16):
                break
            n += 1
        out[~small] = 1.0 - 2.0 * total
    return out if out.ndim else float(out)


def ks_law_dual(k):
    """Theta-dual representation of :func:`ks_law`.

    ``P = sqrt(2 pi)/k * sum_{n>=1} exp(-(2n-1)^2 pi^2 / (8 k^2))``, which is
    the survival probability of a Brownian bridge constrained in ``[-k, k]``.
    """
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        total = np.zeros_like(k)
        n = 1
        while True:
            term = np.exp(-((2 * n - 1) ** 2) * np.pi**2 / (8.0 * k * k))
            total += term
            if np.all(term <= 1e-17 * np.maximum(total, 1e-300)) or n > 200:
                break
            n += 1
        out = np.where(k > 0, _SQRT2PI / np.where(k > 0, k, 1.0) * total, 0.0)
    return out if out.ndim else float(out)


def _sorted_pit(sample, null_cdf: Callable) -> np.ndarray:
    x = np.asarray(sample, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    if x.size < 10:
        raise ValueError(f"sample size {x.size} < 10")
    return np.sort(np.asarray(null_cdf(x), dtype=float))


def ks_statistic(sample, null_cdf: Callable) -> float:
    """Return ``sqrt(N) sup_u |F_N(F^-1(u)) - u|`` evaluated at the jumps."""
    u = _sorted_pit(sample, null_cdf)
    n = u.size
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - u), np.max(u - (i - 1) / n))
    return float(np.sqrt(n) * d)


def ks_test(sample, null_cdf: Callable) -> tuple[float, float]:
    """Classical one-sample KS test.

    Returns
    -------
    statistic : float
    p_value : float
        ``1 - ks_law(statistic)``.
    """
    stat = ks_statistic(sample, null_cdf)
    return stat, float(1.0 - ks_law(stat))


# --------------------------------------------------------------------------
# Weighted KS: eigenproblem of the confined OU process
# --------------------------------------------------------------------------

def y_plus(theta, z):
    """Even solution ``exp(-z^2/4) 1F1(-theta/2, 1/2, z^2/2)``."""
    z = np.asarray(z, dtype=float)
    return np.exp(-z * z / 4.0) * special.hyp1f1(-0.5 * theta, 0.5, 0.5 * z * z)


def y_minus(theta, z):
    """Odd solution ``z exp(-z^2/4) 1F1((1-theta)/2, 3/2, z^2/2)``."""
    z = np.asarray(z, dtype=float)
    return z * np.exp(-z * z / 4.0) * special.hyp1f1(0.5 * (1.0 - theta), 1.5, 0.5 * z * z)


def _first_root(f, start: float, stop: float, factor: float = 1.2) -> float:
    # geometric scan; consecutive eigenvalues are separated by more than this factor
    a, fa = start, f(start)
    while a < stop:
        b = a * factor
        fb = f(b)
        if fa == 0.0:
            return a
        if np.sign(fa) != np.sign(fb):
            return optimize.brentq(f, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                   maxiter=500)
        a, fa = b, fb
    raise RuntimeError(f"no root bracketed in [{start:g}, {stop:g}]")


def _theta0_guess(k: float) -> float:
    big = np.sqrt(2.0 / np.pi) * k * np.exp(-k * k / 2.0)
    small = np.pi**2 / (4.0 * k * k) - 0.5
    return max(big, small)


def theta0(k: float) -> float:
    """Smallest ``theta > 0`` with ``y_plus(theta; k) = 0``.

    Parameters
    ----------
    k : float
        Wall position, ``0 < k <= 8``.

    Notes
    -----
    The scan starts well below the larger of the two asymptotic formulas
    (``sqrt(2/pi) k exp(-k^2/2)`` and ``pi^2/(4k^2) - 1/2``), where
    ``y_plus`` is positive, and walks upward geometrically until the first
    sign change, which is then polished with Brent's method.
    """
    k = float(k)
    if not 0.0 < k <= K_MAX:
        raise ValueError(f"k={k} outside (0, {K_MAX}]")
    start = 1e-3 * _theta0_guess(k)
    f = lambda t: float(y_plus(t, k))
    if f(start) <= 0:
        raise RuntimeError(f"y_plus not positive at scan start for k={k}")
    return _first_root(f, start, 1e3 * _theta0_guess(k) + 10.0)


def theta1(k: float, th0: float | None = None) -> float:
    """First odd eigenvalue: smallest root of ``y_minus(theta; k)`` above ``theta0``."""
    k = float(k)
    th0 = theta0(k) if th0 is None else th0
    f = lambda t: float(y_minus(t, k))
    return _first_root(f, th0 * (1.0 + 1e-9), 1e4 * (th0 + 1.0))


def _norm2(th: float, k: float) -> float:
    return integrate.quad(lambda z: y_plus(th, z) ** 2, -k, k, epsabs=1e-13, epsrel=1e-12,
                          limit=200)[0]


def fundamental_mode(z, k: float, th0: float | None = None):
    """Normalized fundamental mode ``phi0(z; k) = y_plus / ||y_plus||`` on ``[-k, k]``."""
    th0 = theta0(k) if th0 is None else th0
    return y_plus(th0, z) / np.sqrt(_norm2(th0, k))


def a_tilde(k: float, th0: float | None = None) -> float:
    """Prefactor ``A(k) = sqrt(2 pi) * (int e^{z^2/4} phi0 f0 dz)^2``.

    ``f0`` is the standard normal density (the law of the starting point).
    """
    th0 = theta0(k) if th0 is None else th0
    norm = np.sqrt(_norm2(th0, k))
    # e^{z^2/4} y_plus f0 = 1F1(...) e^{-z^2/2}/sqrt(2 pi)
    g = lambda z: special.hyp1f1(-0.5 * th0, 0.5, 0.5 * z * z) * np.exp(-0.5 * z * z)
    a = integrate.quad(g, -k, k, epsabs=1e-12, epsrel=1e-12, limit=200)[0] / (_SQRT2PI * norm)
    return float(_SQRT2PI * a * a)


@dataclass(frozen=True)
class WeightedKsLaw:
    """Tabulated weighted-KS law.

    Attributes
    ----------
    k_grid : ndarray
        Increasing wall positions.
    theta0 : ndarray
        Lowest even eigenvalue at each node.
    a_tilde : ndarray
        Prefactor at each node.
    gap : ndarray
        ``theta1 - theta0``; the law is accurate once ``N >> exp(1/gap)``.
    """

    k_grid: np.ndarray
    theta0: np.ndarray
    a_tilde: np.ndarray
    gap: np.ndarray
    n_range: str = field(default="N >= 20")

    def survival(self, n: float, k):
        return weighted_ks_survival(n, k, self)


def _grid_key(k_grid: np.ndarray) -> str:
    h = hashlib.sha1(np.ascontiguousarray(k_grid, dtype=float).tobytes()).hexdigest()[:16]
    return f"wks_v1_{h}.npz"


def default_k_grid() -> np.ndarray:
    """Grid used when no grid is supplied: dense enough for 1e-6 interpolation."""
    return np.concatenate([np.linspace(0.05, 1.0, 40, endpoint=False),
                           np.linspace(1.0, 6.5, 221)])


def weighted_ks_law(k_grid=None, cache: bool | str | os.PathLike = False) -> WeightedKsLaw:
    """Tabulate ``theta0``, ``A`` and the spectral gap on ``k_grid``.

    Parameters
    ----------
    k_grid : array_like, optional
        Positive, increasing wall positions.  Defaults to
        :func:`default_k_grid`.
    cache : bool or path-like
        When truthy, tables are stored under a file name keyed by the grid
        hash, in the given directory or in ``$ARTIFACT_CACHE_DIR``.
    """
    k_grid = default_k_grid() if k_grid is None else np.asarray(k_grid, dtype=float)
    if np.any(k_grid <= 0) or np.any(np.diff(k_grid) <= 0):
        raise ValueError("k_grid must be positive and strictly increasing")
    path = None
    if cache:
        root = cache if not isinstance(cache, bool) else os.environ.get("ARTIFACT_CACHE_DIR")
        if root:
            path = Path(root) / _grid_key(k_grid)
            if path.exists():
                d = np.load(path)
                return WeightedKsLaw(d["k"], d["theta0"], d["a_tilde"], d["gap"])
    th = np.array([theta0(k) for k in k_grid])
    at = np.array([a_tilde(k, t) for k, t in zip(k_grid, th)])
    gap = np.array([theta1(k, t) - t for k, t in zip(k_grid, th)])
    law = WeightedKsLaw(k_grid, th, at, gap)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, k=k_grid, theta0=th, a_tilde=at, gap=gap)
    return law


def weighted_ks_survival(n: float, k, law: WeightedKsLaw | None = None):
    """``S(N; k) = A(k) N^(-theta0(k))`` clamped to ``[0, 1]``.

    With ``law=None`` the eigenproblem is solved exactly at ``k``; otherwise
    ``theta0`` is interpolated in log scale and ``A`` linearly.
    """
    if n < 10:
        raise ValueError("N must be >= 10")
    if n < 20:
        warnings.warn("N < 20: the single-mode law is unreliable", stacklevel=2)
    k = np.asarray(k, dtype=float)
    if law is None:
        flat = k.ravel()
        th = np.array([theta0(kk) for kk in flat]).reshape(k.shape)
        at = np.array([a_tilde(kk, t) for kk, t in zip(flat, th.ravel())]).reshape(k.shape)
    else:
        if np.any(k < law.k_grid[0]) or np.any(k > law.k_grid[-1]):
            raise ValueError("k outside the tabulated grid")
        th = np.exp(np.interp(k, law.k_grid, np.log(law.theta0)))
        at = np.interp(k, law.k_grid, law.a_tilde)
    s = np.clip(at * float(n) ** (-th), 0.0, 1.0)
    return s if s.ndim else float(s)


def weighted_ks_critical(n: float, level: float = 0.95, law: WeightedKsLaw | None = None,
                         asymptotic: bool = False) -> float:
    """Threshold ``k*`` with ``S(N; k*) = level``.

    Parameters
    ----------
    asymptotic : bool
        If True, use the large-``k`` shortcut ``A = 1`` and
        ``theta0 = sqrt(2/pi) k exp(-k^2/2)``.  This overestimates ``k*`` by
        about 0.02 for ``N`` between 1e3 and 1e6 compared with the exact law.
    """
    if asymptotic:
        target = -np.log(level) / np.log(n)
        f = lambda k: np.sqrt(2 / np.pi) * k * np.exp(-k * k / 2) - target
        return float(optimize.brentq(f, 1.0, K_MAX, xtol=1e-12))
    lo, hi = (0.3, 6.5) if law is None else (law.k_grid[0], law.k_grid[-1])
    f = lambda k: weighted_ks_survival(n, k, law) - level
    return float(optimize.brentq(f, lo, hi, xtol=1e-10))


def weighted_ks_statistic(sample, null_cdf: Callable) -> float:
    """Weighted distance ``sup_{u in [a, b]} sqrt(N) |F_N - u| / sqrt(u (1-u))``.

    ``a = 1/(N+1)``, ``b = N/(N+1)``.  The ratio is monotone in ``u`` between
    jumps of ``F_N``, so it suffices to inspect both one-sided limits at each
    jump inside ``[a, b]`` and the two end points.
    """
    u = _sorted_pit(sample, null_cdf)
    n = u.size
    a, b = 1.0 / (n + 1), n / (n + 1.0)
    i = np.arange(1, n + 1)
    inside = (u >= a) & (u <= b)
    ui = u[inside]
    w = np.sqrt(ui * (1 - ui))
    cand = [np.abs(i[inside] / n - ui) / w, np.abs((i[inside] - 1) / n - ui) / w]
    for e in (a, b):
        fe = np.searchsorted(u, e, side="right") / n
        cand.append(np.array([abs(fe - e) / np.sqrt(e * (1 - e))]))
        fl = np.searchsorted(u, e, side="left") / n
        cand.append(np.array([abs(fl - e) / np.sqrt(e * (1 - e))]))
    return float(np.sqrt(n) * np.max(np.concatenate(cand)))


def weighted_ks_test(sample, null_cdf: Callable, law: WeightedKsLaw | None = None
                     ) -> tuple[float, float]:
    """Weighted KS test; ``p = 1 - S(N; statistic)``.

    Statistics beyond the tabulated grid give ``p = 0`` (or ``1`` below it).
    """
    stat = weighted_ks_statistic(sample, null_cdf)
    n = np.asarray(sample).size
    if law is not None:
        k = float(np.clip(stat, law.k_grid[0], law.k_grid[-1]))
    else:
        k = float(np.clip(stat, 0.05, K_MAX))
    return stat, float(1.0 - weighted_ks_survival(n, k, law))
