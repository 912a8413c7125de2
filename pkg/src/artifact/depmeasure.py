"""Empirical copulas and bivariate dependence coefficients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "EmpiricalCopula",
    "DependenceProfile",
    "pseudo_ranks",
    "empirical_copula",
    "self_copula",
    "product_copula",
    "bvn_cdf",
    "gaussian_copula",
    "dependence_coefficients",
    "tail_dependence",
    "copula_vs_gaussian",
    "conditional_event_probs",
    "conditional_expected_shortfall",
    "gaussian_conditional_mean",
]


def pseudo_ranks(x) -> np.ndarray:
    """Ranks ``1..N`` with ties broken by input order (stable sort)."""
    x = np.asarray(x, dtype=float)
    r = np.empty(x.size, dtype=np.int64)
    r[np.argsort(x, kind="stable")] = np.arange(1, x.size + 1)
    return r


@dataclass(frozen=True)
class EmpiricalCopula:
    """Bivariate copula on the nodes ``(i/M, j/M)``, ``i, j = 1..M``.

    Off-node values are bilinear, with ``C = 0`` on the lower and left edges.
    """

    values: np.ndarray
    sample_size: int
    bias_corrected: bool = False
    lag: int | None = None

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        m = self.grid_size
        return np.arange(1, m + 1) / m

    def _padded(self) -> np.ndarray:
        m = self.grid_size
        c = np.zeros((m + 1, m + 1))
        c[1:, 1:] = self.values
        return c

    def __call__(self, u, v):
        """Bilinear evaluation at ``(u, v)`` in ``[0, 1]^2``."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
            raise ValueError("copula arguments must lie in [0, 1]")
        m = self.grid_size
        c = self._padded()
        x, y = u * m, v * m
        i = np.clip(np.floor(x).astype(int), 0, m - 1)
        j = np.clip(np.floor(y).astype(int), 0, m - 1)
        fx, fy = x - i, y - j
        out = ((1 - fx) * (1 - fy) * c[i, j] + fx * (1 - fy) * c[i + 1, j]
               + (1 - fx) * fy * c[i, j + 1] + fx * fy * c[i + 1, j + 1])
        return out if out.ndim else float(out)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def anti_diagonal(self) -> np.ndarray:
        """``C(u, 1-u)`` on ``u = i/M``, ``i = 1..M-1``."""
        u = self.nodes[:-1]
        return self(u, 1 - u)


def product_copula(m: int) -> EmpiricalCopula:
    u = np.arange(1, m + 1) / m
    return EmpiricalCopula(np.outer(u, u), sample_size=0)


def empirical_copula(x, y, m: int | None = None, correct_bias: bool = True,
                     lag: int | None = None) -> EmpiricalCopula:
    """Rank-based copula estimator on an ``m x m`` grid.

    Parameters
    ----------
    x, y : array_like
        Paired samples of equal length ``N``.
    m : int, optional
        Grid size; default ``min(100, N // 10)`` (at least 2).
    correct_bias : bool
        Multiply node ``(u, v)`` by ``(Nu/floor(Nu)) (Nv/floor(Nv))``, which
        removes the finite-sample bias of the rank estimator for the product
        copula exactly.

    Returns
    -------
    EmpiricalCopula
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    n = x.size
    if m is None:
        m = max(2, min(100, n // 10))
    if m < 2:
        raise ValueError("grid size must be >= 2")
    if m > n:
        raise ValueError(f"grid size {m} exceeds sample size {n}")
    rx, ry = pseudo_ranks(x), pseudo_ranks(y)
    cut = np.floor(n * np.arange(1, m + 1) / m + 1e-9).astype(np.int64)  # floor(N u)
    # bin index of each rank: first node whose cut covers it
    bx = np.searchsorted(cut, rx, side="left")
    by = np.searchsorted(cut, ry, side="left")
    h = np.zeros((m, m))
    np.add.at(h, (bx, by), 1.0)
    c = h.cumsum(0).cumsum(1) / n
    if correct_bias:
        nu = n * np.arange(1, m + 1) / m
        f = np.where(cut > 0, nu / np.maximum(cut, 1), 0.0)
        c = c * np.outer(f, f)
        c[-1, -1] = 1.0
    return EmpiricalCopula(c, n, correct_bias, lag)


def self_copula(series, lag: int, m: int | None = None, correct_bias: bool = True
                ) -> EmpiricalCopula:
    """Copula of ``(X_t, X_{t+lag})``."""
    x = np.asarray(series, dtype=float).ravel()
    if not 1 <= lag < x.size:
        raise ValueError("lag out of range")
    return empirical_copula(x[:-lag], x[lag:], m, correct_bias, lag=lag)


# --------------------------------------------------------------------------
# Gaussian reference
# --------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def bvn_cdf(h, k, rho: float):
    """Standard bivariate normal CDF ``P(X <= h, Y <= k)``.

    Uses ``Phi(h)Phi(k) + (1/2pi) int_0^{asin rho} exp(-(h^2+k^2-2hk sin t)/(2cos^2 t)) dt``
    with 64-point Gauss-Legendre for ``|rho| <= 0.9`` and adaptive quadrature
    beyond.
    """
    if not -1 < rho < 1:
        raise ValueError("|rho| must be < 1")
    h, k = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float))
    base = special.ndtr(h) * special.ndtr(k)
    a = np.arcsin(rho)

    def integrand(t, hh, kk):
        ct = np.cos(t)
        return np.exp(-(hh * hh + kk * kk - 2 * hh * kk * np.sin(t)) / (2 * ct * ct))

    if abs(rho) <= 0.9:
        t = 0.5 * a * (_GL_X + 1.0)
        vals = integrand(t[:, None], h.ravel()[None, :], k.ravel()[None, :])
        corr = 0.5 * a * (_GL_W @ vals) / (2 * np.pi)
        out = base + corr.reshape(h.shape)
    else:
        flat = [integrate.quad(integrand, 0.0, a, args=(hh, kk), epsabs=1e-13, limit=200)[0]
                for hh, kk in zip(h.ravel(), k.ravel())]
        out = base + np.reshape(flat, h.shape) / (2 * np.pi)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def gaussian_copula(u, v, rho: float):
    """Gaussian copula ``Phi_2(Phi^-1(u), Phi^-1(v); rho)``."""
    return bvn_cdf(special.ndtri(u), special.ndtri(v), rho)


# --------------------------------------------------------------------------
# Coefficients
# --------------------------------------------------------------------------

@dataclass
class DependenceProfile:
    """Sample dependence coefficients of a pair.

    ``tail`` maps quadrant labels to arrays over ``p_levels``.
    """

    pearson: float
    spearman: float
    kendall: float
    blomqvist: float
    rho_b: float
    signed: dict = field(default_factory=dict)
    absolute: dict = field(default_factory=dict)
    p_levels: np.ndarray | None = None
    tail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("pearson", "spearman", "kendall", "blomqvist",
                                             "rho_b")}
        out["signed"] = {str(d): v for d, v in self.signed.items()}
        out["absolute"] = {str(d): v for d, v in self.absolute.items()}
        if self.p_levels is not None:
            out["p_levels"] = list(map(float, self.p_levels))
            out["tail"] = {q: list(map(float, v)) for q, v in self.tail.items()}
        return out


def _corr(a: np.ndarray, b: np.ndarray, label: str) -> float:
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise ValueError(f"zero variance of transformed series ({label})")
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def _medial(x, y) -> float:
    """Empirical ``C(1/2, 1/2)`` from ranks."""
    n = x.size
    half = n // 2
    return float(np.mean((pseudo_ranks(x) <= half) & (pseudo_ranks(y) <= half))) * (
        (n / 2) / half) ** 2


def dependence_coefficients(x, y, d_list=(0, 1, 2), p_list=(0.9, 0.95, 0.99),
                            m: int | None = None) -> DependenceProfile:
    """Sample dependence coefficients of ``(x, y)``.

    Notes
    -----
    ``rho_b`` is ``sin(pi/2 beta)`` written through the medial copula value,
    i.e. ``-cos(2 pi C(1/2, 1/2))``; the sign makes it equal to ``r`` for
    elliptical pairs.  Blomqvist's beta is the Pearson correlation of the
    signs about the medians.  Kendall's tau uses the O(N log N) algorithm of
    :func:`scipy.stats.kendalltau` (tau-b, which equals tau-a without ties).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 10:
        raise ValueError("need paired samples of length >= 10")
    pear = _corr(x, y, "pearson")
    rx, ry = pseudo_ranks(x), pseudo_ranks(y)
    spear = _corr(rx.astype(float), ry.astype(float), "spearman")
    kend = float(stats.kendalltau(x, y).statistic)
    c_half = _medial(x, y)
    blom = float(np.clip(4 * c_half - 1, -1, 1))
    rho_b = float(-np.cos(2 * np.pi * c_half))
    xc, yc = x - np.median(x), y - np.median(y)
    signed = {}
    absolute = {}
    for d in d_list:
        if d == 0:  # signs about the medians
            signed[d] = _corr(np.sign(xc), np.sign(yc), "signed d=0")
        else:
            signed[d] = _corr(np.sign(x) * np.abs(x) ** d, np.sign(y) * np.abs(y) ** d,
                              f"signed d={d}")
        if d > 0:
            absolute[d] = _corr(np.abs(x) ** d, np.abs(y) ** d, f"absolute d={d}")
    p_arr = np.asarray(p_list, dtype=float)
    tail = {}
    if p_arr.size:
        if np.any((p_arr <= 0.5) | (p_arr >= 1)):
            raise ValueError("tail levels must lie in (1/2, 1)")
        cop = empirical_copula(x, y, m=m or max(2, min(200, x.size // 10)))
        for q in ("UU", "LL", "UL", "LU"):
            tail[q] = np.clip(tail_dependence(cop, p_arr, q), 0.0, 1.0)
    return DependenceProfile(pear, spear, kend, blom, rho_b, signed, absolute,
                             p_arr if p_arr.size else None, tail)


def tail_dependence(cop, p, quadrant: str = "UU"):
    """Tail dependence at level ``p`` from a copula.

    Parameters
    ----------
    cop : EmpiricalCopula or callable
        Any ``C(u, v)``.
    p : float or array_like
        Level in ``(0, 1)``.
    quadrant : {'UU', 'LL', 'UL', 'LU'}
    """
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p must lie in (0, 1)")
    q = 1 - p
    if quadrant == "UU":
        out = (1 - 2 * p + cop(p, p)) / q
    elif quadrant == "LL":
        out = cop(q, q) / q
    elif quadrant == "UL":
        out = (q - cop(p, q)) / q
    elif quadrant == "LU":
        out = (q - cop(q, p)) / q
    else:
        raise ValueError(f"unknown quadrant {quadrant!r}")
    return out if np.ndim(out) else float(out)


def copula_vs_gaussian(cop, rho: float, u=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized diagonal and anti-diagonal departures from the Gaussian copula.

    Returns
    -------
    u, delta_d, delta_a : ndarray
        ``(C(u,u) - C_G(u,u)) / (u(1-u))`` and the same along ``C(u, 1-u)``.
    """
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    if u is None:
        m = cop.grid_size if isinstance(cop, EmpiricalCopula) else 100
        u = np.arange(1, m) / m
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("endpoints excluded")
    w = u * (1 - u)
    dd = (cop(u, u) - gaussian_copula(u, u, rho)) / w
    da = (cop(u, 1 - u) - gaussian_copula(u, 1 - u, rho)) / w
    return u, np.asarray(dd), np.asarray(da)


def conditional_event_probs(cop, p_minus: float, p_plus: float
                            ) -> tuple[float, float, float, float]:
    """Persistence probabilities ``(p++, p--, p-+, p+-)`` from a lagged copula.

    ``p_plus`` is the probability of a positive event (``X > X+``) and
    ``p_minus`` of a negative one (``X < X-``).
    """
    for t in (p_minus, p_plus):
        if not 0 < t < 1:
            raise ValueError("thresholds must lie in (0, 1)")
    pp = (2 * p_plus - 1 + cop(1 - p_plus, 1 - p_plus)) / p_plus
    mm = cop(p_minus, p_minus) / p_minus
    mp = (p_minus - cop(p_minus, 1 - p_plus)) / p_minus
    pm = (p_minus - cop(1 - p_plus, p_minus)) / p_plus
    return float(pp), float(mm), float(mp), float(pm)


def gaussian_conditional_mean(rho: float, q: float) -> tuple[float, float]:
    """Gaussian reference ``<X>_+- = +- rho phi(Phi^-1(q)) / (1 - q)``.

    Thresholds are symmetric: ``X+ = Phi^-1(q)``, ``X- = -X+``, so
    ``p+ = p- = 1 - q``.
    """
    x = special.ndtri(q)
    v = rho * np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi) / (1 - q)
    return float(v), float(-v)


def conditional_expected_shortfall(x, q: float, lag: int = 1) -> dict:
    """Mean and median of ``X_t`` given ``X_{t-lag}`` beyond its quantiles.

    Conditioning uses ``X_{t-lag} > Q(q)`` for the ``+`` side and
    ``X_{t-lag} < Q(1-q)`` for the ``-`` side.
    """
    x = np.asarray(x, dtype=float).ravel()
    past, now = x[:-lag], x[lag:]
    hi, lo = np.quantile(x, q), np.quantile(x, 1 - q)
    up, dn = past > hi, past < lo
    for name, sel in (("+", up), ("-", dn)):
        if sel.sum() < 1:
            raise ValueError(f"empty conditioning set for side {name} (count 0)")
    return {"mean_plus": float(now[up].mean()), "mean_minus": float(now[dn].mean()),
            "median_plus": float(np.median(now[up])), "median_minus": float(np.median(now[dn])),
            "count_plus": int(up.sum()), "count_minus": int(dn.sum())}
