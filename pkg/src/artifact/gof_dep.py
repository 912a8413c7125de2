"""Goodness-of-fit laws for identically distributed but dependent samples.

For a stationary weakly dependent sample the empirical process
``Y_N(u) = sqrt(N) (F_N(F^-1(u)) - u)`` converges to a centered Gaussian
process with covariance ``H(u, v) = I(u, v) (1 + Psi(u, v))`` where
``I = min(u, v) - uv`` is the Brownian-bridge kernel and ``Psi`` collects the
lagged pairwise copulas.  The Cramer-von Mises statistic is then a weighted
sum of chi-squares ``sum_j lambda_j z_j^2`` over the Mercer spectrum of
``H``, and the supremum of ``|Y|`` is dominated by the top mode when the
dependence is strong.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .gof_uni import ks_law, ks_statistic

__all__ = [
    "interior_grid",
    "independence_kernel_matrix",
    "DependenceKernel",
    "GofDepLaw",
    "psi_from_copulas",
    "build_kernel",
    "cm_statistic",
    "cm_law",
    "cm_sf_imhof",
    "ks_law_dep",
    "mc_limit_process",
    "gof_dep_test",
]

log = logging.getLogger(__name__)


def interior_grid(m: int) -> np.ndarray:
    """Nodes ``i/(m+1)``, ``i = 1..m``; the bridge is pinned at 0 and 1."""
    return np.arange(1, m + 1) / (m + 1.0)


def independence_kernel_matrix(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.minimum.outer(u, u) - np.outer(u, u)


@dataclass(frozen=True)
class DependenceKernel:
    """Discretized covariance kernel and its Mercer decomposition.

    Attributes
    ----------
    u : ndarray, shape (M,)
        Interior grid.
    psi : ndarray, shape (M, M)
    H : ndarray, shape (M, M)
    eigenvalues : ndarray
        Descending, non-negative.
    eigenvectors : ndarray, shape (M, M)
        Columns ``U_j`` with ``h * sum U_i U_j = delta_ij``, ``h = 1/(M+1)``.
    """

    u: np.ndarray
    psi: np.ndarray
    H: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lag_cutoff: int | None = None

    @property
    def grid_size(self) -> int:
        return self.u.size

    @property
    def weight(self) -> float:
        return 1.0 / (self.u.size + 1.0)

    @property
    def trace(self) -> float:
        """Quadrature trace ``int H(u, u) du``."""
        return float(self.weight * np.trace(self.H))


def psi_from_copulas(copulas: Sequence, n: int, m: int = 200, t_max: int | None = None
                     ) -> np.ndarray:
    """Assemble ``Psi(u, v) = sum_t (1 - t/N) (Delta_t(u, v) + Delta_t(v, u))``.

    Parameters
    ----------
    copulas : sequence
        ``copulas[t-1]`` is the lag-``t`` copula, either an
        :class:`~artifact.depmeasure.EmpiricalCopula`, any callable
        ``C(u, v)`` or an ``(m, m)`` array already sampled on the interior grid.
    n : int
        Sample length ``N``.
    m : int
        Interior grid size.
    t_max : int, optional
        Lag cutoff (default: all supplied lags, at most 512).
    """
    t_max = min(len(copulas), 512) if t_max is None else t_max
    if t_max >= n:
        raise ValueError("lag cutoff must be smaller than N")
    u = interior_grid(m)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    base = uu * vv
    ii = independence_kernel_matrix(u)
    psi = np.zeros((m, m))
    for t in range(1, t_max + 1):
        c = copulas[t - 1]
        if isinstance(c, np.ndarray):
            if c.shape != (m, m):
                raise ValueError(f"lag {t}: grid mismatch {c.shape} != {(m, m)}")
            vals = c
        else:
            vals = np.asarray(c(uu, vv))
        delta = (vals - base) / ii
        psi += (1 - t / n) * (delta + delta.T)
    return psi


def build_kernel(psi, m: int | None = None, lag_cutoff: int | None = None
                 ) -> DependenceKernel:
    """Form ``H = I (1 + Psi)`` and its weighted eigen-decomposition.

    Eigenvalues below ``-1e-10`` trigger a warning; all negative eigenvalues
    are clipped to zero.
    """
    psi = np.zeros((m, m)) if psi is None else np.asarray(psi, dtype=float)
    if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
        raise ValueError("psi must be square")
    m = psi.shape[0]
    if not np.all(np.isfinite(psi)):
        raise ValueError("psi must be finite")
    if np.max(np.abs(psi - psi.T)) > 1e-10 * max(1.0, np.max(np.abs(psi))):
        raise ValueError("psi is not symmetric")
    psi = 0.5 * (psi + psi.T)
    u = interior_grid(m)
    h = 1.0 / (m + 1.0)
    H = independence_kernel_matrix(u) * (1.0 + psi)
    lam, vec = np.linalg.eigh(H * h)
    lam, vec = lam[::-1], vec[:, ::-1]
    if lam[-1] < -1e-10:
        warnings.warn(f"kernel not positive semi-definite (min eigenvalue {lam[-1]:.3g}); "
                      "negative eigenvalues clipped", RuntimeWarning, stacklevel=2)
    lam = np.clip(lam, 0.0, None)
    return DependenceKernel(u, psi, H, lam, vec / np.sqrt(h), lag_cutoff)


def cm_statistic(sample, null_cdf: Callable) -> float:
    """Cramer-von Mises ``1/(12N) + sum (U_(i) - (2i-1)/(2N))^2``."""
    x = np.asarray(sample, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    u = np.sort(np.asarray(null_cdf(x), dtype=float))
    n = u.size
    return float(1.0 / (12 * n) + np.sum((u - (2 * np.arange(1, n + 1) - 1) / (2.0 * n)) ** 2))


def cm_sf_imhof(x, lam, tol: float = 1e-10, max_err: float = 1e-6) -> np.ndarray:
    """``P(sum lam_j z_j^2 > x)`` by Imhof's inversion formula.

    ``1/2 + (1/pi) int_0^inf sin(A(t) - x t/2) / (t rho(t)) dt`` with
    ``A = 1/2 sum arctan(lam t)`` and ``rho = prod (1 + lam^2 t^2)^(1/4)``.
    The range ``[1, inf)`` is split into ``cos(x t/2)`` and ``sin(x t/2)``
    Fourier integrals (QUADPACK QAWF), which stay accurate when only a few
    eigenvalues make the envelope decay slowly.

    Raises
    ------
    ArithmeticError
        Estimated absolute error above ``max_err``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lam = np.asarray(lam, dtype=float)
    lam = lam[lam > 1e-14 * lam.max()]
    half_tr = 0.5 * lam.sum()

    def phase(t):
        return 0.5 * np.sum(np.arctan(lam * t))

    def env(t):
        return np.exp(-0.25 * np.sum(np.log1p((lam * t) ** 2))) / t

    def g_sin(t):
        return np.sin(phase(t)) * env(t)

    def g_cos(t):
        return np.cos(phase(t)) * env(t)

    out = np.empty_like(x)
    worst = 0.0
    for i, xi in enumerate(x):
        def head(t):
            return half_tr - 0.5 * xi if t == 0.0 else np.sin(phase(t) - 0.5 * xi * t) * env(t)

        v, e = integrate.quad(head, 0.0, 1.0, epsabs=tol, limit=200)
        if xi > 0:
            w = 0.5 * xi
            v1, e1 = integrate.quad(g_sin, 1.0, np.inf, weight="cos", wvar=w, epsabs=tol,
                                    limlst=200)
            v2, e2 = integrate.quad(g_cos, 1.0, np.inf, weight="sin", wvar=w, epsabs=tol,
                                    limlst=200)
            v, e = v + v1 - v2, e + e1 + e2
        else:
            v1, e1 = integrate.quad(g_sin, 1.0, np.inf, epsabs=tol, limit=500)
            v, e = v + v1, e + e1
        out[i] = 0.5 + v / np.pi
        worst = max(worst, e / np.pi)
    if not np.all(np.isfinite(out)) or worst > max_err:
        raise ArithmeticError(f"Imhof inversion did not converge (err {worst:.2g})")
    return np.clip(out, 0.0, 1.0)


@dataclass
class GofDepLaw:
    """Tabulated CM and KS limit laws.

    The CDF tables are monotone and interpolated linearly; statistics beyond
    the last node get ``p = 1 - cdf[-1]``, which is an upper bound.
    """

    cm_x: np.ndarray
    cm_cdf: np.ndarray
    ks_x: np.ndarray | None
    ks_cdf: np.ndarray | None
    mean_cm: float
    var_cm: float
    method: str
    kappa_star: float | None = None
    kappa0: float | None = None
    u0_star: float | None = None
    extra: dict = field(default_factory=dict)

    def cm_pvalue(self, stat: float) -> float:
        return float(1.0 - np.interp(stat, self.cm_x, self.cm_cdf, left=0.0))

    def ks_pvalue(self, stat: float) -> float:
        if self.ks_x is None:
            raise ValueError("law has no KS table")
        return float(1.0 - np.interp(stat, self.ks_x, self.ks_cdf, left=0.0))

    def cm_quantile(self, q: float) -> float:
        return float(np.interp(q, self.cm_cdf, self.cm_x))

    def ks_quantile(self, q: float) -> float:
        return float(np.interp(q, self.ks_cdf, self.ks_x))


def _ecdf_table(samples: np.ndarray, n_nodes: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    s = np.sort(samples)
    q = np.linspace(0.0, 1.0, n_nodes)
    x = np.quantile(s, q)
    x, idx = np.unique(x, return_index=True)
    return x, q[idx]


_BGK = 0.5825971579390106  # -zeta(1/2)/sqrt(2 pi)


def mc_limit_process(kernel: DependenceKernel, trials: int = 10**6, seed=None,
                     chunk: int = 20000, continuity_correction: bool = True
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``(KS, CM)`` of the limit process ``y = U Lambda^(1/2) z``.

    Parameters
    ----------
    continuity_correction : bool
        The grid maximum underestimates the supremum of the continuous
        process.  When True, ``0.5826 sqrt(h)`` is added to each KS draw
        (Broadie-Glasserman-Kou shift for a unit-diffusion path sampled with
        step ``h``).

    Returns
    -------
    ks, cm : ndarray, shape (trials,)
        ``max_u |y(u)|`` and ``h sum_u y(u)^2`` per trial.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    lam = kernel.eigenvalues
    keep = lam > 0
    b = kernel.eigenvectors[:, keep] * np.sqrt(lam[keep])  # M x J
    h = kernel.weight
    ks = np.empty(trials)
    cm = np.empty(trials)
    for start in range(0, trials, chunk):
        k = min(chunk, trials - start)
        z = rng.standard_normal((k, b.shape[1]))
        y = z @ b.T
        ks[start:start + k] = np.max(np.abs(y), axis=1)
        cm[start:start + k] = h * np.einsum("ij,ij->i", y, y)
    if continuity_correction:
        ks += _BGK * np.sqrt(h)
    return ks, cm


def cm_law(kernel: DependenceKernel, method: str = "imhof", trials: int = 10**6,
           seed=None, x_grid=None) -> GofDepLaw:
    """Limit law of the CM statistic.

    Parameters
    ----------
    method : {'imhof', 'mc'}
        Characteristic-function inversion or Monte Carlo over ``trials``
        Gaussian draws.  Inversion failures fall back to Monte Carlo.
    x_grid : array_like, optional
        Abscissae for the inverted CDF; default spans up to 12 standard
        deviations above the mean.
    """
    lam = kernel.eigenvalues
    mean, var = float(lam.sum()), float(2 * np.sum(lam**2))
    if method == "imhof":
        if x_grid is None:
            top = mean + 12 * np.sqrt(var) + 20 * lam[0]
            x_grid = np.concatenate([np.linspace(0, mean, 60, endpoint=False),
                                     np.linspace(mean, top, 400)])
        x_grid = np.asarray(x_grid, dtype=float)
        try:
            cdf = 1.0 - cm_sf_imhof(x_grid, lam)
            cdf = np.maximum.accumulate(np.clip(cdf, 0, 1))
            cdf[x_grid <= 0] = 0.0
            return GofDepLaw(x_grid, cdf, None, None, mean, var, "characteristic-function")
        except ArithmeticError as exc:
            warnings.warn(f"{exc}; falling back to Monte Carlo", RuntimeWarning, stacklevel=2)
    elif method != "mc":
        raise ValueError(f"unknown method {method!r}")
    ks, cm = mc_limit_process(kernel, trials, seed)
    cx, cc = _ecdf_table(cm)
    kx, kc = _ecdf_table(ks)
    return GofDepLaw(cx, cc, kx, kc, mean, var, "monte-carlo",
                     extra={"mc_mean": float(cm.mean()), "mc_var": float(cm.var()),
                            "trials": trials})


def ks_law_dep(kernel: DependenceKernel, mode_cut: int = 0, k_grid=None) -> GofDepLaw:
    """Dominant-mode KS law ``P(KS <= k) = erf(k / (sqrt(2) kappa*))``.

    ``kappa0(u) = sqrt(lambda_0) |U_0(u)|`` is maximal at ``u0*``;
    ``kappa* = sqrt(sum_{j <= mode_cut} lambda_j U_j(u0*)^2)`` adds the
    variance of the next modes at that point (``mode_cut = 0`` keeps the top
    mode only).
    """
    lam = kernel.eigenvalues
    if lam[0] <= 0:
        raise ValueError("degenerate kernel: top eigenvalue is zero")
    u0 = kernel.eigenvectors[:, 0]
    i0 = int(np.argmax(np.abs(u0)))
    kappa0 = float(np.sqrt(lam[0]) * abs(u0[i0]))
    j = np.arange(min(mode_cut, lam.size - 1) + 1)
    kappa_star = float(np.sqrt(np.sum(lam[j] * kernel.eigenvectors[i0, j] ** 2)))
    if k_grid is None:
        k_grid = np.linspace(0, 8 * kappa_star, 801)
    k_grid = np.asarray(k_grid, dtype=float)
    cdf = special.erf(k_grid / (np.sqrt(2) * kappa_star))
    mean, var = float(lam.sum()), float(2 * np.sum(lam**2))
    return GofDepLaw(np.array([0.0]), np.array([0.0]), k_grid, cdf, mean, var,
                     "dominant-mode", kappa_star, kappa0, float(kernel.u[i0]))


def classical_ks_table(k_grid=None) -> tuple[np.ndarray, np.ndarray]:
    k_grid = np.linspace(0.0, 3.0, 601) if k_grid is None else np.asarray(k_grid)
    cdf = np.where(k_grid > 0, ks_law(np.maximum(k_grid, 1e-3)), 0.0)
    return k_grid, cdf


def gof_dep_test(sample, null_cdf: Callable, law: GofDepLaw) -> tuple[float, float]:
    """p-values ``(ks_p, cm_p)`` of a dependent sample under ``law``.

    ``ks_p`` is NaN when the law carries no KS table.
    """
    cm = cm_statistic(sample, null_cdf)
    cm_p = law.cm_pvalue(cm)
    ks_p = float("nan")
    if law.ks_x is not None:
        ks_p = law.ks_pvalue(ks_statistic(sample, null_cdf))
    if cm > law.cm_x[-1]:
        log.info("CM statistic %.4g beyond law table; p is an upper bound", cm)
    return ks_p, cm_p
