"""Recurrence intervals, waiting times, sequence lengths and records.

Events are defined with relative thresholds (quantiles), so every quantity
below depends only on the copula of the process.  The diagonal n-point
copula ``C_n(p)`` is the probability that ``n`` consecutive values all lie
below the ``p``-quantile (``C_0 = 1``, ``C_1 = p``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .depmeasure import bvn_cdf, pseudo_ranks

__all__ = [
    "DiagonalNCopula",
    "RecurrenceStats",
    "white_noise_ncopula",
    "diagonal_ncopula_empirical",
    "recurrence_from_copula",
    "recurrence_empirical",
    "sequence_lengths",
    "record_probability",
    "gaussian_diagonal_ncopula",
    "omori_fit",
]


@dataclass(frozen=True)
class DiagonalNCopula:
    """``C_n(p)`` for ``n = 0..n_max``."""

    p: float
    values: np.ndarray
    source: str = "empirical"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size < 3 or abs(v[0] - 1) > 1e-12:
            raise ValueError("need C_0 = 1 and at least three terms")
        object.__setattr__(self, "values", v)

    @property
    def n_max(self) -> int:
        return self.values.size - 1


def white_noise_ncopula(p: float, n_max: int) -> DiagonalNCopula:
    return DiagonalNCopula(p, p ** np.arange(n_max + 1), "white-noise")


def _below(x, p: float) -> np.ndarray:
    """Indicator of the ``round(pT)`` smallest values (ties by order)."""
    x = np.asarray(x, dtype=float).ravel()
    k = int(round(p * x.size))
    return pseudo_ranks(x) <= k


def _runs(flags: np.ndarray, wrap: bool) -> np.ndarray:
    """Lengths of maximal runs of True, merging the ends when ``wrap``."""
    f = flags.astype(np.int8)
    if f.all():
        return np.array([f.size])
    d = np.diff(np.concatenate([[0], f, [0]]))
    starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
    lengths = ends - starts
    if wrap and lengths.size > 1 and f[0] and f[-1]:
        lengths = np.concatenate([[lengths[0] + lengths[-1]], lengths[1:-1]])
    return lengths


def diagonal_ncopula_empirical(series, p: float, n_max: int, wrap: bool = False
                               ) -> DiagonalNCopula:
    """Empirical ``C_n(p)``: fraction of length-``n`` windows entirely below
    the empirical ``p``-quantile.

    With ``wrap`` the series is treated as periodic (``T`` windows per
    ``n``); otherwise ``T - n + 1`` windows are used.
    """
    x = np.asarray(series, dtype=float).ravel()
    t = x.size
    if n_max >= t:
        raise ValueError("n_max must be smaller than the series length")
    if t < 10 * n_max:
        warnings.warn("series shorter than 10 n_max: C_n estimates are noisy", stacklevel=2)
    flags = _below(x, p)
    runs = _runs(flags, wrap)
    n = np.arange(n_max + 1)
    if flags.all():
        vals = np.ones(n_max + 1)
    else:
        counts = np.maximum(runs[None, :] - n[:, None] + 1, 0).sum(axis=1)
        denom = t if wrap else (t - n + 1)
        vals = counts / denom
    vals[0] = 1.0
    return DiagonalNCopula(p, vals, "empirical")


@dataclass
class RecurrenceStats:
    """Recurrence-related distributions.

    Arrays are indexed from 1 (``pi[0]`` is ``pi(1)``), except ``phi``
    which starts at ``w = 0``.
    """

    p_plus: float
    tau: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    mean: float
    var: float
    phi: np.ndarray | None = None
    mean_phi: float | None = None
    psi: np.ndarray | None = None
    mean_psi: float | None = None
    residual: np.ndarray | None = None
    mass: float | None = None
    extra: dict = field(default_factory=dict)


def recurrence_from_copula(c: DiagonalNCopula, p_plus: float | None = None,
                           p_minus_copula: DiagonalNCopula | None = None) -> RecurrenceStats:
    """Exact recurrence statistics from a diagonal n-point copula.

    Parameters
    ----------
    c : DiagonalNCopula
        Evaluated at ``p = 1 - p_plus`` (non-events lie below the threshold).
    p_plus : float, optional
        Event probability; defaults to ``1 - c.p``.
    p_minus_copula : DiagonalNCopula, optional
        Copula at ``p_-`` for the sequence-length law of negative events.

    Notes
    -----
    Series truncated at ``n_max`` give a reported ``mass`` below one; the
    mean and variance sums include only the available terms.
    """
    p_plus = 1.0 - c.p if p_plus is None else p_plus
    if abs(c.p - (1 - p_plus)) > 1e-12:
        raise ValueError("copula must be evaluated at 1 - p_plus")
    cn = c.values
    tau = np.arange(1, c.n_max)
    pi = (cn[tau - 1] - 2 * cn[tau] + cn[tau + 1]) / p_plus
    if pi.min() < -1e-12:
        raise ValueError("negative recurrence probability: input is not a valid copula")
    big_pi = 1 - (cn[tau] - cn[tau + 1]) / p_plus
    mean = 1.0 / p_plus
    s = cn[1:].sum()
    var = 2.0 / p_plus * s - (1 - p_plus) / p_plus**2
    phi = cn[:-1] - cn[1:]
    mean_phi = float(s)
    out = RecurrenceStats(p_plus, tau, pi, big_pi, mean, float(var), phi, mean_phi,
                          residual=cn[tau] / p_plus, mass=float(pi.sum()))
    if p_minus_copula is not None:
        q = p_minus_copula.p
        v = p_minus_copula.values
        n = np.arange(1, p_minus_copula.n_max - 1)
        out.psi = (v[n] - 2 * v[n + 1] + v[n + 2]) / (q * (1 - q))
        out.mean_psi = 1.0 / (1 - q)
        # runs start after a non-event with probability p - C_2, not p(1-p)
        out.extra["psi_normalized"] = out.psi * q * (1 - q) / (q - v[2])
        out.extra["mean_psi_exact"] = q / (q - v[2])
    return out


def recurrence_empirical(series, p_plus: float, wrap: bool = False, tau_max: int | None = None
                         ) -> RecurrenceStats:
    """Gap statistics between exceedances of the ``1 - p_plus`` quantile.

    With ``wrap`` the gap from the last event back to the first (through the
    end of the series) is included, so that the mean gap is exactly
    ``T / (number of events)``.
    """
    x = np.asarray(series, dtype=float).ravel()
    t = x.size
    above = ~_below(x, 1 - p_plus)
    idx = np.flatnonzero(above)
    if idx.size < 30:
        warnings.warn(f"only {idx.size} events above threshold", stacklevel=2)
    if idx.size < 2:
        raise ValueError("fewer than two events")
    gaps = np.diff(idx)
    if wrap:
        gaps = np.concatenate([gaps, [t - idx[-1] + idx[0]]])
    tau_max = int(gaps.max()) if tau_max is None else tau_max
    tau = np.arange(1, tau_max + 1)
    counts = np.bincount(gaps, minlength=tau_max + 1)[1:tau_max + 1]
    pi = counts / gaps.size
    return RecurrenceStats(p_plus, tau, pi, np.cumsum(pi), float(gaps.mean()),
                           float(gaps.var()), mass=float(pi.sum()),
                           extra={"gaps": gaps, "events": int(idx.size)})


def sequence_lengths(series, p_minus: float, wrap: bool = False) -> np.ndarray:
    """Lengths of runs of consecutive values below the ``p_minus`` quantile."""
    return _runs(_below(series, p_minus), wrap)


def record_probability(series, n: int | None = None) -> np.ndarray:
    """Empirical record-breaking probability ``R(t)``, ``t = 1..n``.

    Parameters
    ----------
    series : array_like
        1-D series cut into non-overlapping windows of length ``n``, or a
        2-D array whose rows are independent windows.
    n : int
        Window length for 1-D input.

    Returns
    -------
    ndarray
        ``R[t-1]`` is the fraction of windows where ``X_t`` exceeds all
        previous values (``R(1) = 1`` by convention).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        if n is None:
            raise ValueError("window length n required for 1-D input")
        k = x.size // n
        x = x[: k * n].reshape(k, n)
    prev = np.maximum.accumulate(x, axis=1)
    rec = np.ones(x.shape)
    rec[:, 1:] = x[:, 1:] > prev[:, :-1]
    return rec.mean(axis=0)


def _toeplitz_corr(rho_fn: Callable[[int], float], n: int) -> np.ndarray:
    r = np.array([1.0] + [float(rho_fn(l)) for l in range(1, n)])
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return r[idx]


def gaussian_diagonal_ncopula(rho_fn: Callable[[int], float], n: int, p: float,
                              trials: int = 10**6, seed=None) -> tuple[float, float]:
    """Gaussian diagonal copula ``Phi_rho(Phi^-1(p), ..., Phi^-1(p))``.

    Returns
    -------
    value, se : float
        ``se = 0`` for the deterministic quadrature used when ``n <= 3``;
        otherwise the Monte Carlo standard error with antithetic pairs.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 1.0, 0.0
    if n == 1:
        return float(p), 0.0
    rho = _toeplitz_corr(rho_fn, n)
    try:
        chol = np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        raise ValueError("Toeplitz correlation is not positive definite") from None
    h = special.ndtri(p)
    if n == 2:
        return float(bvn_cdf(h, h, rho[0, 1])), 0.0
    if n == 3:
        r12, r13, r23 = rho[0, 1], rho[0, 2], rho[1, 2]
        s2, s3 = np.sqrt(1 - r12**2), np.sqrt(1 - r13**2)
        rc = (r23 - r12 * r13) / (s2 * s3)

        def f(x):
            return (np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
                    * bvn_cdf((h - r12 * x) / s2, (h - r13 * x) / s3, rc))

        val = integrate.quad(f, -np.inf, h, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        return float(val), 0.0
    rng = np.random.default_rng(seed)
    half = max(1, trials // 2)
    hits = np.empty(half)
    done = 0
    while done < half:
        k = min(200000, half - done)
        z = rng.standard_normal((k, n)) @ chol.T
        hits[done:done + k] = 0.5 * (np.all(z <= h, axis=1) + np.all(-z <= h, axis=1))
        done += k
    return float(hits.mean()), float(hits.std(ddof=1) / np.sqrt(half))


@dataclass(frozen=True)
class OmoriFit:
    lam: float
    alpha: float
    se_lam: float
    se_alpha: float


def omori_fit(lags, p_pp) -> OmoriFit:
    """Log-log least squares of ``p++(l) = lam * l^(-alpha)``."""
    l = np.asarray(lags, dtype=float)
    y = np.asarray(p_pp, dtype=float)
    if np.any(l <= 0) or np.any(y <= 0):
        raise ValueError("lags and probabilities must be positive")
    x = np.column_stack([np.ones_like(l), -np.log(l)])
    coef, *_ = np.linalg.lstsq(x, np.log(y), rcond=None)
    dof = max(l.size - 2, 1)
    res = np.log(y) - x @ coef
    cov = np.linalg.pinv(x.T @ x) * (res @ res) / dof
    lam = float(np.exp(coef[0]))
    se = np.sqrt(np.diag(cov))
    return OmoriFit(lam, float(coef[1]), lam * float(se[0]), float(se[1]))
