"""Quadratic ARCH volatility models.

The squared volatility is a quadratic form of the last ``q`` returns,

    sigma_t^2 = s^2 + sum_tau L(tau) r_{t-tau}
                    + sum_{tau,tau'} K(tau,tau') r_{t-tau} r_{t-tau'},

and ``r_t = sigma_t xi_t`` with i.i.d. unit-variance residuals.  Lags are
1-based in the formulas and 0-based in the arrays (``L[0]`` is ``L(1)``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize, special

__all__ = [
    "QarchModel",
    "CorrelationSet",
    "FourthMoment",
    "MLResult",
    "xi4_student",
    "simulate",
    "sigma2_path",
    "fourth_moment_diagonal",
    "fourth_moment_boundary",
    "stationarity_frontier",
    "figarch_critical",
    "figarch_exponent",
    "correlation_functions",
    "gmm_diagonal",
    "gmm_offdiagonal",
    "s2_curve",
    "s2_fit",
    "kernel_from_s2_fit",
    "student_loglike",
    "one_step_ml",
    "kernel_family",
    "spectral",
    "bb_linear_spectrum",
    "bb_exponential_spectrum",
    "bb_powerlaw_spectrum",
    "tri_measure",
    "squared_return_correlation",
    "loglog_slope",
    "with_offdiagonal",
]

SIGMA2_FLOOR = 1e-12


def xi4_student(nu: float | None) -> float:
    """Fourth moment of a unit-variance residual (Gaussian when ``nu`` is None)."""
    if nu is None:
        return 3.0
    if nu <= 4:
        return np.inf
    return 3.0 * (nu - 2) / (nu - 4)


@dataclass(frozen=True)
class QarchModel:
    """QARCH parameters.

    Parameters
    ----------
    s2 : float
        Baseline squared volatility.
    L : array_like, shape (q,)
        Leverage kernel.
    K : array_like, shape (q, q)
        Symmetric quadratic kernel.
    nu : float, optional
        Student degrees of freedom of the residuals; Gaussian when None.
    """

    s2: float
    L: np.ndarray
    K: np.ndarray
    nu: float | None = None

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.K, dtype=float))
        l = np.asarray(self.L, dtype=float).ravel()
        if k.shape[0] != k.shape[1]:
            raise ValueError("K must be square")
        if l.size != k.shape[0]:
            raise ValueError("L and K horizons differ")
        if not np.allclose(k, k.T, atol=1e-12, rtol=0):
            raise ValueError("K must be symmetric")
        if self.s2 <= 0:
            raise ValueError("s2 must be positive")
        if self.nu is not None and self.nu <= 2:
            raise ValueError("nu must exceed 2")
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "L", l)

    @classmethod
    def diagonal(cls, k, s2: float | None = None, L=None, nu=None) -> "QarchModel":
        """ARCH(q) model; ``s2`` defaults to ``1 - sum k`` (unit mean variance)."""
        k = np.asarray(k, dtype=float)
        s2 = 1.0 - k.sum() if s2 is None else s2
        return cls(s2, np.zeros(k.size) if L is None else L, np.diag(k), nu)

    @property
    def q(self) -> int:
        return self.K.shape[0]

    @property
    def k(self) -> np.ndarray:
        return np.diag(self.K).copy()

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.K - np.diag(np.diag(self.K)))

    @property
    def mean_sigma2(self) -> float:
        tr = np.trace(self.K)
        return self.s2 / (1 - tr) if tr < 1 else np.inf

    def stationarity(self) -> bool:
        return bool(np.trace(self.K) < 1)

    def positivity_report(self) -> dict:
        """Sufficient conditions for ``sigma^2 >= 0`` (reported, not enforced)."""
        w = np.linalg.eigvalsh(self.K)
        lhs = np.nan
        if w.min() > 0:
            lhs = float(self.L @ np.linalg.solve(self.K, self.L))
        elif not self.L.any():
            lhs = 0.0
        return {"min_eigenvalue": float(w.min()), "leverage_form": lhs,
                "bound": 4 * self.s2, "positive": bool(w.min() >= 0 and lhs <= 4 * self.s2)}

    def to_dict(self) -> dict:
        return {"s2": self.s2, "L": self.L.tolist(), "K": self.K.tolist(), "nu": self.nu,
                "q": self.q}

    @classmethod
    def from_dict(cls, d: dict) -> "QarchModel":
        return cls(float(d["s2"]), d["L"], d["K"], d.get("nu"))


class Simulation(NamedTuple):
    returns: np.ndarray
    sigma2: np.ndarray
    floor_hits: int


def _residuals(rng, shape, nu):
    if nu is None:
        return rng.standard_normal(shape)
    return rng.standard_t(nu, size=shape) * np.sqrt((nu - 2) / nu)


def simulate(model: QarchModel, t: int, seed=None, n_paths: int | None = None,
             burn: int | None = None, force: bool = False) -> Simulation:
    """Simulate returns and squared volatilities.

    Parameters
    ----------
    model : QarchModel
    t : int
        Number of retained points per path.
    seed : int or Generator, optional
    n_paths : int, optional
        Simulate independent paths in parallel; output shape ``(n_paths, t)``.
    burn : int, optional
        Discarded warm-up, default ``10 q``.
    force : bool
        Simulate a non-stationary model (with a warning) instead of failing.

    Returns
    -------
    Simulation
        ``(returns, sigma2, floor_hits)``.  ``sigma2`` values below 1e-12
        are floored and counted.
    """
    if not model.stationarity():
        if not force:
            raise ValueError("model is not stationary (Tr K >= 1)")
        warnings.warn("simulating a non-stationary QARCH model", stacklevel=2)
    rng = np.random.default_rng(seed)
    q = model.q
    burn = 10 * q if burn is None else burn
    p = 1 if n_paths is None else n_paths
    total = t + burn
    xi = _residuals(rng, (total, p), model.nu)
    r = np.zeros((total + q, p))
    s2 = np.empty((total, p))
    lev = model.L[::-1]
    diag = model.is_diagonal
    kk = model.k[::-1]
    kr = model.K[::-1, ::-1]
    has_l = bool(model.L.any())
    hits = 0
    for i in range(total):
        h = r[i:i + q]  # rows are r_{t-q} .. r_{t-1}
        v = model.s2 + (kk @ (h * h) if diag else np.einsum("ip,ij,jp->p", h, kr, h))
        if has_l:
            v = v + lev @ h
        bad = v < SIGMA2_FLOOR
        if bad.any():
            hits += int(bad.sum())
            v = np.where(bad, SIGMA2_FLOOR, v)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"volatility blow-up at step {i}")
        s2[i] = v
        r[i + q] = np.sqrt(v) * xi[i]
    ret, sig = r[q + burn:].T, s2[burn:].T
    if hits:
        warnings.warn(f"sigma^2 floored {hits} times", stacklevel=2)
    if n_paths is None:
        ret, sig = ret[0], sig[0]
    return Simulation(np.ascontiguousarray(ret), np.ascontiguousarray(sig), hits)


def _lagged(r: np.ndarray, q: int) -> np.ndarray:
    """``X[t, tau-1] = r[t + q - tau]`` for the ``T - q`` predictable points."""
    return np.lib.stride_tricks.sliding_window_view(r, q)[:-1, ::-1]


def sigma2_path(model: QarchModel, returns) -> np.ndarray:
    """Model ``sigma_t^2`` for ``t >= q`` given observed returns.

    Accepts a 1-D series or a 2-D panel (assets in rows).
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim == 2:
        return np.stack([sigma2_path(model, x) for x in r])
    x = _lagged(r, model.q)
    if model.is_diagonal:
        quad = (x * x) @ model.k
    else:
        quad = np.einsum("ti,ij,tj->t", x, model.K, x)
    return model.s2 + x @ model.L + quad


# ---------------------------------------------------------------- moments

def _nabla(k: np.ndarray, xi4: float) -> np.ndarray:
    q = k.size
    kk = np.concatenate([[0.0], k, np.zeros(q + 1)])
    i = np.arange(1, q + 1)
    d = i[:, None] - i[None, :]
    kd = np.where(d > 0, kk[np.clip(d, 0, None)], 0.0)
    return np.eye(q) - xi4 * np.outer(k, k) - (kd + kk[i[:, None] + i[None, :]])


@dataclass(frozen=True)
class FourthMoment:
    sigma4: float
    C2: np.ndarray
    singular: bool
    det_sign: float


def fourth_moment_diagonal(k, xi4: float = 3.0) -> FourthMoment:
    """``<sigma^4>`` and ``C2(tau)`` of a diagonal QARCH with ``<sigma^2> = 1``.

    Solves ``nabla C2 = S`` with ``S(tau) = k(tau) (<xi^4> - 1)``.  The
    fourth moment is finite while ``det nabla`` keeps the sign it has at
    ``k = 0``; past the first sign change ``sigma4 = inf`` and ``singular``
    is set.
    """
    k = np.asarray(k, dtype=float).ravel()
    if k.sum() >= 1:
        raise ValueError("sum of k must be < 1")
    nab = _nabla(k, xi4)
    sign, _ = np.linalg.slogdet(nab)
    if sign <= 0:
        return FourthMoment(np.inf, np.full(k.size, np.inf), True, float(sign))
    c2 = np.linalg.solve(nab, k * (xi4 - 1))
    return FourthMoment(float(1 + k @ c2), c2, False, float(sign))


def fourth_moment_boundary(shape, xi4: float = 3.0, g_max: float | None = None,
                           n_scan: int = 60, tol: float = 1e-12) -> float:
    """Smallest amplitude ``g`` at which ``det nabla(g * shape)`` changes sign.

    Scans ``(0, g_max]`` then bisects; returns ``nan`` when no sign change
    is found below ``g_max`` (default: the stationarity limit ``1/sum``).
    """
    shape = np.asarray(shape, dtype=float)
    g_max = 1.0 / shape.sum() if g_max is None else g_max

    def sgn(g):
        return np.linalg.slogdet(_nabla(g * shape, xi4))[0]

    grid = np.linspace(0, g_max, n_scan + 1)[1:]
    lo = 0.0
    for hi in grid:
        if sgn(hi) <= 0:
            break
        lo = hi
    else:
        return np.nan
    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if sgn(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def stationarity_frontier(alpha: float, q: float = np.inf) -> float:
    """Critical amplitude ``g_c`` of ``k(tau) = g tau^-alpha 1{tau <= q}``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if np.isinf(q):
        return 0.0 if alpha <= 1 else float(1.0 / special.zeta(alpha))
    return float(1.0 / np.sum(np.arange(1, int(q) + 1, dtype=float) ** -alpha))


def _aitken(x0, x1, x2):
    d = (x2 - x1) - (x1 - x0)
    return x2 if d == 0 else x2 - (x2 - x1) ** 2 / d


def _g4_extrapolated(alpha, qs, xi4):
    vals = []
    for q in qs:
        shape = np.arange(1, q + 1, dtype=float) ** -alpha
        vals.append(fourth_moment_boundary(shape, xi4, g_max=1.5 / shape.sum()))
    return _aitken(*vals[-3:]), vals


def figarch_critical(qs=(128, 256, 512), bracket=(1.3, 1.45), xi4: float = 3.0,
                     xtol: float = 1e-4) -> dict:
    """Critical exponent below which a stationary FIGARCH has a finite
    fourth moment.

    For each ``alpha`` the fourth-moment boundary ``g_4(alpha, q)`` is found
    by det-root at the horizons ``qs`` and extrapolated to ``q = inf`` with
    Aitken's delta-squared on the last three.  ``alpha_c`` solves
    ``g_4(alpha) = 1/zeta(alpha)``.

    Returns
    -------
    dict
        ``alpha_c``, ``g_c`` and the per-horizon boundaries at ``alpha_c``.
    """
    def f(a):
        return _g4_extrapolated(a, qs, xi4)[0] - stationarity_frontier(a)

    ac = optimize.brentq(f, *bracket, xtol=xtol)
    g4, per_q = _g4_extrapolated(ac, qs, xi4)
    return {"alpha_c": float(ac), "g_c": stationarity_frontier(ac), "g4": float(g4),
            "g4_per_q": dict(zip(qs, map(float, per_q)))}


def figarch_exponent(alpha: float) -> float:
    """Exponent ``beta = 3 - 2 alpha`` of ``C2(tau) ~ tau^-beta``."""
    if not 1 < alpha < 1.5:
        raise ValueError("power-law volatility correlations need 1 < alpha < 3/2 "
                         "(stationary and critical)")
    return 3.0 - 2.0 * alpha


# ---------------------------------------------------------------- correlations

@dataclass
class CorrelationSet:
    """Pooled correlation functions.

    One-lag arrays are indexed by ``tau + q`` for ``tau = -q..q``; use
    :meth:`at` for signed access.  Two-lag arrays are ``(q+1, q+1)`` and
    indexed by ``(tau', tau'')`` with ``tau', tau'' >= 0``.  Tilde variants
    are present only when a volatility proxy was supplied.
    """

    q: int
    r_cut: float | None
    C1: np.ndarray
    C2: np.ndarray
    Ca: np.ndarray
    Lc: np.ndarray
    La: np.ndarray
    D: np.ndarray | None = None
    Da: np.ndarray | None = None
    C2t: np.ndarray | None = None
    Cat: np.ndarray | None = None
    Lt: np.ndarray | None = None
    Dt: np.ndarray | None = None
    mean_sigma2: float | None = None
    n_points: int = 0

    def at(self, name: str, tau):
        arr = getattr(self, name)
        tau = np.asarray(tau)
        if np.any(np.abs(tau) > self.q):
            raise IndexError("lag beyond q")
        return arr[tau + self.q]


def _one_lag(a, b, q, w0, w1):
    """``<a_t b_{t-tau}>`` pooled, for tau = -q..q, over t in [w0, w1)."""
    out = np.empty(2 * q + 1)
    for j, tau in enumerate(range(-q, q + 1)):
        out[j] = np.mean(a[:, w0:w1] * b[:, w0 - tau:w1 - tau])
    return out


def _two_lag(a, b, q, w0, w1):
    """``<a_t b_{t-i} b_{t-j}>`` pooled, for i, j = 0..q."""
    out = np.empty((q + 1, q + 1))
    for i in range(q + 1):
        ai = a[:, w0:w1] * b[:, w0 - i:w1 - i]
        for j in range(i, q + 1):
            out[i, j] = out[j, i] = np.mean(ai * b[:, w0 - j:w1 - j])
    return out


def correlation_functions(returns, q: int, r_cut: float | None = None, sigma2=None,
                          four_point: bool = True) -> CorrelationSet:
    """Pooled two-, three- and four-point correlation functions.

    Parameters
    ----------
    returns : array_like
        Series ``(T,)`` or panel ``(N, T)``; returns are assumed centred.
    q : int
        Largest lag.
    r_cut : float, optional
        Clip returns as ``r_cut tanh(r / r_cut)``.
    sigma2 : array_like, optional
        Volatility proxy aligned with ``returns``; enables tilde variants.
    four_point : bool
        Compute ``D``, ``Da`` (and ``Dt``), the costliest part.

    Notes
    -----
    Every average runs over the same window ``t in [q, T-q)`` and uses the
    per-asset mean of ``r^2`` over that window, so ``D(tau, tau) = C2(tau)``
    holds exactly.
    """
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    n, t = r.shape
    if 2 * q >= t:
        raise ValueError("q too large for the series length")
    if r_cut is not None:
        r = r_cut * np.tanh(r / r_cut)
    w0, w1 = q, t - q
    r2 = r * r
    ar = np.abs(r)
    c2 = r2 - r2[:, w0:w1].mean(axis=1, keepdims=True)
    ca = ar - ar[:, w0:w1].mean(axis=1, keepdims=True)
    out = CorrelationSet(
        q, r_cut,
        C1=_one_lag(r, r, q, w0, w1),
        C2=_one_lag(c2, r2, q, w0, w1),
        Ca=_one_lag(c2, ar, q, w0, w1),
        Lc=_one_lag(c2, r, q, w0, w1),
        La=_one_lag(ar, r, q, w0, w1),
        n_points=n * (w1 - w0),
    )
    if four_point:
        out.D = _two_lag(c2, r, q, w0, w1)
        out.Da = _two_lag(ca, r, q, w0, w1)
    if sigma2 is not None:
        s = np.atleast_2d(np.asarray(sigma2, dtype=float))
        if s.shape != r.shape:
            raise ValueError("sigma2 must be aligned with returns")
        out.mean_sigma2 = float(s[:, w0:w1].mean())
        cs = s - s[:, w0:w1].mean(axis=1, keepdims=True)
        out.C2t = _one_lag(cs, r2, q, w0, w1)
        out.Cat = _one_lag(cs, ar, q, w0, w1)
        out.Lt = _one_lag(cs, r, q, w0, w1)
        if four_point:
            out.Dt = _two_lag(cs, r, q, w0, w1)
    return out


def _check_cond(a: np.ndarray, what: str, limit: float = 1e10) -> None:
    c = np.linalg.cond(a)
    if not np.isfinite(c) or c > limit:
        warnings.warn(f"{what}: ill-conditioned design (cond = {c:.3g})", stacklevel=3)


def gmm_diagonal(cs: CorrelationSet, q: int | None = None, mean_sigma2: float = 1.0,
                 leverage: bool = True):
    """Diagonal GMM calibration from correlation functions.

    Solves, for ``tau = 1..q``,

    * ``<sigma^2> = s^2 + sum k``,
    * ``Lt(tau) = L(tau) + sum_{tau' != tau} L(tau') C1(tau - tau')
      + sum k(tau') Lc(tau - tau')``,
    * ``Cat(tau) = sum L(tau') La(tau' - tau) + sum k(tau') Ca(tau - tau')``.

    With ``leverage=False`` the ``L`` unknowns are fixed to zero and only the
    ``k`` equations are solved.

    Returns
    -------
    s2 : float
    L : ndarray, shape (q,)
    k : ndarray, shape (q,)
    """
    q = cs.q if q is None else q
    if q > cs.q:
        raise ValueError("correlations available only up to lag cs.q")
    if cs.Cat is None or cs.Lt is None:
        raise ValueError("tilde correlations needed (supply sigma2)")
    tau = np.arange(1, q + 1)
    d = tau[:, None] - tau[None, :]
    ca = cs.at("Ca", d)
    cat = cs.at("Cat", tau)
    if not leverage:
        _check_cond(ca, "gmm_diagonal")
        k = np.linalg.solve(ca, cat)
        return float(mean_sigma2 - k.sum()), np.zeros(q), k
    c1 = np.where(d == 0, 1.0, cs.at("C1", d))
    a = np.block([[c1, cs.at("Lc", d)], [cs.at("La", -d), ca]])
    b = np.concatenate([cs.at("Lt", tau), cat])
    _check_cond(a, "gmm_diagonal")
    x = np.linalg.solve(a, b)
    lev, k = x[:q], x[q:]
    return float(mean_sigma2 - k.sum()), lev, k


def _pairs(q: int):
    """Lag pairs ``(tau1 > tau2)`` (1-based) in row-major order."""
    return [(i, j) for j in range(1, q + 1) for i in range(j + 1, q + 1)]


def gmm_offdiagonal(cs: CorrelationSet, k, L, q: int | None = None) -> np.ndarray:
    """Off-diagonal kernel from the four-point equations.

    For ``1 <= tau2 < tau1 <= q``::

        Dt(tau1, tau2) = L(tau2) Lc(tau1-tau2) + L(tau1) Lc(tau2-tau1)
            + 2 sum_{tau' > tau2} K(tau', tau2) [D(tau1-tau2, tau'-tau2)
                  + C1(tau1-tau') - C1(tau'-tau2) C1(tau1-tau2)]
            + sum_{tau' <= tau2} k(tau') D(tau1-tau', tau2-tau')

    Returns
    -------
    ndarray, shape (q, q)
        Symmetric matrix with ``k`` on the diagonal.
    """
    q = cs.q if q is None else q
    if cs.D is None or cs.Dt is None:
        raise ValueError("four-point correlations needed")
    k = np.asarray(k, dtype=float)[:q]
    lev = np.asarray(L, dtype=float)[:q]
    pairs = _pairs(q)
    col = {p: m for m, p in enumerate(pairs)}
    m = len(pairs)
    a = np.zeros((m, m))
    b = np.empty(m)

    def c1(x):
        return 1.0 if x == 0 else float(cs.at("C1", x))

    for row, (t1, t2) in enumerate(pairs):
        rhs = cs.Dt[t1, t2] - lev[t2 - 1] * cs.at("Lc", t1 - t2) - lev[t1 - 1] * cs.at("Lc", t2 - t1)
        for tp in range(1, t2 + 1):
            rhs -= k[tp - 1] * cs.D[t1 - tp, t2 - tp]
        b[row] = rhs
        for tp in range(t2 + 1, q + 1):
            a[row, col[(tp, t2)]] += 2 * (cs.D[t1 - t2, tp - t2] + c1(t1 - tp)
                                          - c1(tp - t2) * c1(t1 - t2))
    _check_cond(a, "gmm_offdiagonal")
    x = np.linalg.solve(a, b)
    kk = np.diag(k)
    for (t1, t2), v in zip(pairs, x):
        kk[t1 - 1, t2 - 1] = kk[t2 - 1, t1 - 1] = v
    return kk


# ---------------------------------------------------------------- s2(q) fit

def s2_curve(q, s_inf: float, alpha: float, g: float, q0: float):
    q = np.asarray(q, dtype=float)
    return s_inf + g * q ** (1 - alpha) / (alpha - 1) * np.exp(-q / q0)


@dataclass(frozen=True)
class S2Fit:
    s_inf: float
    alpha: float
    g: float
    q0: float
    residual: float
    trace: tuple = ()


def s2_fit(q, s2, n_starts: int = 8, seed=0) -> S2Fit:
    """Least-squares fit of ``s^2(q) = s_inf + g q^(1-alpha)/(alpha-1) e^(-q/q0)``.

    Multistart over ``n_starts`` random initial points; the best residual
    is returned.
    """
    q = np.asarray(q, dtype=float)
    y = np.asarray(s2, dtype=float)
    if q.size < 6:
        raise ValueError("need at least 6 points")
    rng = np.random.default_rng(seed)
    lo = np.array([-np.inf, 1.0 + 1e-6, 0.0, 1e-3])
    hi = np.array([np.inf, 4.0, np.inf, 1e6])
    span = max(np.ptp(y), 1e-12)
    best, trace = None, []
    for i in range(n_starts):
        x0 = np.array([y[-1], 1.05 + 0.6 * rng.random(), span * (0.05 + rng.random()),
                       q.max() * 10 ** rng.uniform(-1, 1)])
        if i == 0:
            x0 = np.array([y.min(), 1.1, 0.1 * span, q.max() / 2])
        try:
            res = optimize.least_squares(lambda p: s2_curve(q, *p) - y, x0, bounds=(lo, hi),
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except (ValueError, FloatingPointError):
            continue
        cost = float(np.sqrt(np.mean(res.fun**2)))
        trace.append(cost)
        if best is None or cost < best[1]:
            best = (res.x, cost)
    if best is None:
        raise RuntimeError(f"s2 fit failed for all starts: {trace}")
    x, cost = best
    return S2Fit(*map(float, x), cost, tuple(trace))


def kernel_from_s2_fit(s_inf: float, alpha: float, g: float, q0: float, q: int) -> np.ndarray:
    """Diagonal kernel implied by ``s^2(q) = 1 - sum_{tau<=q} k(tau)``, with
    ``s^2(0) = 1``."""
    s = s2_curve(np.arange(1, q + 1), s_inf, alpha, g, q0)
    return -np.diff(np.concatenate([[1.0], s]))


# ---------------------------------------------------------------- likelihood

def _loglike_terms(s2, r, nu):
    a2 = (nu - 2) * s2
    return 0.5 * (nu * np.log(a2) - (nu + 1) * np.log(a2 + r * r))


def student_loglike(model: QarchModel, returns, nu: float, normalized: bool = False) -> float:
    """Student log-likelihood per point.

    ``I = (1/2T) sum [nu ln a^2 - (nu+1) ln(a^2 + r^2)]`` with
    ``a^2 = (nu-2) sigma^2``; the first ``q`` points of each series are
    skipped.  ``normalized=True`` adds the ``nu``-dependent constant
    ``ln G((nu+1)/2) - ln G(nu/2) - ln(pi)/2`` needed to compare values of
    ``nu``.
    """
    if nu <= 2:
        raise ValueError("nu must exceed 2")
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    total, count = 0.0, 0
    for i, x in enumerate(r):
        s2 = sigma2_path(model, x)
        if np.any(s2 <= 0):
            bad = int(np.argmax(s2 <= 0)) + model.q
            raise ValueError(f"sigma^2 <= 0 at series {i}, index {bad}")
        total += _loglike_terms(s2, x[model.q:], nu).sum()
        count += s2.size
    out = total / count
    if normalized:
        out += special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(np.pi)
    return float(out)


@dataclass
class MLResult:
    """One-step maximum-likelihood update of the off-diagonal kernel."""

    K: np.ndarray
    se: np.ndarray
    gradient_norm: float
    gradient_norm_start: float
    hessian_eigenvalues: np.ndarray
    hessian: np.ndarray
    hessian_at_solution: np.ndarray
    n: int
    loglike_start: float
    loglike: float
    extra: dict = field(default_factory=dict)

    @property
    def hessian_change(self) -> float:
        return float(np.linalg.norm(self.hessian_at_solution - self.hessian)
                     / np.linalg.norm(self.hessian))


def _ml_design(model0: QarchModel, returns):
    """Base ``sigma^2`` at ``model0`` and features ``2 r_{t-i} r_{t-j}``."""
    q = model0.q
    pairs = _pairs(q)
    base, feats, obs = [], [], []
    for x in np.atleast_2d(np.asarray(returns, dtype=float)):
        lag = _lagged(x, q)
        base.append(sigma2_path(model0, x))
        feats.append(np.column_stack([2 * lag[:, i - 1] * lag[:, j - 1] for i, j in pairs]))
        obs.append(x[q:])
    return np.concatenate(base), np.vstack(feats), np.concatenate(obs), pairs


def one_step_ml(model0: QarchModel, returns, nu: float, step: float = 1e-4,
                iterations: int = 1) -> MLResult:
    """Newton step(s) on the off-diagonal entries of ``K``.

    The diagonal of ``K``, ``L`` and ``s^2`` stay fixed.  Gradient and
    Hessian of the pooled per-point likelihood are central differences with
    step ``step``.  Standard errors are ``sqrt(diag((-n H)^-1))``.

    Raises
    ------
    ValueError
        The Hessian at the starting point is not negative definite.
    """
    base, feats, r, pairs = _ml_design(model0, returns)
    n, m = feats.shape
    theta0 = np.array([model0.K[i - 1, j - 1] for i, j in pairs])
    # features are relative to model0, so sigma^2(theta) = base + X (theta - theta0)

    def ll(th):
        s2 = base + feats @ (th - theta0)
        if np.any(s2 <= 0):
            return -np.inf
        return _loglike_terms(s2, r, nu).mean()

    def grad_hess(th):
        e = np.eye(m) * step
        f0 = ll(th)
        g = np.array([(ll(th + e[i]) - ll(th - e[i])) / (2 * step) for i in range(m)])
        h = np.empty((m, m))
        for i in range(m):
            h[i, i] = (ll(th + e[i]) - 2 * f0 + ll(th - e[i])) / step**2
            for j in range(i + 1, m):
                h[i, j] = h[j, i] = (ll(th + e[i] + e[j]) - ll(th + e[i] - e[j])
                                     - ll(th - e[i] + e[j]) + ll(th - e[i] - e[j])) / (4 * step**2)
        return g, h

    g0, h0 = grad_hess(theta0)
    w = np.linalg.eigvalsh(h0)
    if not np.all(np.isfinite(w)) or w.max() >= 0:
        raise ValueError(f"Hessian not negative definite at the start (max eig {w.max():.3g})")
    th, g, h = theta0, g0, h0
    for _ in range(iterations):
        th = th - np.linalg.solve(h, g)
        g, h = grad_hess(th)
    cov = np.linalg.inv(-n * h)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    k_new = model0.K.copy()
    se_mat = np.full((model0.q, model0.q), np.nan)
    for (i, j), v, s in zip(pairs, th, se):
        k_new[i - 1, j - 1] = k_new[j - 1, i - 1] = v
        se_mat[i - 1, j - 1] = se_mat[j - 1, i - 1] = s
    return MLResult(k_new, se_mat, float(np.linalg.norm(g)), float(np.linalg.norm(g0)), w, h0, h,
                    n, float(ll(theta0)), float(ll(th)), extra={"pairs": pairs, "cov": cov})


# ---------------------------------------------------------------- kernels

def kernel_family(kind: str, params, q: int, diag=None) -> np.ndarray:
    """Structured kernel ``K``.

    Parameters
    ----------
    kind : {'arch', 'bb', 'zumbach', 'twoscale', 'longtrend'}
        * ``arch``: ``params`` is ``k`` (length q).
        * ``bb``: ``g_BB`` (length q); ``K(t', t'') = G[max(t', t'')]`` with
          ``G[t] = sum_{l >= t} g_BB(l)``.
        * ``zumbach``: ``g_Z`` (length ``q // 2``); the triangular form is
          symmetrized as ``(K + K') / 2``.
        * ``twoscale``: ``g1`` (q values) followed by ``g2`` (q - 1).
        * ``longtrend``: diagonal ``k`` (q values) followed by ``g_LT``
          (q - 1); ``K(1, t > 1) = g_LT(t - 1)``.
    params : array_like
    q : int
    diag : array_like, optional
        Replaces the diagonal (ARCH part) for ``bb`` and ``zumbach``.
    """
    p = np.asarray(params, dtype=float).ravel()
    kind = kind.lower()
    need = {"arch": q, "bb": q, "zumbach": q // 2, "twoscale": 2 * q - 1,
            "longtrend": 2 * q - 1}
    if kind not in need:
        raise ValueError(f"unknown kernel family {kind!r}")
    if p.size != need[kind]:
        raise ValueError(f"{kind} needs {need[kind]} parameters, got {p.size}")
    tau = np.arange(1, q + 1)
    if kind == "arch":
        k = np.diag(p)
    elif kind == "bb":
        big_g = np.cumsum(p[::-1])[::-1]
        k = big_g[np.maximum.outer(tau, tau) - 1]
    elif kind == "zumbach":
        k = np.zeros((q, q))
        for i in range(1, q + 1):
            for j in range(i + 1, q + 1):
                lo, hi = max(i, -(-j // 2)), min(j - 1, q // 2)
                k[i - 1, j - 1] = p[lo - 1:hi].sum() if hi >= lo else 0.0
        k = 0.5 * (k + k.T)
    elif kind == "twoscale":
        g1, g2 = p[:q], np.concatenate([[0.0], p[q:], [0.0]])  # g2[i+1] = g2(i)
        k = np.diag(g1 + g2[1:] + g2[:-1])
        k[tau[:-1] - 1, tau[:-1]] = k[tau[:-1], tau[:-1] - 1] = p[q:]
    else:
        k = np.diag(p[:q])
        k[0, 1:] = k[1:, 0] = p[q:]
    if diag is not None:
        if kind not in ("bb", "zumbach"):
            raise ValueError("diag override applies to bb and zumbach only")
        k = k.copy()
        np.fill_diagonal(k, np.asarray(diag, dtype=float))
    return k


def spectral(k) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors (columns) of a symmetric kernel."""
    w, v = linalg.eigh(np.asarray(k, dtype=float))
    return w[::-1], v[:, ::-1]


def _first_roots(f, lo, hi, n, npts=200000):
    x = np.geomspace(lo, hi, npts)
    with np.errstate(all="ignore"):
        y = f(x)
    roots = []
    ok = np.isfinite(y)
    for i in np.flatnonzero(ok[:-1] & ok[1:] & (np.sign(y[:-1]) != np.sign(y[1:]))):
        roots.append(optimize.brentq(f, x[i], x[i + 1], xtol=1e-14))
        if len(roots) == n:
            break
    if len(roots) < n:
        raise ArithmeticError("not enough eigenvalue roots found")
    return np.array(roots)


def _unit(v):
    return v / np.linalg.norm(v)


def bb_linear_spectrum(g: float, q: int, n_modes: int = 3):
    """Continuum spectrum of ``K = G[max]`` with ``G[t] = g (1 - t/q)``.

    ``lambda_n = g q / (pi^2 (n - 1/2)^2)``, ``v_n(t) ~ cos((n - 1/2) pi t / q)``.
    """
    n = np.arange(1, n_modes + 1)
    lam = g * q / np.pi**2 / (n - 0.5) ** 2
    t = np.arange(1, q + 1)
    vec = np.column_stack([_unit(np.cos((j - 0.5) * np.pi * t / q)) for j in n])
    return lam, vec


def bb_exponential_spectrum(g: float, a: float, q: int, n_modes: int = 3):
    """Continuum spectrum of ``K = G[max]`` with ``G[t] = g e^{-a t}``.

    Eigenfunctions are combinations of ``J_0`` and ``Y_0`` in the variable
    ``gamma e^{-a t / 2}``; ``lambda = 4 g / (a gamma^2)``.  The continuum
    interval is ``[1/2, q + 1/2]`` and discrete vectors are increments of
    the eigenfunction over unit cells.
    """
    lo, up = 0.5, q + 0.5

    def e(gm, t):
        return gm * np.exp(-a * t / 2)

    def f(gm):
        return (special.y0(e(gm, lo)) * special.jv(2, e(gm, up))
                - special.j0(e(gm, lo)) * special.yv(2, e(gm, up)))

    tr = g * np.exp(-a * np.arange(1, q + 1)).sum()
    gmin = 0.999 * np.sqrt(4 * g / (a * tr))
    gam = _first_roots(f, gmin, 500.0, n_modes)
    lam = 4 * g / (a * gam**2)
    tt = np.arange(0, q + 1) + lo
    vec = np.column_stack([
        _unit(np.diff(special.y0(e(gm, lo)) * special.j0(e(gm, tt))
                      - special.j0(e(gm, lo)) * special.y0(e(gm, tt)))) for gm in gam])
    return lam, vec


def bb_powerlaw_spectrum(g: float, alpha: float, q: int, n_modes: int = 3):
    """Continuum spectrum of ``K = G[max]`` with ``G[t] = g t^-alpha``.

    Eigenfunctions are ``sqrt(t)`` times Bessel functions of order
    ``1/(1-alpha)`` in ``gamma t^((1-alpha)/2)``;
    ``lambda = (2/|1-alpha|)^2 g alpha / gamma^2``.  Roots are searched
    above the value implied by ``lambda <= Tr K``.
    """
    if alpha == 1:
        raise ValueError("alpha = 1 is degenerate")
    lo, up = 0.5, q + 0.5
    order = 1.0 / (1 - alpha)
    c = (1 - alpha) / 2
    pref = (2 / abs(1 - alpha)) ** 2 * g * alpha

    def f(gm):
        return (special.yv(order, gm * lo**c) * special.jv(order - 2, gm * up**c)
                - special.jv(order, gm * lo**c) * special.yv(order - 2, gm * up**c))

    tr = g * np.sum(np.arange(1, q + 1, dtype=float) ** -alpha)
    gam = _first_roots(f, 0.999 * np.sqrt(pref / tr), 500.0, n_modes)
    lam = pref / gam**2
    tt = np.arange(0, q + 1) + lo

    def v(gm, t):
        return np.sqrt(t) * (special.yv(order, gm * lo**c) * special.jv(order, gm * t**c)
                             - special.jv(order, gm * lo**c) * special.yv(order, gm * t**c))

    vec = np.column_stack([_unit(np.diff(v(gm, tt))) for gm in gam])
    return lam, vec


# ---------------------------------------------------------------- TRI

def tri_measure(returns, sigma2, tau_max: int, L=None, Lc=None) -> dict:
    """Time-reversal asymmetry ``Delta(tau) = sum_{tau'<=tau} [C2t(tau') - C2t(-tau')]``.

    Parameters
    ----------
    returns, sigma2 : array_like
        Aligned series or panels.
    tau_max : int
    L : array_like, optional
        Leverage kernel; with ``Lc`` (the leverage correlation on lags
        ``-2 tau_max..2 tau_max``) the lowest-order leverage contribution
        ``sum_{tau'<=tau} L(tau') [Lc(tau'-tau) - Lc(tau'+tau)]`` is added.

    Returns
    -------
    dict
        ``tau``, ``delta``, ``c2t`` (lags ``-tau_max..tau_max``) and
        optionally ``leverage``.
    """
    r = np.atleast_2d(np.asarray(returns, dtype=float))
    s = np.atleast_2d(np.asarray(sigma2, dtype=float))
    if r.shape != s.shape:
        raise ValueError("returns and sigma2 must be aligned")
    w0, w1 = tau_max, r.shape[1] - tau_max
    cs = s - s[:, w0:w1].mean(axis=1, keepdims=True)
    c2t = _one_lag(cs, r * r, tau_max, w0, w1)
    tau = np.arange(1, tau_max + 1)
    delta = np.cumsum(c2t[tau_max + tau] - c2t[tau_max - tau])
    out = {"tau": tau, "delta": delta, "c2t": c2t}
    if L is not None and Lc is not None:
        lev = np.asarray(L, dtype=float)
        lc = np.asarray(Lc, dtype=float)
        h = (lc.size - 1) // 2
        term = np.array([sum(lev[tp - 1] * (lc[h + tp - t] - lc[h + tp + t])
                             for tp in range(1, min(t, lev.size) + 1)) for t in tau])
        out["leverage"] = term
    return out


def with_offdiagonal(model: QarchModel, i: int, j: int, value: float) -> QarchModel:
    """Copy of ``model`` with ``K(i, j) = K(j, i) = value`` (1-based lags)."""
    k = model.K.copy()
    k[i - 1, j - 1] = k[j - 1, i - 1] = value
    return replace(model, K=k)


def squared_return_correlation(returns, lags) -> np.ndarray:
    """``C2(tau) = <(r_t^2 - <r^2>) r_{t-tau}^2>`` pooled, at selected lags."""
    r2 = np.atleast_2d(np.asarray(returns, dtype=float)) ** 2
    lags = np.asarray(lags, dtype=int)
    c = r2 - r2.mean(axis=1, keepdims=True)
    return np.array([np.mean(c[:, l:] * r2[:, :r2.shape[1] - l]) for l in lags])


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (positive ``y`` only)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = y > 0
    if ok.sum() < 3:
        raise ValueError("fewer than three positive points")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])
