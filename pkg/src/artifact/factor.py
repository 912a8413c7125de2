"""Non-Gaussian multi-factor model.

Returns are modelled as ``r_i = sum_k W_ki f_k + e_i`` with unit-variance,
mutually uncorrelated factors ``f`` and residuals ``e``.  Volatilities of
factors and residuals share a common log-amplitude driver ``omega_0``
(possibly non-Gaussian) plus idiosyncratic Gaussian drivers:

    f_k = eps_k * exp(A_k0 omega_0 + A_kk omega_k)
    e_j = eta_j * exp(B_j0 omega_0 + B_jj omega~_j)

The driver ``omega_0`` is described through its cumulant-truncated moment
generating function ``M(p) = exp(p^2/2 + zeta0 p^3/6 + kappa0 p^4/24)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

__all__ = [
    "FactorModel",
    "RiskReport",
    "fit_linear_weights",
    "pca_weights",
    "offdiag_loss",
    "rank1_perturbative",
    "rank1_loss",
    "reconstruct_factors",
    "logabs_correlations",
    "mgf_omega0",
    "phi0",
    "gamma_p",
    "predict_logabs",
    "fit_vol_params",
    "predict_quadratic_correlations",
    "beta_shapes",
    "sample_omega0",
    "simulate_factor_panel",
    "markowitz_weights",
    "markowitz_harness",
    "P_GRID",
]

#: eight exponents in [0.2, 2] used for the stage-1 fit
P_GRID = np.array([0.2, 0.4, 0.6, 0.8, 1.0, 1.25, 1.5, 2.0])


@dataclass
class FactorModel:
    """Linear weights plus volatility-driver parameters.

    Attributes
    ----------
    W : ndarray, shape (M, N)
    A0, Akk : ndarray, shape (M,)
        Common and idiosyncratic log-vol exposures of the factors.
    B0, Bjj : ndarray, shape (N,)
        Same for the residuals.
    zeta0, kappa0 : float
        Skewness and excess kurtosis of ``omega_0``.
    A0p, B0p : ndarray or None
        Exposures to a second (Gaussian) common driver ``omega_0'``.
    """

    W: np.ndarray
    A0: np.ndarray | None = None
    Akk: np.ndarray | None = None
    B0: np.ndarray | None = None
    Bjj: np.ndarray | None = None
    zeta0: float = 0.0
    kappa0: float = 0.0
    A0p: np.ndarray | None = None
    B0p: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        m, n = self.W.shape
        if np.any(np.sum(self.W**2, axis=0) > 1 + 1e-9):
            raise ValueError("sum_k W_ki^2 must not exceed 1")
        for name, size in (("A0", m), ("Akk", m), ("B0", n), ("Bjj", n)):
            v = getattr(self, name)
            v = np.zeros(size) if v is None else np.asarray(v, dtype=float).ravel()
            if v.size != size:
                raise ValueError(f"{name} must have length {size}")
            setattr(self, name, v)
        if np.any(self.Akk < 0) or np.any(self.Bjj < 0):
            raise ValueError("A_kk and B_jj must be non-negative")
        for name, size in (("A0p", m), ("B0p", n)):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).ravel())

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    @property
    def drivers(self) -> int:
        return 1 if self.A0p is None else 2

    @property
    def residual_variance(self) -> np.ndarray:
        return np.clip(1.0 - np.sum(self.W**2, axis=0), 0.0, None)

    def linear_correlation(self) -> np.ndarray:
        c = self.W.T @ self.W
        np.fill_diagonal(c, 1.0)
        return c

    def to_dict(self) -> dict:
        d = {"W": self.W.tolist(), "A0": self.A0.tolist(), "Akk": self.Akk.tolist(),
             "B0": self.B0.tolist(), "Bjj": self.Bjj.tolist(),
             "zeta0": float(self.zeta0), "kappa0": float(self.kappa0)}
        if self.A0p is not None:
            d["A0p"] = self.A0p.tolist()
        if self.B0p is not None:
            d["B0p"] = self.B0p.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        keys = ("W", "A0", "Akk", "B0", "Bjj", "zeta0", "kappa0", "A0p", "B0p")
        return cls(**{k: d[k] for k in keys if k in d})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------------------
# linear weights


def _check_corr(corr) -> np.ndarray:
    c = np.asarray(corr, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("corr must be square")
    if not np.allclose(c, c.T, atol=1e-10):
        raise ValueError("corr must be symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-8):
        raise ValueError("corr must have unit diagonal")
    return 0.5 * (c + c.T)


def pca_weights(corr, m: int) -> np.ndarray:
    """Eigenvalue-clipping weights ``Lambda_M^{1/2} V_M'`` (shape ``(m, N)``)."""
    lam, vec = np.linalg.eigh(np.asarray(corr, dtype=float))
    idx = np.argsort(lam)[::-1][:m]
    return np.sqrt(np.clip(lam[idx], 0, None))[:, None] * vec[:, idx].T


def offdiag_loss(corr, W) -> float:
    """Sum of squared off-diagonal residuals of ``corr - W'W``."""
    r = np.asarray(corr) - W.T @ W
    np.fill_diagonal(r, 0.0)
    return float(np.sum(r * r))


def _project_rows(W):
    # keep residual variances non-negative: column norms at most one
    nrm = np.sqrt(np.sum(W * W, axis=0))
    return W / np.maximum(nrm, 1.0)


def fit_linear_weights(corr, m: int, init="pca", max_iter: int = 10_000,
                       tol: float = 1e-10):
    """Fit ``W`` to the off-diagonal content of a correlation matrix.

    Projected gradient descent (Barzilai-Borwein step with backtracking)
    on ``sum_{i != j} (corr_ij - (W'W)_ij)^2`` subject to
    ``sum_k W_ki^2 <= 1``.

    Parameters
    ----------
    corr : array_like, shape (N, N)
        Symmetric with unit diagonal.
    m : int
        Number of factors, ``m < N``.
    init : {"pca"} or ndarray
        Starting point; ``"pca"`` uses eigenvalue clipping.

    Returns
    -------
    W : ndarray, shape (m, N)
    W_pca : ndarray, shape (m, N)
    info : dict
        ``loss``, ``loss_pca``, ``iterations``, ``converged``.
    """
    c = _check_corr(corr)
    n = c.shape[0]
    if not 0 < m < n:
        raise ValueError("need 0 < M < N")
    w_pca = pca_weights(c, m)
    W = _project_rows(w_pca.copy() if isinstance(init, str) else np.asarray(init, float).copy())
    if W.shape != (m, n):
        raise ValueError(f"init must have shape {(m, n)}")

    def f_and_g(w):
        r = c - w.T @ w
        np.fill_diagonal(r, 0.0)
        return float(np.sum(r * r)), -4.0 * w @ r

    f, g = f_and_g(W)
    step = 1.0 / max(4.0 * np.linalg.norm(W) ** 2 + 1.0, 1.0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            w_new = _project_rows(W - step * g)
            f_new, g_new = f_and_g(w_new)
            if f_new <= f or step < 1e-16:
                break
            step *= 0.5
        s, y = (w_new - W).ravel(), (g_new - g).ravel()
        done = abs(f - f_new) <= tol * max(1.0, f) or f_new < 1e-20
        W, f, g = w_new, f_new, g_new
        if done:
            converged = True
            break
        sy = s @ y
        step = (s @ s) / sy if sy > 0 else 2 * step
    if not converged:
        warnings.warn(f"fit_linear_weights did not converge: loss {f:.3e} after {it} "
                      "iterations", RuntimeWarning, stacklevel=2)
    info = {"loss": f, "loss_pca": offdiag_loss(c, w_pca), "iterations": it,
            "converged": converged}
    return W, w_pca, info


def rank1_perturbative(C, eps: float = 1.0, gap_tol: float = 1e-8) -> np.ndarray:
    """First-order one-factor loadings from the top eigenpair of ``C``.

    ``beta / sqrt(lam) = [1 - eps/2 (sum V^4 + 1/lam)] V + eps V^3``, with
    the eigenvector oriented so that ``sum V > 0``.

    Raises
    ------
    ValueError
        If the top eigenvalue is degenerate.
    """
    lam, vec = np.linalg.eigh(np.asarray(C, dtype=float))
    if lam[-1] - lam[-2] <= gap_tol * max(abs(lam[-1]), 1.0):
        raise ValueError("top eigenvalue is degenerate")
    l1, v = lam[-1], vec[:, -1]
    if v.sum() < 0:
        v = -v
    m4 = np.sum(v**4)
    return np.sqrt(l1) * ((1 - 0.5 * eps * (m4 + 1 / l1)) * v + eps * v**3)


def rank1_loss(C, beta) -> float:
    """Mean squared off-diagonal error of ``C - beta beta'``."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    r = C - np.outer(beta, beta)
    np.fill_diagonal(r, 0.0)
    return float(np.sum(r * r) / (n * (n - 1)))


def reconstruct_factors(panel, W):
    """Date-by-date GLS regression ``R_t = F_t W + E_t``.

    Residual covariance is ``diag(1 - sum_k W_ki^2)``, floored at 1e-8.

    Returns
    -------
    F : ndarray, shape (T, M)
    E : ndarray, shape (T, N)
    """
    R = np.asarray(panel, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if R.ndim != 2 or R.shape[1] != W.shape[1]:
        raise ValueError("panel must be T x N with N matching W")
    if np.linalg.matrix_rank(W) < W.shape[0]:
        raise ValueError("W is rank deficient")
    psi_inv = 1.0 / np.maximum(1.0 - np.sum(W**2, axis=0), 1e-8)
    A = (W * psi_inv) @ W.T
    F = np.linalg.solve(A, (W * psi_inv) @ R.T).T
    return F, R - F @ W


def logabs_correlations(F, E, p_list) -> dict:
    """Log-absolute correlations ``(1/p^2) ln(<|xy|^p> / (<|x|^p><|y|^p>))``.

    Returns
    -------
    dict
        Maps each ``p`` to ``(ff, ee, fe)`` with shapes ``(M, M)``,
        ``(N, N)`` and ``(M, N)``.  Diagonal entries use ``x = y``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    lf = np.log(np.maximum(np.abs(F), 1e-12))
    le = np.log(np.maximum(np.abs(E), 1e-12))
    t = F.shape[0]
    out = {}
    for p in np.atleast_1d(p_list):
        p = float(p)
        xf, xe = np.exp(p * lf), np.exp(p * le)
        mf, me = xf.mean(axis=0), xe.mean(axis=0)

        def corr(x, y, mx, my):
            return np.log((x.T @ y / t) / np.outer(mx, my)) / p**2

        out[p] = (corr(xf, xf, mf, mf), corr(xe, xe, me, me), corr(xf, xe, mf, me))
    return out


# ---------------------------------------------------------------------------
# volatility drivers


def mgf_omega0(p, zeta0: float = 0.0, kappa0: float = 0.0):
    """Cumulant-truncated MGF of ``omega_0``."""
    p = np.asarray(p, dtype=float)
    return np.exp(p**2 / 2 + zeta0 * p**3 / 6 + kappa0 * p**4 / 24)


def phi0(a, b, p, zeta0: float = 0.0, kappa0: float = 0.0):
    """``(1/p^2) ln Phi_0(pa, pb)`` for the truncated MGF."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return (a * b + 0.5 * p * zeta0 * (a * a * b + a * b * b)
            + p * p / 12 * kappa0 * (2 * a**3 * b + 3 * a * a * b * b + 2 * a * b**3))


def gamma_p(p):
    """Normalized log ``2p``-absolute moment of a standard Gaussian."""
    p = np.asarray(p, dtype=float)
    val = (0.5 * np.log(np.pi) + special.gammaln(0.5 + p)
           - 2 * special.gammaln((1 + p) / 2)) / p**2
    return val if val.ndim else float(val)


def predict_logabs(model: FactorModel, p: float):
    """Model log-abs correlations ``(ff, ee, fe)`` at exponent ``p``."""
    z, k = model.zeta0, model.kappa0
    A, B = model.A0, model.B0
    g = gamma_p(p)
    ff = phi0(A[:, None], A[None, :], p, z, k) + np.diag(g + model.Akk**2)
    ee = phi0(B[:, None], B[None, :], p, z, k) + np.diag(g + model.Bjj**2)
    fe = phi0(A[:, None], B[None, :], p, z, k)
    if model.A0p is not None:
        ff = ff + np.outer(model.A0p, model.A0p)
        if model.B0p is not None:
            fe = fe + np.outer(model.A0p, model.B0p)
    if model.B0p is not None:
        ee = ee + np.outer(model.B0p, model.B0p)
    return ff, ee, fe


def _stage1_unpack(x, m, drivers):
    a0, akk = x[:m], np.abs(x[m:2 * m])
    z, k = x[2 * m], x[2 * m + 1]
    ap = x[2 * m + 2:3 * m + 2] if drivers == 2 else None
    return a0, akk, z, k, ap


_RIDGE = 1e-4


def _stage1_loss(x, obs, m, drivers, penalty):
    a0, akk, z, k, ap = _stage1_unpack(x, m, drivers)
    loss = 0.0
    for p, ff in obs.items():
        pred = phi0(a0[:, None], a0[None, :], p, z, k) + np.diag(gamma_p(p) + akk**2)
        if ap is not None:
            pred = pred + np.outer(ap, ap)
        loss += np.sum((ff - pred) ** 2)
    if ap is not None:
        loss += penalty * (a0 @ ap) ** 2
    # zeta0, kappa0 are unidentified when A vanishes
    return loss + _RIDGE * (z * z + k * k)


def _minimize(fun, x0, args, bounds=None, jac=None):
    res = optimize.minimize(fun, x0, args=args, method="L-BFGS-B", bounds=bounds, jac=jac,
                            options={"maxiter": 10_000, "ftol": 1e-14, "gtol": 1e-10})
    return res


def fit_vol_params(F, E, p_grid=P_GRID, drivers: int = 1, p_res: float = 1.0,
                   W=None, joint_residuals: bool = True, n_starts: int = 8,
                   penalty: float = 1.0, seed=0) -> FactorModel:
    """Calibrate volatility drivers by log-abs moment matching.

    Stage 1 fits ``(A_k0, A_kk, zeta0, kappa0)`` jointly over ``p_grid`` on
    the factor-factor curves, from the top-eigenvector prior plus
    ``n_starts - 1`` perturbed starts.  Stage 2 fits ``(B_j0, B_jj)`` at
    ``p_res`` on factor-residual (and, with ``joint_residuals``,
    residual-residual) correlations.

    Parameters
    ----------
    F, E : ndarray
        Reconstructed factors ``(T, M)`` and residuals ``(T, N)``.
    drivers : {1, 2}
        With two drivers a Gaussian ``omega_0'`` is added and
        ``(sum_k A_k0 A_k0')^2`` is penalized.
    W : ndarray, optional
        Linear weights stored in the returned model (zeros otherwise).

    Returns
    -------
    FactorModel
        ``extra`` holds stage losses, the prior loss and gradient norms.
    """
    if drivers not in (1, 2):
        raise ValueError("drivers must be 1 or 2")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    m, n = F.shape[1], E.shape[1]
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(p_grid <= 0):
        raise ValueError("p must be positive")
    grid = sorted(set(p_grid.tolist()) | {float(p_res)})
    obs = logabs_correlations(F, E, grid)
    obs1 = {p: obs[p][0] for p in p_grid.tolist()}

    # prior: top eigenvector of the off-diagonal p=1 (or nearest) matrix
    p_ref = min(obs1, key=lambda p: abs(p - 1.0))
    c = obs1[p_ref].copy()
    diag = np.diag(c).copy()
    np.fill_diagonal(c, 0.0)
    if m > 1:
        lam, vec = np.linalg.eigh(c)
        v = vec[:, -1] * np.sqrt(max(lam[-1], 0.0))
    else:
        v = np.zeros(1)
    if v.sum() < 0:
        v = -v
    akk0 = np.sqrt(np.clip(diag - v**2 - gamma_p(p_ref), 0, None))
    x_prior = np.concatenate([v, akk0, [0.0, 0.0]] + ([0.1 * np.ones(m)] if drivers == 2 else []))
    bounds = [(None, None)] * m + [(0, None)] * m + [(-5, 5), (-3, 10)] + \
        ([(None, None)] * m if drivers == 2 else [])
    rng = np.random.default_rng(seed)
    args = (obs1, m, drivers, penalty)
    best = None
    for s in range(max(1, n_starts)):
        x0 = x_prior if s == 0 else x_prior + 0.1 * rng.standard_normal(x_prior.size)
        x0 = np.array([np.clip(xi, lo if lo is not None else -np.inf, hi if hi is not None else np.inf)
                       for xi, (lo, hi) in zip(x0, bounds)])
        res = _minimize(_stage1_loss, x0, args, bounds)
        if best is None or res.fun < best.fun:
            best = res
    if not best.success:
        warnings.warn(f"stage-1 optimizer stalled: {best.message}; |grad| = "
                      f"{np.linalg.norm(best.jac):.2e}", RuntimeWarning, stacklevel=2)
    a0, akk, z, k, ap = _stage1_unpack(best.x, m, drivers)
    # omega_0 -> -omega_0 flips A, B and zeta0 together
    sgn = 1.0 if a0.sum() >= 0 else -1.0
    a0, z = sgn * a0, sgn * z
    if ap is not None and ap.sum() < 0:
        ap = -ap

    ff_r, ee_r, fe_r = obs[float(p_res)]

    def dphi(a, b):
        # d phi0(a, b) / d b
        return (a + 0.5 * p_res * z * (a * a + 2 * a * b)
                + p_res**2 / 12 * k * (2 * a**3 + 6 * a * a * b + 6 * a * b * b))

    def loss2(x):
        b0, bjj = x[:n], x[n:2 * n]
        bp = x[2 * n:3 * n] if drivers == 2 else None
        pf = phi0(a0[:, None], b0[None, :], p_res, z, k)
        if bp is not None:
            pf = pf + np.outer(ap, bp)
        rf = fe_r - pf
        val = np.sum(rf * rf)
        gb = -2 * np.sum(rf * dphi(a0[:, None], b0[None, :]), axis=0)
        gj = np.zeros(n)
        gp = -2 * ap @ rf if bp is not None else None
        if joint_residuals:
            pe = phi0(b0[:, None], b0[None, :], p_res, z, k) + np.diag(gamma_p(p_res) + bjj**2)
            if bp is not None:
                pe = pe + np.outer(bp, bp)
            re = ee_r - pe
            val += np.sum(re * re)
            gb += -4 * np.sum(re * dphi(b0[None, :], b0[:, None]), axis=1)
            gj = -4 * np.diag(re) * bjj
            if bp is not None:
                gp += -4 * re @ bp
        grad = np.concatenate([gb, gj] + ([gp] if bp is not None else []))
        return val, grad

    # prior for B from the factor-residual rows (least squares on ab)
    denom = max(a0 @ a0, 1e-12)
    b_init = a0 @ fe_r / denom if m > 0 else np.zeros(n)
    bjj_init = np.sqrt(np.clip(np.diag(ee_r) - b_init**2 - gamma_p(p_res), 0, None))
    x2 = np.concatenate([b_init, bjj_init] + ([np.zeros(n)] if drivers == 2 else []))
    bounds2 = [(None, None)] * n + [(0, None)] * n + ([(None, None)] * n if drivers == 2 else [])
    res2 = _minimize(loss2, x2, (), bounds2, jac=True)
    if not res2.success:
        warnings.warn(f"stage-2 optimizer stalled: {res2.message}; |grad| = "
                      f"{np.linalg.norm(res2.jac):.2e}", RuntimeWarning, stacklevel=2)
    b0, bjj = res2.x[:n], res2.x[n:2 * n]
    bp = res2.x[2 * n:] if drivers == 2 else None
    Wm = np.zeros((m, n)) if W is None else W
    return FactorModel(Wm, a0, akk, b0, bjj, float(z), float(k), ap, bp,
                       extra={"stage1_loss": float(best.fun),
                              "prior_loss": float(_stage1_loss(x_prior, *args)),
                              "stage2_loss": float(res2.fun),
                              "grad_norm": float(np.linalg.norm(best.jac))})


def predict_quadratic_correlations(model: FactorModel) -> np.ndarray:
    """Model ``<r_i^2 r_j^2>`` for Gaussian ``eps`` and ``eta``.

    Single-driver model only; ``Phi_0(a, b; 2) = M(2a+2b) / (M(2a) M(2b))``
    and ``Phi_G(a, b; 2) = exp(4ab)``.
    """
    W = model.W
    z, k = model.zeta0, model.kappa0
    A, B = model.A0, model.B0

    def Phi0(a, b):
        return (mgf_omega0(2 * (a + b), z, k)
                / (mgf_omega0(2 * a, z, k) * mgf_omega0(2 * b, z, k)))

    W2 = W**2
    res = model.residual_variance
    m, n = W.shape
    pff = Phi0(A[:, None], A[None, :]) * np.where(np.eye(m, dtype=bool),
                                                  np.exp(4 * model.Akk**2)[:, None], 1.0)
    # term 1: sum_kl (W2_ki W2_lj + 2 W_ki W_kj W_li W_lj) Pff_kl
    t1 = W2.T @ pff @ W2
    t1 += 2 * np.einsum("ki,kj,li,lj,kl->ij", W, W, W, W, pff, optimize=True)
    pfe = Phi0(A[:, None], B[None, :])  # (m, n): Phi0(A_k, B_i)
    cross = np.einsum("kj,ki->ij", W2, pfe)  # sum_k W2_kj Phi0(A_k, B_i)
    eye = np.eye(n)
    fac = 1 + 2 * eye
    t2 = fac * res[:, None] * cross
    t3 = fac * res[None, :] * cross.T
    pee = Phi0(B[:, None], B[None, :])
    pee = np.where(eye.astype(bool), 3 * np.exp(4 * model.Bjj**2)[:, None] * pee, pee)
    t4 = np.outer(res, res) * pee
    return t1 + t2 + t3 + t4


# ---------------------------------------------------------------------------
# simulation


def beta_shapes(zeta0: float, kappa0: float):
    """Beta shape parameters whose standardized law has skewness ``zeta0``
    and excess kurtosis ``kappa0``.

    Raises
    ------
    ValueError
        Outside the Beta (Pearson type I) region
        ``zeta0^2 - 2 < kappa0 < 1.5 zeta0^2``.
    """
    b1, b2 = zeta0**2, 3.0 + kappa0
    den = 6 + 3 * b1 - 2 * b2
    num = 6 * (b2 - b1 - 1)
    if den <= 0 or num <= 0:
        raise ValueError("moments outside the Beta family")
    r = num / den
    d = (r + 2) * np.sqrt(b1) / np.sqrt((r + 2) ** 2 * b1 + 16 * (r + 1))
    lo, hi = 0.5 * r * (1 - d), 0.5 * r * (1 + d)
    return (lo, hi) if zeta0 >= 0 else (hi, lo)


def sample_omega0(size, zeta0: float, kappa0: float, rng) -> np.ndarray:
    """Standardized ``omega_0`` draws: Gaussian when both cumulants vanish,
    otherwise a Beta law matched to the first four moments."""
    if abs(zeta0) < 1e-12 and abs(kappa0) < 1e-12:
        return rng.standard_normal(size)
    a, b = beta_shapes(zeta0, kappa0)
    x = rng.beta(a, b, size)
    mean = a / (a + b)
    sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    return (x - mean) / sd


def simulate_factor_panel(model: FactorModel, t: int, seed=None, return_parts: bool = False):
    """Simulate ``t`` dates of the model with Gaussian ``eps`` and ``eta``.

    Factor and residual noises are scaled with the truncated MGF so that
    ``<f_k^2> = 1`` and ``<e_i^2> = 1 - sum_k W_ki^2``.
    """
    rng = np.random.default_rng(seed)
    m, n = model.W.shape
    z, k = model.zeta0, model.kappa0
    w0 = sample_omega0(t, z, k, rng)[:, None]
    lf = model.A0 * w0 + model.Akk * rng.standard_normal((t, m))
    le = model.B0 * w0 + model.Bjj * rng.standard_normal((t, n))
    norm_f = mgf_omega0(2 * model.A0, z, k) * np.exp(2 * model.Akk**2)
    norm_e = mgf_omega0(2 * model.B0, z, k) * np.exp(2 * model.Bjj**2)
    if model.A0p is not None or model.B0p is not None:
        w1 = rng.standard_normal((t, 1))
        if model.A0p is not None:
            lf = lf + model.A0p * w1
            norm_f = norm_f * np.exp(2 * model.A0p**2)
        if model.B0p is not None:
            le = le + model.B0p * w1
            norm_e = norm_e * np.exp(2 * model.B0p**2)
    F = rng.standard_normal((t, m)) * np.exp(lf) / np.sqrt(norm_f)
    E = (rng.standard_normal((t, n)) * np.exp(le)
         * np.sqrt(model.residual_variance / norm_e))
    R = F @ model.W + E
    return (R, F, E) if return_parts else R


# ---------------------------------------------------------------------------
# Markowitz harness


@dataclass
class RiskReport:
    """Per-window in-sample and out-of-sample quadratic risks."""

    scheme: str
    M: int | None
    alpha: float | None
    q: float
    tau: np.ndarray
    is_risk: np.ndarray
    os_risk: np.ndarray
    rmt_is: float
    rmt_os: float
    extra: dict = field(default_factory=dict)

    @property
    def mean_is(self) -> float:
        return float(self.is_risk.mean())

    @property
    def mean_os(self) -> float:
        return float(self.os_risk.mean())


def markowitz_weights(rho, g, ridge: float = 1e-8) -> np.ndarray:
    """``rho^-1 g / (g' rho^-1 g)``, adding ``ridge`` to the diagonal when
    ``rho`` is singular."""
    rho = np.asarray(rho, dtype=float)
    try:
        x = linalg.cho_solve(linalg.cho_factor(rho), g)
    except np.linalg.LinAlgError:
        warnings.warn("singular correlation matrix: ridge fallback", RuntimeWarning,
                      stacklevel=2)
        x = np.linalg.solve(rho + ridge * np.eye(rho.shape[0]), g)
    return x / (g @ x)


_SCHEMES = ("empirical", "clipped", "multifactor", "gaussianmf", "true")


def _scheme_corr(scheme, x_is, m, true_corr, target, sim_t, rng, model_fn):
    t, n = x_is.shape
    emp = x_is.T @ x_is / t
    if scheme == "empirical":
        return emp
    if scheme == "true":
        return np.asarray(true_corr, dtype=float)
    if scheme == "clipped":
        w = pca_weights(emp, m)
        c = w.T @ w
        if m < n:
            np.fill_diagonal(c, 1.0)
        return c
    d = np.sqrt(np.diag(emp))
    corr = emp / np.outer(d, d)
    if m >= n:
        return corr
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        W, _, _ = fit_linear_weights(corr, m, max_iter=2000, tol=1e-8)
    if target == "linear":
        c = W.T @ W
        np.fill_diagonal(c, 1.0)
        return c
    # absolute returns: sample correlations of a long simulated panel
    if scheme == "gaussianmf":
        model = FactorModel(W)
    elif model_fn is None:
        raise ValueError("absolute multifactor scheme needs model_fn")
    else:
        model = model_fn(x_is, W)
    y = _absolute_transform(simulate_factor_panel(model, sim_t, rng))
    return y.T @ y / sim_t


def _absolute_transform(R):
    a = np.abs(R)
    a = a - a.mean(axis=0)
    return a / np.sqrt(np.mean(a * a, axis=0))


def markowitz_harness(panel, scheme: str = "empirical", M: int | None = None,
                      t_is: int = 524, t_os: int = 59, n_windows: int | None = None,
                      target: str = "linear", true_corr=None, model_fn=None,
                      sim_t: int = 20_000, seed=None) -> RiskReport:
    """Sliding-window in-sample/out-of-sample risk of Markowitz portfolios.

    Windows start at 0-based index ``tau = t_is + n t_os`` so the
    out-of-sample segments ``tau+1 .. tau+t_os`` never overlap.  Returns
    are divided by the in-sample root mean square of each asset.  The risk
    is ``N`` times the average squared portfolio return, which equals one
    for the true correlation.

    Parameters
    ----------
    panel : ndarray, shape (T, N)
    scheme : {"empirical", "clipped", "multifactor", "gaussianmf", "true"}
    M : int
        Number of modes or factors for the cleaned schemes.
    target : {"linear", "absolute"}
        ``"absolute"`` uses centered, normalized absolute returns.
    model_fn : callable, optional
        For ``scheme="multifactor"`` with absolute target: maps the
        in-sample block and ``W`` to a calibrated ``FactorModel``.
    """
    scheme = scheme.lower().replace("-", "").replace("_", "")
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if target not in ("linear", "absolute"):
        raise ValueError("target must be 'linear' or 'absolute'")
    R = np.asarray(panel, dtype=float)
    if target == "absolute":
        R = _absolute_transform(R)
    t, n = R.shape
    if t < t_is + t_os + 1:
        raise ValueError("panel shorter than t_is + t_os + 1")
    if scheme in ("clipped", "multifactor", "gaussianmf") and (M is None or M < 1):
        raise ValueError("scheme needs M >= 1")
    if scheme == "true" and true_corr is None:
        raise ValueError("scheme 'true' needs true_corr")
    rng = np.random.default_rng(seed)
    taus = np.arange(t_is, t - t_os, t_os)
    if n_windows is not None:
        taus = taus[:n_windows]
    ris, ros = np.empty(taus.size), np.empty(taus.size)
    for w, tau in enumerate(taus):
        blk = R[tau - t_is:tau]
        sig = np.sqrt(np.mean(blk * blk, axis=0))
        x_is = blk / sig
        rho = _scheme_corr(scheme, x_is, M, true_corr, target, sim_t, rng, model_fn)
        g = R[tau] / np.sqrt(np.mean(R[tau] ** 2))
        wt = markowitz_weights(rho, g) / sig
        ris[w] = n * np.mean((blk @ wt) ** 2)
        ros[w] = n * np.mean((R[tau + 1:tau + 1 + t_os] @ wt) ** 2)
    q = n / t_is
    return RiskReport(scheme, M, None if M is None else M / n, q, taus, ris, ros,
                      1 - q, 1 / (1 - q) if q < 1 else np.inf)
