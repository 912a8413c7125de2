"""Command-line entry point.

Every run writes plot-ready tables: JSON for scalars and fits, CSV for
curves and matrices.  Each output carries a provenance block with a hash of
the resolved configuration, the seed and the library version, and no
timestamps, so identical configurations give byte-identical files.

Exit status: 0 on success, 2 on invalid input or configuration, 3 on a
numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("artifact")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid command-line configuration."""


# ---------------------------------------------------------------------------
# config, provenance and output


def _config(args: argparse.Namespace) -> dict:
    skip = {"func", "out", "verbose"}
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Emitter:
    """Writes JSON and CSV artifacts with a shared provenance block."""

    def __init__(self, args: argparse.Namespace):
        self.cfg = _config(args)
        self.prov = {"config_hash": config_hash(self.cfg), "seed": getattr(args, "seed", None),
                     "version": __version__}
        self.out = Path(args.out) if args.out else None
        self.written: list[str] = []
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, payload: dict) -> None:
        doc = {"provenance": self.prov, "config": self.cfg, "result": _jsonable(payload)}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        self._write(f"{name}.json", text)

    def csv(self, name: str, columns: list[str], rows) -> None:
        buf = io.StringIO()
        buf.write("# " + " ".join(f"{k}={v}" for k, v in self.prov.items()) + "\n")
        buf.write(",".join(columns) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        self._write(f"{name}.csv", buf.getvalue())

    def _write(self, fname: str, text: str) -> None:
        if self.out is None:
            sys.stdout.write(text)
        else:
            (self.out / fname).write_text(text)
            self.written.append(fname)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return repr(float(v))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


# ---------------------------------------------------------------------------
# input


def fixture_path(name: str) -> Path:
    """Path of a bundled CSV fixture (``null_uniform``, ``iid_normal``,
    ``panel_small``)."""
    return Path(str(resources.files("artifact") / "data" / f"{name}.csv"))


def _panel(args, default: str):
    from .ingest import load_panel

    path = Path(args.input) if args.input else fixture_path(default)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read input {path}: {exc}") from None
    return load_panel(text, fmt=args.format)


def _series(args, default: str) -> np.ndarray:
    p = _panel(args, default)
    col = getattr(args, "column", 0)
    if not 0 <= col < p.shape[1]:
        raise ConfigError(f"column {col} out of range (panel has {p.shape[1]})")
    return p.returns[:, col]


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"not a comma-separated list of numbers: {text!r}") from None


def _ints(text: str | None) -> list[int] | None:
    vals = _floats(text)
    return None if vals is None else [int(v) for v in vals]


def _null_cdf(name: str):
    from scipy import stats

    if name == "uniform":
        return stats.uniform.cdf
    if name == "normal":
        return stats.norm.cdf
    raise ConfigError(f"unknown null {name!r}")


def _require_seed(args):
    if args.seed is None:
        raise ConfigError("--seed is required for stochastic runs")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gof(args, em: Emitter) -> None:
    from . import gof_uni

    x = _series(args, "null_uniform")
    if args.n is not None:
        if args.n > x.size:
            raise ConfigError(f"--n {args.n} exceeds sample size {x.size}")
        x = x[: args.n]
    cdf = _null_cdf(args.null)
    if args.weighted:
        cache = os.environ.get("ARTIFACT_CACHE_DIR") or False
        law = gof_uni.weighted_ks_law(cache=cache)
        stat, p = gof_uni.weighted_ks_test(x, cdf, law)
        kind = "weighted-ks"
    else:
        stat, p = gof_uni.ks_test(x, cdf)
        kind = "ks"
    em.json("gof", {"test": kind, "n": int(x.size), "statistic": stat, "p_value": p})


def cmd_gof_dep(args, em: Emitter) -> None:
    from . import depmeasure, gof_dep, gof_uni

    x = _series(args, "iid_normal")
    cdf = _null_cdf(args.null)
    m, qmax = args.grid, args.qmax
    cops = [depmeasure.self_copula(x, t) for t in range(1, qmax + 1)]
    psi = gof_dep.psi_from_copulas(cops, x.size, m=m)
    kern = gof_dep.build_kernel(psi, lag_cutoff=qmax)
    law = gof_dep.cm_law(kern)
    naive = gof_dep.cm_law(gof_dep.build_kernel(np.zeros((m, m))))
    ks_law = gof_dep.ks_law_dep(kern)
    cm = gof_dep.cm_statistic(x, cdf)
    ks = gof_uni.ks_statistic(x, cdf)
    em.json("gof_dep", {"n": int(x.size), "grid": m, "lags": qmax,
                        "cm_statistic": cm, "cm_p_corrected": law.cm_pvalue(cm),
                        "cm_p_naive": naive.cm_pvalue(cm), "ks_statistic": ks,
                        "ks_p_corrected": ks_law.ks_pvalue(ks),
                        "ks_p_naive": float(1 - gof_uni.ks_law(max(ks, 1e-3))),
                        "kernel_trace": kern.trace})


def cmd_depmap(args, em: Emitter) -> None:
    from . import depmeasure

    panel = _panel(args, "panel_small")
    r = panel.returns
    p_levels = _floats(args.p_levels) or [0.9, 0.95, 0.99]
    n = r.shape[1]
    if n > args.max_assets:
        raise ConfigError(f"{n} assets exceed --max-assets {args.max_assets}")
    cols = ["i", "j", "pearson", "spearman", "kendall", "blomqvist", "rho_b"]
    cols += [f"tau_{q}_{p:g}" for q in ("UU", "LL") for p in p_levels]
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            d = depmeasure.dependence_coefficients(r[:, i], r[:, j], d_list=(), p_list=p_levels,
                                                   m=args.grid)
            rows.append([panel.assets[i], panel.assets[j], d.pearson, d.spearman, d.kendall,
                         d.blomqvist, d.rho_b, *d.tail["UU"], *d.tail["LL"]])
    em.csv("depmap", cols, rows)


def cmd_selfcopula(args, em: Emitter) -> None:
    from . import depmeasure, selfcopula

    x = _series(args, "iid_normal")
    lags = _ints(args.lags) or [1, 2, 5, 10, 20]
    rows = []
    for t in lags:
        cop = depmeasure.self_copula(x, t, m=args.grid)
        fit = selfcopula.fit_lag_coefficients(cop, s=args.s, lag=t)
        rows.append([t, fit.alpha, fit.beta, fit.rho, fit.residual])
    em.csv("selfcopula", ["lag", "alpha", "beta", "rho", "residual"], rows)
    alpha = np.array([r[1] for r in rows])
    if len(lags) >= 2 and np.all(alpha > 0):
        mf = selfcopula.multifractal_fit(lags, alpha)
        em.json("selfcopula_multifractal", {"sigma2": mf.sigma2, "horizon": mf.horizon,
                                            "residual": mf.residual,
                                            "degenerate": mf.degenerate})


def cmd_recur(args, em: Emitter) -> None:
    from . import recurrence

    x = _series(args, "iid_normal")
    if not 0 < args.p < 1:
        raise ConfigError("--p must lie in (0, 1)")
    st = recurrence.recurrence_empirical(x, 1 - args.p, wrap=args.wrap)
    runs = recurrence.sequence_lengths(x, args.p, wrap=args.wrap)
    em.json("recur", {"threshold_quantile": args.p, "p_plus": 1 - args.p,
                      "events": st.extra["events"], "mean_recurrence": st.mean,
                      "var_recurrence": st.var, "mean_sequence_length": float(runs.mean()),
                      "n": int(x.size)})
    em.csv("recur_pi", ["tau", "pi", "Pi"], zip(st.tau, st.pi, st.Pi))


def _qarch_model(args):
    from . import qarch

    q = args.q
    tau = np.arange(1, q + 1, dtype=float)
    if args.kernel == "power":
        k = args.g * tau ** -args.alpha
    elif args.kernel == "exponential":
        k = args.g * np.exp(-args.alpha * tau)
    else:
        k = np.full(q, args.g / q)
    s2 = 1 - k.sum()
    if s2 <= 0:
        raise ConfigError("kernel too large: baseline variance 1 - sum k must be positive")
    return qarch.QarchModel.diagonal(k, s2=s2, nu=args.nu)


def cmd_qarch(args, em: Emitter) -> None:
    from . import qarch

    action = args.action
    if action == "simulate":
        _require_seed(args)
        model = _qarch_model(args)
        sim = qarch.simulate(model, args.t, seed=args.seed)
        em.csv("qarch_simulate", ["date", "return", "sigma2"],
               zip((f"{i:08d}" for i in range(args.t)), sim.returns, sim.sigma2))
        em.json("qarch_simulate_summary",
                {"mean_sigma2": float(np.mean(sim.sigma2)), "floor_hits": int(sim.floor_hits),
                 "model": model.to_dict()})
    elif action == "calibrate":
        from .ingest import rogers_satchell

        panel = _panel(args, "iid_normal")
        if panel.ohlc is not None:
            r, vol = panel.returns.T, rogers_satchell(panel.ohlc).T
        elif args.vol_column is not None:
            if args.vol_column >= panel.shape[1]:
                raise ConfigError("--vol-column out of range")
            r = panel.returns[:, args.column][None, :]
            vol = panel.returns[:, args.vol_column][None, :]
        else:
            raise ConfigError("calibrate needs a variance proxy: --vol-column or OHLC input")
        cs = qarch.correlation_functions(r, args.q, sigma2=vol, four_point=False)
        s2, L, k = qarch.gmm_diagonal(cs, leverage=not args.no_leverage,
                                      mean_sigma2=cs.mean_sigma2)
        em.csv("qarch_calibrate", ["tau", "k", "L"], zip(range(1, args.q + 1), k, L))
        em.json("qarch_calibrate_summary", {"s2": s2, "sum_k": float(np.sum(k)),
                                            "mean_sigma2": cs.mean_sigma2})
    elif action == "spectrum":
        kind, q = args.kernel, args.q
        t = np.arange(1, q + 1, dtype=float)
        if kind == "linear":
            G = args.g * (1 - t / q)
            lam, _ = qarch.bb_linear_spectrum(args.g, q)
        elif kind == "exponential":
            G = args.g * np.exp(-args.alpha * t)
            lam, _ = qarch.bb_exponential_spectrum(args.g, args.alpha, q)
        else:
            G = args.g * t ** -args.alpha
            lam, _ = qarch.bb_powerlaw_spectrum(args.g, args.alpha, q)
        gbb = G - np.append(G[1:], 0.0)
        w, _ = qarch.spectral(qarch.kernel_family("bb", gbb, q))
        em.csv("qarch_spectrum", ["mode", "discrete", "continuum"],
               [(i + 1, w[i], lam[i]) for i in range(lam.size)])
    elif action == "tri":
        _require_seed(args)
        model = _qarch_model(args)
        sim = qarch.simulate(model, args.t, seed=args.seed, n_paths=args.paths)
        out = qarch.tri_measure(sim.returns, sim.sigma2, args.tau_max)
        rng = np.random.default_rng(args.seed + 1)
        s_shuf = np.array([rng.permutation(row) for row in np.atleast_2d(sim.sigma2)])
        shuf = qarch.tri_measure(sim.returns, s_shuf, args.tau_max)
        em.csv("qarch_tri", ["tau", "delta", "delta_shuffled"],
               zip(out["tau"], out["delta"], shuf["delta"]))
    else:  # argparse restricts choices
        raise ConfigError(f"unknown qarch action {action!r}")


def cmd_factor(args, em: Emitter) -> None:
    from . import factor

    action = args.action
    if action == "predict":
        if not args.model:
            raise ConfigError("factor predict needs --model")
        try:
            doc = json.loads(Path(args.model).read_text())
            model = factor.FactorModel.from_dict(doc["result"]["model"] if "result" in doc
                                                 else doc)
        except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model: {exc}") from None
        q = factor.predict_quadratic_correlations(model)
        n = q.shape[0]
        em.csv("factor_predict", ["i", "j", "r2r2"],
               [(i, j, q[i, j]) for i in range(n) for j in range(i, n)])
        return

    panel = _panel(args, "panel_small")
    r = panel.returns
    r = (r - r.mean(axis=0)) / r.std(axis=0)
    n = r.shape[1]
    alphas = _floats(args.alpha) or [0.1]
    if action == "fit":
        m = max(1, min(n - 1, int(round(alphas[0] * n))))
        corr = np.corrcoef(r, rowvar=False)
        W, _, info = factor.fit_linear_weights(corr, m)
        F, E = factor.reconstruct_factors(r, W)
        model = factor.fit_vol_params(F, E, drivers=args.drivers, W=W, seed=args.seed or 0)
        em.json("factor_fit", {"model": model.to_dict(), "linear_loss": info["loss"],
                               "linear_loss_pca": info["loss_pca"],
                               "stage1_loss": model.extra["stage1_loss"],
                               "stage2_loss": model.extra["stage2_loss"]})
    elif action == "backtest":
        rows = []
        for a in alphas:
            m = max(1, min(n, int(round(a * n))))
            rep = factor.markowitz_harness(r, args.scheme, M=m, t_is=args.t_is,
                                           t_os=args.t_os, seed=args.seed)
            rows.append((a, m, rep.tau.size, rep.mean_is, rep.mean_os, rep.rmt_is, rep.rmt_os))
        em.csv("factor_backtest", ["alpha", "M", "windows", "is_risk", "os_risk",
                                   "rmt_is", "rmt_os"], rows)
    else:
        raise ConfigError(f"unknown factor action {action!r}")


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="CSV input (default: bundled fixture)")
    p.add_argument("--format", choices=("wide", "long"), default="wide")
    p.add_argument("--column", type=int, default=0, help="series column for 1-D commands")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gof", help="univariate KS / weighted KS test")
    _common(p)
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--n", type=int, default=None, help="use the first n points")
    p.add_argument("--null", choices=("uniform", "normal"), default="uniform")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("gof-dep", help="CM/KS tests with dependence-corrected laws")
    _common(p)
    p.add_argument("--null", choices=("uniform", "normal"), default="normal")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--qmax", type=int, default=20)
    p.set_defaults(func=cmd_gof_dep)

    p = sub.add_parser("depmap", help="pairwise dependence coefficients")
    _common(p)
    p.add_argument("--p-levels", default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--max-assets", type=int, default=60)
    p.set_defaults(func=cmd_depmap)

    p = sub.add_parser("selfcopula", help="lag-by-lag log-normal self-copula fit")
    _common(p)
    p.add_argument("--lags", default=None)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--s", type=float, default=1.0)
    p.set_defaults(func=cmd_selfcopula)

    p = sub.add_parser("recur", help="recurrence intervals and sequence lengths")
    _common(p)
    p.add_argument("--p", type=float, default=0.9, help="threshold quantile")
    p.add_argument("--wrap", action="store_true")
    p.set_defaults(func=cmd_recur)

    p = sub.add_parser("qarch", help="QARCH simulation and calibration")
    p.add_argument("action", choices=("simulate", "calibrate", "spectrum", "tri"))
    _common(p)
    p.add_argument("--kernel", choices=("power", "exponential", "linear"), default="power")
    p.add_argument("--q", "--qmax", dest="q", type=int, default=20)
    p.add_argument("--g", type=float, default=0.08)
    p.add_argument("--alpha", type=float, default=1.1)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--t", type=int, default=5000)
    p.add_argument("--paths", type=int, default=20)
    p.add_argument("--tau-max", type=int, default=50)
    p.add_argument("--no-leverage", action="store_true")
    p.add_argument("--vol-column", type=int, default=None,
                   help="column holding the variance proxy (wide input)")
    p.set_defaults(func=cmd_qarch)

    p = sub.add_parser("factor", help="multi-factor model fit, prediction and backtest")
    p.add_argument("action", choices=("fit", "predict", "backtest"))
    _common(p)
    p.add_argument("--drivers", type=int, choices=(1, 2), default=1)
    p.add_argument("--alpha", default=None, help="comma-separated M/N values")
    p.add_argument("--model", help="model JSON for predict")
    p.add_argument("--scheme", choices=("empirical", "clipped", "multifactor"),
                   default="clipped")
    p.add_argument("--t-is", type=int, default=524)
    p.add_argument("--t-os", type=int, default=59)
    p.set_defaults(func=cmd_factor)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        em = Emitter(args)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            args.func(args, em)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"artifact: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"artifact: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
