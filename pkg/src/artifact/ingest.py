"""Panel loading, cleaning and normalization.

All variances use the population divisor ``T``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, TextIO

import numpy as np

__all__ = [
    "ReturnPanel",
    "PanelError",
    "load_panel",
    "rogers_satchell",
    "remove_market_vol",
    "standardize",
    "prepare",
]


class PanelError(ValueError):
    """Raised on malformed or empty panel input."""


@dataclass(frozen=True)
class ReturnPanel:
    """T x N matrix of returns with identifiers.

    Attributes
    ----------
    dates : tuple of str
        Strictly increasing ISO dates.
    assets : tuple of str
    returns : ndarray, shape (T, N)
    ohlc : ndarray, shape (T, N, 4), optional
        Open, high, low, close prices.
    vol : ndarray, shape (T, N), optional
        Companion volatility proxy (rescaled alongside returns).
    standardized : bool
    """

    dates: tuple
    assets: tuple
    returns: np.ndarray
    ohlc: np.ndarray | None = None
    vol: np.ndarray | None = None
    standardized: bool = False

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=float)
        if r.ndim != 2:
            raise PanelError("returns must be 2-D")
        if r.shape[0] < 2 or r.shape[1] < 1:
            raise PanelError(f"panel too small: {r.shape}")
        if not np.all(np.isfinite(r)):
            raise PanelError("panel contains missing or non-finite values")
        if len(self.dates) != r.shape[0] or len(self.assets) != r.shape[1]:
            raise PanelError("identifier lengths do not match returns")
        if any(a >= b for a, b in zip(self.dates[:-1], self.dates[1:])):
            raise PanelError("dates must be strictly increasing")
        object.__setattr__(self, "returns", r)

    @property
    def shape(self) -> tuple[int, int]:
        return self.returns.shape

    @classmethod
    def from_array(cls, returns, dates=None, assets=None) -> "ReturnPanel":
        r = np.asarray(returns, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        t, n = r.shape
        dates = tuple(f"{i:08d}" for i in range(t)) if dates is None else tuple(dates)
        assets = tuple(f"A{j:04d}" for j in range(n)) if assets is None else tuple(assets)
        return cls(dates, assets, r)


def _read_rows(source) -> list[list[str]]:
    if isinstance(source, str):
        source = io.StringIO(source)
    return [row for row in csv.reader(source) if row and not row[0].startswith("#")]


def load_panel(source: TextIO | str, fmt: str = "wide", policy: str = "drop-date",
               value: str = "close") -> ReturnPanel:
    """Parse a CSV stream into a :class:`ReturnPanel`.

    Parameters
    ----------
    source : file-like or str
        CSV text.  ``wide``: header ``date,<asset>...`` with returns.
        ``long``: header ``date,asset,open,high,low,close``; returns are
        log-differences of ``value`` prices and OHLC blocks are kept.
    fmt : {'wide', 'long'}
    policy : {'drop-date', 'drop-asset'}
        How gaps are removed: drop dates on which any asset is missing, or
        drop assets that miss any date.
    value : str
        Price column used for returns in long format.

    Raises
    ------
    PanelError
        Malformed row (message carries the 1-based line number) or empty
        intersection.
    """
    if policy not in ("drop-date", "drop-asset"):
        raise PanelError(f"unknown policy {policy!r}")
    rows = _read_rows(source)
    if not rows:
        raise PanelError("empty input")
    header = [h.strip().lower() for h in rows[0]]
    table: dict[str, dict[str, np.ndarray]] = {}
    if fmt == "wide":
        assets = [h.strip() for h in rows[0][1:]]
        for ln, row in enumerate(rows[1:], start=2):
            if len(row) != len(rows[0]):
                raise PanelError(f"line {ln}: expected {len(rows[0])} fields, got {len(row)}")
            for a, cell in zip(assets, row[1:]):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    continue
                try:
                    table.setdefault(a, {})[row[0].strip()] = np.array([float(cell)])
                except ValueError as exc:
                    raise PanelError(f"line {ln}: {exc}") from None
    elif fmt == "long":
        need = ["date", "asset", "open", "high", "low", "close"]
        if header[:6] != need:
            raise PanelError(f"line 1: long header must start with {need}")
        for ln, row in enumerate(rows[1:], start=2):
            if len(row) < 6:
                raise PanelError(f"line {ln}: expected 6 fields, got {len(row)}")
            try:
                px = np.array([float(c) for c in row[2:6]])
            except ValueError as exc:
                raise PanelError(f"line {ln}: {exc}") from None
            table.setdefault(row[1].strip(), {})[row[0].strip()] = px
    else:
        raise PanelError(f"unknown format {fmt!r}")
    if not table:
        raise PanelError("no data rows")

    all_dates = sorted(set().union(*[set(d) for d in table.values()]))
    assets = sorted(table)
    if policy == "drop-asset":
        assets = [a for a in assets if len(table[a]) == len(all_dates)]
        dates = all_dates
    else:
        common = set(all_dates)
        for a in assets:
            common &= set(table[a])
        dates = sorted(common)
    if not assets or len(dates) < (3 if fmt == "long" else 2):
        raise PanelError("empty panel after applying the missing-data policy")

    if fmt == "wide":
        r = np.array([[table[a][d][0] for a in assets] for d in dates])
        return ReturnPanel(tuple(dates), tuple(assets), r)
    px = np.array([[table[a][d] for a in assets] for d in dates])  # T x N x 4
    if np.any(px <= 0):
        raise PanelError("non-positive price")
    col = ["open", "high", "low", "close"].index(value)
    r = np.diff(np.log(px[:, :, col]), axis=0)
    return ReturnPanel(tuple(dates[1:]), tuple(assets), r, ohlc=px[1:])


def rogers_satchell(ohlc) -> np.ndarray:
    """Rogers-Satchell squared volatility per bar.

    ``ln(H/O) ln(H/C) + ln(L/O) ln(L/C)``; works on any array whose last
    axis holds (open, high, low, close).
    """
    p = np.asarray(ohlc, dtype=float)
    if p.shape[-1] != 4:
        raise ValueError("last axis must hold open, high, low, close")
    if np.any(p <= 0):
        raise ValueError("prices must be strictly positive")
    o, h, l, c = (np.log(p[..., i]) for i in range(4))
    return (h - o) * (h - c) + (l - o) * (l - c)


def remove_market_vol(panel: ReturnPanel, eps: float = 0.0) -> ReturnPanel:
    """Divide each row by the cross-sectional rms return ``Sigma_t``.

    Raises
    ------
    PanelError
        If ``N < 2`` or some ``Sigma_t <= eps``.
    """
    r = panel.returns
    if r.shape[1] < 2:
        raise PanelError("market-volatility removal needs N >= 2")
    sig = np.sqrt(np.mean(r * r, axis=1))
    bad = np.flatnonzero(sig <= eps)
    if bad.size:
        raise PanelError(f"zero cross-sectional volatility on {panel.dates[bad[0]]}")
    vol = None if panel.vol is None else panel.vol / sig[:, None]
    return replace(panel, returns=r / sig[:, None], vol=vol, standardized=False)


def standardize(panel: ReturnPanel) -> ReturnPanel:
    """Center and scale each column to mean 0, population variance 1."""
    r = panel.returns
    m = r.mean(axis=0)
    sd = r.std(axis=0)
    bad = np.flatnonzero(sd <= 1e-300)
    if bad.size:
        raise PanelError(f"zero variance for asset {panel.assets[bad[0]]}")
    z = (r - m) / sd
    vol = None if panel.vol is None else panel.vol / sd
    return replace(panel, returns=z, vol=vol, standardized=True)


def prepare(panel: ReturnPanel, market_vol: bool = True, order: str = "remove-first"
            ) -> ReturnPanel:
    """Apply market-volatility removal and standardization in the configured order."""
    if not market_vol or panel.returns.shape[1] < 2:
        return standardize(panel)
    if order == "remove-first":
        return standardize(remove_market_vol(panel))
    if order == "standardize-first":
        out = remove_market_vol(standardize(panel))
        return replace(out, standardized=False)
    raise ValueError(f"unknown order {order!r}")
