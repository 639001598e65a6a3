"""Realized variance, skewness and kurtosis of intraday return grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .data_ingest import MIN_VALID_POINTS, GridBatch, IntradayReturnGrid, format_number
from .errors import DomainError, UndefinedMomentError


class Moment(str, Enum):
    SKEWNESS = "skewness"
    KURTOSIS = "kurtosis"


def _neumaier_power_sums(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compensated sums of r^2, r^3, r^4 along the last axis.

    The loop runs over the intraday index so each stock-day is accumulated
    sequentially in a fixed order. The error term of every addition is
    recovered exactly with Knuth's branch-free TwoSum.
    """
    r = np.atleast_2d(r)
    cols = np.ascontiguousarray(r.T)  # (K, n)
    sq = cols * cols
    terms = np.stack((sq, sq * cols, sq * sq))  # (3, K, n)
    s = np.zeros(terms.shape[::2])
    c = np.zeros_like(s)
    for k in range(terms.shape[1]):
        x = terms[:, k]
        t = s + x
        z = t - s
        c += (s - (t - z)) + (x - z)
        s = t
    out = s + c
    return out[0], out[1], out[2]


def _as_returns(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise DomainError("need a non-empty one-dimensional return sequence")
    if not np.all(np.isfinite(r)):
        raise DomainError("non-finite intraday return")
    return r


def realized_variance(returns: Sequence[float]) -> float:
    r = _as_returns(returns)
    return float(_neumaier_power_sums(r)[0][0])


def realized_skewness(returns: Sequence[float]) -> float:
    """sqrt(K) * sum(r^3) / RV^(3/2), with K the number of returns."""
    r = _as_returns(returns)
    s2, s3, _ = _neumaier_power_sums(r)
    if s2[0] == 0:
        raise UndefinedMomentError("realized variance is zero")
    return float(np.sqrt(r.size) * s3[0] / s2[0] ** 1.5)


def realized_kurtosis(returns: Sequence[float]) -> float:
    """K * sum(r^4) / RV^2."""
    r = _as_returns(returns)
    s2, _, s4 = _neumaier_power_sums(r)
    if s2[0] == 0:
        raise UndefinedMomentError("realized variance is zero")
    return float(r.size * s4[0] / s2[0] ** 2)


def moments_matrix(returns: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise (rv, rs, rk) for an (n, K) array; rs and rk are NaN where rv == 0."""
    returns = np.asarray(returns, dtype=np.float64)
    k = returns.shape[1]
    s2, s3, s4 = _neumaier_power_sums(returns)
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = np.where(s2 > 0, np.sqrt(k) * s3 / s2 ** 1.5, np.nan)
        rk = np.where(s2 > 0, k * s4 / s2 ** 2, np.nan)
    return s2, rs, rk


@dataclass(frozen=True)
class DailyMomentRecord:
    ticker: str
    date: np.datetime64
    rv: float
    rs: float
    rk: float
    k: int


@dataclass(frozen=True)
class CrossSectionSnapshot:
    date: np.datetime64
    moment: Moment
    values: np.ndarray


@dataclass
class MomentPanel:
    """Daily moment records in (date, ticker) order, stored column-wise."""

    dates: np.ndarray
    tickers: np.ndarray
    rv: np.ndarray
    rs: np.ndarray
    rk: np.ndarray
    k: np.ndarray
    excluded: int = 0  # all exclusions, illiquid ones included
    excluded_keys: list = field(default_factory=list)
    excluded_illiquid: int = 0

    def __len__(self):
        return len(self.dates)

    def records(self) -> list[DailyMomentRecord]:
        return [DailyMomentRecord(str(t), d, float(a), float(b), float(c), int(k))
                for d, t, a, b, c, k in zip(self.dates, self.tickers, self.rv, self.rs, self.rk, self.k)]

    def snapshots(self, moment: Moment = Moment.SKEWNESS) -> list[CrossSectionSnapshot]:
        moment = Moment(moment)
        vals = self.rs if moment is Moment.SKEWNESS else self.rk
        if len(self.dates) == 0:
            return []
        cuts = np.flatnonzero(self.dates[1:] != self.dates[:-1]) + 1
        bounds = np.concatenate(([0], cuts, [len(self.dates)]))
        return [CrossSectionSnapshot(self.dates[a], moment, vals[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]

    def to_text(self) -> str:
        lines = [
            f"{d},{t},{format_number(a)},{format_number(b)},{format_number(c)},{k}\n"
            for d, t, a, b, c, k in zip(self.dates.astype(str), self.tickers, self.rv.tolist(),
                                        self.rs.tolist(), self.rk.tolist(), self.k.tolist())
        ]
        return "".join(lines)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path) -> "MomentPanel":
        import polars as pl

        df = pl.read_csv(path, has_header=False, new_columns=["date", "ticker", "rv", "rs", "rk", "k"],
                         schema_overrides={"date": pl.Date, "ticker": pl.Utf8, "rv": pl.Float64,
                                           "rs": pl.Float64, "rk": pl.Float64, "k": pl.Int64})
        return cls(
            df.get_column("date").to_numpy().astype("datetime64[D]"),
            df.get_column("ticker").to_numpy().astype(object),
            df.get_column("rv").to_numpy(), df.get_column("rs").to_numpy(),
            df.get_column("rk").to_numpy(), df.get_column("k").to_numpy(),
        )


def write_snapshots(path, panel: MomentPanel) -> None:
    """Long-format ``date,moment,value`` export of both cross-sections."""
    with open(path, "w") as fh:
        for snap_s, snap_k in zip(panel.snapshots(Moment.SKEWNESS), panel.snapshots(Moment.KURTOSIS)):
            for moment, snap in ((Moment.SKEWNESS, snap_s), (Moment.KURTOSIS, snap_k)):
                d = str(snap.date)
                fh.writelines(f"{d},{moment.value},{format_number(v)}\n" for v in snap.values.tolist())


def build_moment_panel(grids: GridBatch | Iterable[IntradayReturnGrid],
                       min_valid: int = MIN_VALID_POINTS) -> MomentPanel:
    """Moments for every liquid stock-day.

    Stock-days with fewer than ``min_valid`` trade-backed grid points, or
    with zero realized variance, are excluded and listed in
    ``excluded_keys``. Output is sorted by (date, ticker), so the panel
    depends only on the multiset of input grids.
    """
    if not isinstance(grids, GridBatch):
        grids = GridBatch.from_grids(grids)
    if len(grids) == 0:
        empty = np.zeros(0)
        return MomentPanel(np.array([], dtype="datetime64[D]"), np.array([], dtype=object),
                           empty, empty, empty, np.zeros(0, dtype=np.int64))
    rv, rs, rk = moments_matrix(grids.returns)
    illiquid = grids.valid_counts < min_valid
    bad = illiquid | ~(rv > 0)
    order = np.lexsort((grids.tickers.astype(str), grids.dates))
    order = order[~bad[order]]
    excluded_keys = sorted((str(d), str(t)) for d, t in zip(grids.dates[bad], grids.tickers[bad]))
    return MomentPanel(
        dates=grids.dates[order],
        tickers=grids.tickers[order],
        rv=rv[order], rs=rs[order], rk=rk[order],
        k=np.full(len(order), grids.returns.shape[1], dtype=np.int64),
        excluded=int(bad.sum()),
        excluded_keys=excluded_keys,
        excluded_illiquid=int(illiquid.sum()),
    )
