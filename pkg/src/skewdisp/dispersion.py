"""Cross-sectional percentile spreads of daily moments and their monthly aggregates."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .data_ingest import TradingCalendar, format_number
from .errors import DomainError, IncompleteMonthError, ThinCrossSectionError
from .realized_moments import CrossSectionSnapshot, MomentPanel, Moment

DEFAULT_PAIRS = ((95, 5), (90, 10), (85, 15), (80, 20), (75, 25))
MIN_BREADTH = 100
DAYS_PER_MONTH = 5


class Aggregation(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"


def cross_sectional_percentile(values, p: float) -> float:
    """Linear-interpolation order statistic.

    With sorted x_1..x_n the position is h = 1 + (n - 1) p / 100 and the
    result interpolates between x_floor(h) and x_ceil(h).
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise DomainError("percentile of an empty cross-section")
    if not 0 <= p <= 100:
        raise DomainError(f"percentile {p} outside [0, 100]")
    return float(_percentile_sorted(x, np.array([p]))[0])


def _percentile_sorted(x: np.ndarray, ps: np.ndarray) -> np.ndarray:
    h = (x.size - 1) * ps / 100.0  # zero-based position
    lo = np.floor(h).astype(np.int64)
    hi = np.minimum(lo + 1, x.size - 1)
    frac = h - lo
    return x[lo] + frac * (x[hi] - x[lo])


def daily_dispersion(snapshot: CrossSectionSnapshot, a: float, b: float, min_breadth: int = MIN_BREADTH) -> float:
    if not a > b:
        raise DomainError(f"upper percentile {a} must exceed lower {b}")
    vals = np.asarray(snapshot.values, dtype=np.float64)
    if vals.size < min_breadth:
        raise ThinCrossSectionError(f"{snapshot.date}: {vals.size} names, minimum {min_breadth}")
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"{snapshot.date}: non-finite moment in cross-section")
    x = np.sort(vals)
    hi, lo = _percentile_sorted(x, np.array([a, b], dtype=np.float64))
    # sorted input makes this nonnegative up to rounding; clamp the rounding
    return float(max(hi - lo, 0.0))


def monthly_aggregate(dates, values, calendar: TradingCalendar, method: Aggregation | str = Aggregation.MEAN,
                      n_days: int = DAYS_PER_MONTH) -> tuple[list[str], np.ndarray]:
    """Mean or median of the last ``n_days`` trading-day values of every month.

    Months are those touched by ``dates``; the last trading days come from
    ``calendar``, never from civil dates. A month missing any of its last
    trading days raises :class:`IncompleteMonthError`.
    """
    method = Aggregation(method)
    dates = np.asarray(dates, dtype="datetime64[D]")
    values = np.asarray(values, dtype=np.float64)
    lookup = dict(zip(dates.tolist(), values.tolist()))
    months = sorted({str(m) for m in dates.astype("datetime64[M]")})
    out = []
    for month in months:
        last = calendar.last_days(month, n_days)
        if len(last) < n_days:
            raise IncompleteMonthError(f"{month}: calendar has only {len(last)} trading days")
        missing = [str(d) for d in last.tolist() if d not in lookup]
        if missing:
            raise IncompleteMonthError(f"{month}: no dispersion value on {', '.join(missing)}")
        window = np.array([lookup[d] for d in last.tolist()])
        out.append(window.mean() if method is Aggregation.MEAN else np.median(window))
    return months, np.array(out, dtype=np.float64)


@dataclass(frozen=True)
class DispersionSeries:
    moment: Moment
    upper: float
    lower: float
    aggregation: Aggregation
    months: tuple
    values: np.ndarray

    def __post_init__(self):
        if not self.upper > self.lower:
            raise DomainError("upper percentile must exceed lower")

    @property
    def name(self) -> str:
        return f"{self.moment.value}_{self.upper:g}_{self.lower:g}_{self.aggregation.value}"

    def __len__(self):
        return len(self.months)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for m, v in zip(self.months, self.values.tolist()):
                fh.write(f"{m},{format_number(v)}\n")


def daily_dispersion_path(snapshots: Sequence[CrossSectionSnapshot], a: float, b: float,
                          min_breadth: int = MIN_BREADTH) -> tuple[np.ndarray, np.ndarray]:
    dates = np.array([s.date for s in snapshots], dtype="datetime64[D]")
    vals = np.array([daily_dispersion(s, a, b, min_breadth) for s in snapshots])
    return dates, vals


def build_predictor(snapshots: Sequence[CrossSectionSnapshot] | MomentPanel, calendar: TradingCalendar,
                    moment: Moment | str = Moment.SKEWNESS, a: float = 75, b: float = 25,
                    method: Aggregation | str = Aggregation.MEAN,
                    min_breadth: int = MIN_BREADTH) -> DispersionSeries:
    moment = Moment(moment)
    if isinstance(snapshots, MomentPanel):
        snapshots = snapshots.snapshots(moment)
    dates, vals = daily_dispersion_path(snapshots, a, b, min_breadth)
    months, monthly = monthly_aggregate(dates, vals, calendar, method)
    return DispersionSeries(moment, a, b, Aggregation(method), tuple(months), monthly)
