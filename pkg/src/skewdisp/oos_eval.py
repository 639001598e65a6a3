"""Expanding-window forecasts, out-of-sample R^2, Clark-West and encompassing tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .data_ingest import MonthlyMarketSeries, format_number
from .errors import (
    AlignmentError,
    CollinearityError,
    DegenerateBenchmarkError,
    DegenerateForecastError,
    InsufficientSampleError,
)
from .predictive_regression.core import overlapping_returns
from .predictive_regression.ols import hac_covariance, mean_tstat

log = logging.getLogger(__name__)

MIN_HISTORY = 24
MIN_REALIZED = 12


@dataclass(frozen=True)
class ForecastRecord:
    month: str
    h: int
    model: float
    benchmark: float
    realized: Optional[float]


def _aligned_predictors(predictors, market: MonthlyMarketSeries):
    if not isinstance(predictors, (list, tuple)):
        predictors = [predictors]
    market_months = set(market.months)
    lookups = [dict(zip(p.months, np.asarray(p.values, dtype=np.float64).tolist())) for p in predictors]
    months = [m for m in predictors[0].months if m in market_months and all(m in lk for lk in lookups)]
    dropped = len(predictors[0].months) - len(months)
    if dropped:
        log.info("dropped %d forecast months lacking predictor or market data", dropped)
    if not months:
        raise AlignmentError("predictors and market share no months")
    x = np.array([[lk[m] for lk in lookups] for m in months], dtype=np.float64)
    return months, x, dropped


def expanding_forecasts(predictors, market: MonthlyMarketSeries, h: int, t0: str,
                        min_history: int = MIN_HISTORY) -> list[ForecastRecord]:
    """Forecasts of r_{m,m+h} for every origin month m >= t0.

    At origin m the regression uses only pairs (x_s, r_{s,s+h}) with
    s + h <= m, and the benchmark is the mean of those same r_{s,s+h}. The
    origin t0 is the first estimation endpoint, so the first realized
    forecast concerns months t0+1 .. t0+h. Origins whose target runs past
    the sample end carry ``realized=None``.
    """
    months, x, _ = _aligned_predictors(predictors, market)
    hr = overlapping_returns(market, h)
    target = dict(zip(hr.months, hr.values.tolist()))
    if t0 not in months:
        raise AlignmentError(f"first forecast month {t0} not in the aligned sample")
    start = months.index(t0)
    if start < min_history:
        raise InsufficientSampleError(f"only {start} months of history before {t0}, need {min_history}")

    y = np.array([target.get(m, np.nan) for m in months])
    n, l = x.shape
    X = np.column_stack([np.ones(n), x])
    p = l + 1
    # prefix sums over pairs s; origin m uses s <= m - h
    valid = ~np.isnan(y)
    Xv = np.where(valid[:, None], X, 0.0)
    yv = np.where(valid, y, 0.0)
    xtx = np.cumsum(Xv[:, :, None] * Xv[:, None, :], axis=0)
    xty = np.cumsum(Xv * yv[:, None], axis=0)
    cnt = np.cumsum(valid)
    # centred on the first target so a constant history averages to itself exactly
    y0 = y[np.argmax(valid)] if valid.any() else 0.0
    ysum = np.cumsum(np.where(valid, y - y0, 0.0))

    origins = np.arange(start, n)
    last = origins - h
    short = (last < 0) | (cnt[np.maximum(last, 0)] <= p)
    if short.any():
        bad = months[origins[np.argmax(short)]]
        raise InsufficientSampleError(f"origin {bad}: too few completed pairs to estimate")
    A = xtx[last]
    cond = np.linalg.cond(A)
    if np.any(cond > 1e12):
        bad = months[origins[np.argmax(cond > 1e12)]]
        raise CollinearityError(f"origin {bad}: regressors collinear in the estimation window")
    coef = np.linalg.solve(A, xty[last][:, :, None])[:, :, 0]
    model = np.einsum("ij,ij->i", X[origins], coef)
    bench = y0 + ysum[last] / cnt[last]
    return [ForecastRecord(months[m], h, float(f), float(b), float(y[m]) if valid[m] else None)
            for m, f, b in zip(origins.tolist(), model.tolist(), bench.tolist())]


def _realized(records: Sequence[ForecastRecord]):
    rows = [r for r in records if r.realized is not None]
    if len(rows) < MIN_REALIZED:
        raise InsufficientSampleError(f"{len(rows)} realized forecasts, need {MIN_REALIZED}")
    y = np.array([r.realized for r in rows])
    model = np.array([r.model for r in rows])
    bench = np.array([r.benchmark for r in rows])
    return rows, y, model, bench


def r2_oos(records: Sequence[ForecastRecord]) -> float:
    """1 - MSFE_model / MSFE_benchmark over records with realizations."""
    _, y, model, bench = _realized(records)
    msfe_b = float(np.mean((y - bench) ** 2))
    if msfe_b == 0:
        raise DegenerateBenchmarkError("benchmark forecasts are exact; R^2_OOS undefined")
    return 1.0 - float(np.mean((y - model) ** 2)) / msfe_b


def clark_west(records: Sequence[ForecastRecord], h: int) -> float:
    """MSPE-adjusted t-statistic; reject H0: R^2_OOS <= 0 for large positive values."""
    _, y, model, bench = _realized(records)
    f = (y - bench) ** 2 - ((y - model) ** 2 - (bench - model) ** 2)
    if np.ptp(f) == 0:
        raise DegenerateForecastError(f"adjusted loss differential is constant ({f[0]:.3g}); "
                                      "model and benchmark forecasts coincide")
    return mean_tstat(f, h - 1)


def clark_west_pvalue(t: float) -> float:
    return float(stats.norm.sf(t))


def cumulative_sse_diff(records: Sequence[ForecastRecord]) -> list[tuple[str, float]]:
    """Running sum of benchmark minus model squared errors."""
    rows = [r for r in records if r.realized is not None]
    if not rows:
        raise InsufficientSampleError("no realized forecasts")
    y = np.array([r.realized for r in rows])
    d = (y - np.array([r.benchmark for r in rows])) ** 2 - (y - np.array([r.model for r in rows])) ** 2
    return list(zip([r.month for r in rows], np.cumsum(d).tolist()))


@dataclass(frozen=True)
class OosEvaluation:
    r2_oos: float
    cw_stat: float
    forecasts: tuple
    cum_sse_diff: tuple
    metadata: dict

    def summary_row(self, predictor: str, h: int, lam: float = math.nan, lam_t: float = math.nan) -> str:
        """``predictor,h,r2_oos,cw_t,lambda,lambda_t``"""
        return ",".join([predictor, str(h), format_number(self.r2_oos), format_number(self.cw_stat),
                         format_number(lam), format_number(lam_t)])


def evaluate(records: Sequence[ForecastRecord], h: int) -> OosEvaluation:
    return OosEvaluation(
        r2_oos=r2_oos(records),
        cw_stat=clark_west(records, h),
        forecasts=tuple(records),
        cum_sse_diff=tuple(cumulative_sse_diff(records)),
        metadata={"t0": records[0].month if records else None, "t0_role": "first estimation endpoint"},
    )


@dataclass(frozen=True)
class EncompassingResult:
    lambda_hat: float
    test_stat: float
    n: int
    pvalue: float = math.nan


def encompassing_test(control_forecasts, sd_forecasts, realizations, h: int) -> EncompassingResult:
    """Optimal convex weight on the SD forecast and the HLN encompassing test.

    lambda = sum((e_c - e_sd) e_c) / sum((e_c - e_sd)^2), truncated to [0, 1].
    The statistic tests E[(e_c - e_sd) e_c] = 0 with a Bartlett long-run
    variance (h - 1 lags) and the Harvey-Leybourne-Newbold small-sample
    factor; the p-value is one-sided from Student t with n - 1 df.
    Observations with a missing value in any input are dropped pairwise.
    """
    c = np.asarray(control_forecasts, dtype=np.float64)
    s = np.asarray(sd_forecasts, dtype=np.float64)
    y = np.asarray(realizations, dtype=np.float64)
    if not (c.shape == s.shape == y.shape):
        raise AlignmentError("forecast and realization arrays differ in length")
    keep = np.isfinite(c) & np.isfinite(s) & np.isfinite(y)
    c, s, y = c[keep], s[keep], y[keep]
    n = y.size
    if n < MIN_REALIZED:
        raise InsufficientSampleError(f"{n} aligned realized forecasts, need {MIN_REALIZED}")
    e_c, e_s = y - c, y - s
    diff = e_c - e_s
    denom = float(diff @ diff)
    if denom == 0:
        raise DegenerateForecastError("control and SD forecasts are identical")
    lam = min(max(float(diff @ e_c) / denom, 0.0), 1.0)
    d = diff * e_c
    if np.ptp(d) == 0:
        t = math.copysign(math.inf, d[0]) if d[0] != 0 else math.nan
    else:
        var_mean = hac_covariance(np.ones((n, 1)), d - d.mean(), h - 1)[0, 0]
        t = float(d.mean() / math.sqrt(var_mean)) if var_mean > 0 else math.copysign(math.inf, d.mean())
    t *= math.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    pval = float(stats.t.sf(t, n - 1)) if math.isfinite(t) else (0.0 if t > 0 else 1.0)
    return EncompassingResult(lam, t, n, pval)


def encompassing_from_records(control: Sequence[ForecastRecord], sd: Sequence[ForecastRecord],
                              h: int) -> EncompassingResult:
    """Align two forecast logs on month and run :func:`encompassing_test` on model forecasts."""
    by_month = {r.month: r for r in sd}
    rows = [(r, by_month[r.month]) for r in control if r.month in by_month and r.realized is not None]
    return encompassing_test([a.model for a, _ in rows], [b.model for _, b in rows],
                             [a.realized for a, _ in rows], h)
