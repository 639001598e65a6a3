"""Predictive regressions of future average market returns on a predictor."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ..data_ingest import MonthlyMarketSeries, format_number
from ..errors import AlignmentError, DomainError, InsufficientSampleError
from .filters import FULL
from .ivx import ivx_fit
from .ols import newey_west_tstats, ols_fit

MIN_OBS = 24
MIN_OBS_PER_OFFSET = 12


class Method(str, Enum):
    NW_OVERLAPPING = "NW_OVERLAPPING"
    NONOVERLAPPING_AVG = "NONOVERLAPPING_AVG"
    IVX = "IVX"


@dataclass(frozen=True)
class HorizonReturnSeries:
    """r_{t,t+h} = (r_{t+1} + ... + r_{t+h}) / h indexed by origin month t."""

    h: int
    months: tuple
    values: np.ndarray


def overlapping_returns(market: MonthlyMarketSeries, h: int) -> HorizonReturnSeries:
    if h < 1:
        raise DomainError("horizon must be at least one month")
    T = len(market)
    if h >= T:
        raise InsufficientSampleError(f"horizon {h} needs more than {T} months")
    r = np.asarray(market.excess, dtype=np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(r[1:], h)
    return HorizonReturnSeries(h, tuple(market.months[: T - h]), windows.sum(axis=1) / h)


@dataclass(frozen=True)
class PredictiveRegressionResult:
    predictor: str
    horizon: int
    alpha: float
    betas: tuple
    tstats: tuple
    adj_r2: float
    method: Method
    sample_filter: str
    n_obs: int
    wald: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)

    def row(self) -> str:
        """``predictor,method,filter,h,alpha,beta1,t1[,beta2,t2],adj_r2,n_obs``"""
        cells = [self.predictor, self.method.value, self.sample_filter, str(self.horizon), format_number(self.alpha)]
        for b, t in zip(self.betas, self.tstats):
            cells += [format_number(b), format_number(t)]
        cells += [format_number(self.adj_r2), str(self.n_obs)]
        return ",".join(cells)


def _series_lookup(series) -> dict:
    return dict(zip(series.months, np.asarray(series.values, dtype=np.float64).tolist()))


@dataclass
class _Design:
    months: list  # origin months admitted
    x: np.ndarray  # (n, l)
    y: np.ndarray
    predictor_months: list  # contiguous months shared by predictor(s) and market
    x_full: np.ndarray  # predictor(s) on predictor_months
    y_full: np.ndarray  # r_{t,t+h} on predictor_months, NaN past the sample end
    r_full: np.ndarray  # market excess on predictor_months
    admitted_full: np.ndarray
    dropped: int


def _design(predictor, market: MonthlyMarketSeries, h: int, sample_filter=FULL, control=None) -> _Design:
    market_pos = {m: i for i, m in enumerate(market.months)}
    stray = [m for m in predictor.months if m not in market_pos]
    if stray:
        raise AlignmentError(f"predictor {predictor.name} has months outside the market series: "
                             + ", ".join(stray[:5]))
    hr = overlapping_returns(market, h)
    target = dict(zip(hr.months, hr.values.tolist()))
    pred = _series_lookup(predictor)
    ctrl = _series_lookup(control) if control is not None else None

    months = list(predictor.months)
    dropped = 0
    if ctrl is not None:
        # both series are gap-free, so their overlap is one contiguous block
        shared = [m for m in months if m in ctrl]
        if not shared:
            raise AlignmentError(f"control {control.name} shares no months with {predictor.name}")
        dropped = len(months) - len(shared)
        months = shared
    admitted = sample_filter.admits(months) & np.array([m in target for m in months], dtype=bool)
    cols = [np.array([pred[m] for m in months])]
    if ctrl is not None:
        cols.append(np.array([ctrl[m] for m in months]))
    x_full = np.column_stack(cols)
    r_full = np.array([market.excess[market_pos[m]] for m in months])
    sel = np.flatnonzero(admitted)
    return _Design(
        months=[months[i] for i in sel],
        x=x_full[sel],
        y=np.array([target[months[i]] for i in sel]),
        predictor_months=months,
        x_full=x_full,
        y_full=np.array([target.get(m, np.nan) for m in months]),
        r_full=r_full,
        admitted_full=admitted,
        dropped=dropped,
    )


def _fit_nw(x: np.ndarray, y: np.ndarray, h: int):
    fit = ols_fit(np.column_stack([np.ones(len(y)), x]), y)
    return fit, newey_west_tstats(fit, h - 1)


def _predictor_label(predictor, control) -> str:
    return predictor.name if control is None else f"{predictor.name}+{control.name}"


def run_univariate(predictor, market: MonthlyMarketSeries, h: int, sample_filter=FULL,
                   min_obs: int = MIN_OBS, control=None) -> PredictiveRegressionResult:
    """OLS of r_{t,t+h} on the predictor with Newey-West t-statistics (h - 1 lags)."""
    d = _design(predictor, market, h, sample_filter, control)
    n = len(d.y)
    if n < min_obs:
        raise InsufficientSampleError(f"{n} observations after filtering ({sample_filter.describe()}), "
                                      f"minimum {min_obs}")
    fit, t = _fit_nw(d.x, d.y, h)
    return PredictiveRegressionResult(
        predictor=_predictor_label(predictor, control), horizon=h, alpha=float(fit.coef[0]),
        betas=tuple(float(b) for b in fit.coef[1:]), tstats=tuple(float(v) for v in t[1:]),
        adj_r2=fit.adj_r2, method=Method.NW_OVERLAPPING, sample_filter=sample_filter.describe(),
        n_obs=n, metadata={"nw_lags": h - 1, "dropped_months": d.dropped},
    )


def run_bivariate(predictor, control, market: MonthlyMarketSeries, h: int, sample_filter=FULL,
                  min_obs: int = MIN_OBS) -> PredictiveRegressionResult:
    return run_univariate(predictor, market, h, sample_filter, min_obs, control=control)


def run_nonoverlapping(predictor, market: MonthlyMarketSeries, h: int, sample_filter=FULL,
                       min_obs: Optional[int] = None, control=None) -> PredictiveRegressionResult:
    """Average of h regressions on the non-overlapping subsamples s, s+h, s+2h, ...

    Each offset regression uses heteroskedasticity-robust t-statistics (its
    observations do not overlap). Slopes, t-statistics and adjusted R^2 are
    averaged over offsets; ``n_obs`` is the total across offsets.
    ``min_obs`` is the per-offset floor (default 12); at h = 1 the call is
    :func:`run_univariate` and its floor (default 24) applies.
    """
    if min_obs is None:
        min_obs = MIN_OBS if h == 1 else MIN_OBS_PER_OFFSET
    if h == 1:
        res = run_univariate(predictor, market, 1, sample_filter, min_obs, control)
        return PredictiveRegressionResult(
            res.predictor, 1, res.alpha, res.betas, res.tstats, res.adj_r2, Method.NONOVERLAPPING_AVG,
            res.sample_filter, res.n_obs, metadata={"offsets": 1, **res.metadata})
    d = _design(predictor, market, h, sample_filter, control)
    positions = np.arange(len(d.predictor_months))
    fits = []
    for s in range(h):
        rows = positions[(positions % h == s) & d.admitted_full]
        if rows.size < min_obs:
            raise InsufficientSampleError(f"offset {s + 1}: {rows.size} observations, minimum {min_obs}")
        fit = ols_fit(np.column_stack([np.ones(rows.size), d.x_full[rows]]), d.y_full[rows])
        fits.append((fit, newey_west_tstats(fit, 0), rows.size))
    coef = np.mean([f.coef for f, _, _ in fits], axis=0)
    tstat = np.mean([t for _, t, _ in fits], axis=0)
    adj = float(np.mean([f.adj_r2 for f, _, _ in fits]))
    return PredictiveRegressionResult(
        predictor=_predictor_label(predictor, control), horizon=h, alpha=float(coef[0]),
        betas=tuple(float(b) for b in coef[1:]), tstats=tuple(float(v) for v in tstat[1:]),
        adj_r2=adj, method=Method.NONOVERLAPPING_AVG, sample_filter=sample_filter.describe(),
        n_obs=int(sum(n for _, _, n in fits)),
        metadata={"offsets": h, "offset_n_obs": [n for _, _, n in fits], "dropped_months": d.dropped},
    )


def run_ivx(predictor, market: MonthlyMarketSeries, h: int, sample_filter=FULL,
            min_obs: int = MIN_OBS, control=None) -> PredictiveRegressionResult:
    """IVX estimate with Wald inference.

    ``tstats`` holds the signed square root of each per-coefficient Wald
    statistic; the raw values are in ``wald``. For h > 1 the slope is the
    long-horizon IVX estimate of the one-month coefficient. ``adj_r2`` is
    the OLS value on the same sample.
    """
    d = _design(predictor, market, h, sample_filter, control)
    n = len(d.y)
    if n < min_obs:
        raise InsufficientSampleError(f"{n} observations after filtering ({sample_filter.describe()}), "
                                      f"minimum {min_obs}")
    res = ivx_fit(d.x_full, d.r_full, h, admitted=d.admitted_full)
    ols = ols_fit(np.column_stack([np.ones(n), d.x]), d.y)
    signed = np.sign(res.coef) * np.sqrt(res.wald_individual)
    return PredictiveRegressionResult(
        predictor=_predictor_label(predictor, control), horizon=h, alpha=res.alpha,
        betas=tuple(float(b) for b in res.coef), tstats=tuple(float(v) for v in signed),
        adj_r2=ols.adj_r2, method=Method.IVX, sample_filter=sample_filter.describe(), n_obs=res.n,
        wald=tuple(float(w) for w in res.wald_individual),
        metadata={"rho_z": res.rho_z, "joint_wald": res.wald, "wald_kind": "per-coefficient",
                  "dropped_months": d.dropped},
    )


def correlation(a, b) -> float:
    """Pearson correlation over the months two series share."""
    la, lb = _series_lookup(a), _series_lookup(b)
    common = [m for m in a.months if m in lb]
    if len(common) < 3:
        raise InsufficientSampleError("fewer than three common months")
    x = np.array([la[m] for m in common])
    y = np.array([lb[m] for m in common])
    return float(np.corrcoef(x, y)[0, 1])


RUNNERS = {
    Method.NW_OVERLAPPING: run_univariate,
    Method.NONOVERLAPPING_AVG: run_nonoverlapping,
    Method.IVX: run_ivx,
}


def run_method(method: Method | str, predictor, market, h, sample_filter=FULL, control=None, **kw):
    return RUNNERS[Method(method)](predictor, market, h, sample_filter, control=control, **kw)
