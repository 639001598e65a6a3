"""Mean-variance market timing backtests: weights, CER, Sharpe ratios, wealth."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .data_ingest import MonthlyMarketSeries, format_number
from .errors import AlignmentError, DegenerateStatisticError, DomainError, InsufficientSampleError
from .oos_eval import ForecastRecord

log = logging.getLogger(__name__)

VARIANCE_WINDOW = 60
MIN_VARIANCE_HISTORY = 12


@dataclass(frozen=True)
class AllocationConfig:
    gamma: float = 3.0
    weight_floor: float = -0.5
    weight_cap: float = 1.5
    horizon: int = 1
    variance_window: int = VARIANCE_WINDOW

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("risk aversion must be positive")
        if not self.weight_floor < self.weight_cap:
            raise DomainError("weight floor must lie below the cap")
        if self.horizon < 1:
            raise DomainError("horizon must be positive")


def mv_weight(return_forecast: float, variance_forecast: float, config: AllocationConfig = AllocationConfig()) -> float:
    """(1/gamma) * r / sigma^2 clamped to [floor, cap]."""
    if not variance_forecast > 0:
        raise DomainError(f"variance forecast {variance_forecast} must be positive")
    raw = return_forecast / (config.gamma * variance_forecast)
    return float(min(max(raw, config.weight_floor), config.weight_cap))


def variance_forecast(returns: Sequence[float], h: int = 1, window: int = VARIANCE_WINDOW) -> float:
    """Variance of the h-month cumulative return from a trailing window.

    Uses the overlapping h-month average returns inside the last ``window``
    months (fewer if the history is shorter), takes their sample variance
    and rescales by h^2 to the h-month horizon.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.size < MIN_VARIANCE_HISTORY:
        raise InsufficientSampleError(f"{r.size} months of history, need {MIN_VARIANCE_HISTORY}")
    tail = r[-window:]
    if tail.size < h + 1:
        raise InsufficientSampleError("window shorter than the horizon")
    avg = np.lib.stride_tricks.sliding_window_view(tail, h).mean(axis=1)
    return _scaled_var(avg, h)


def _scaled_var(avg: np.ndarray, h: int) -> float:
    # shifting by the first value is exact for a constant window, so it yields 0 rather than ~1e-35
    return float(np.var(avg - avg[0], ddof=1) * h * h)


def _trailing_variance(avg: np.ndarray, i: int, h: int, window: int) -> float:
    """:func:`variance_forecast` on months 0..i, reusing precomputed h-month averages."""
    n = i + 1
    if n < MIN_VARIANCE_HISTORY:
        raise InsufficientSampleError(f"{n} months of history, need {MIN_VARIANCE_HISTORY}")
    lo = max(0, n - window)
    if n - lo < h + 1:
        raise InsufficientSampleError("window shorter than the horizon")
    return _scaled_var(avg[lo: n - h + 1], h)


@dataclass
class BacktestResult:
    months: tuple  # rebalance months
    weights: np.ndarray
    portfolio_returns: np.ndarray  # simple total return per holding period
    excess_returns: np.ndarray  # portfolio minus risk-free over the period
    horizon: int
    gamma: float
    log_wealth: tuple  # (month, log wealth) incl. the starting point
    cer_gain_annualized: Optional[float] = None  # bps, set by cer_gain
    metadata: dict = field(default_factory=dict)

    @property
    def cer(self) -> float:
        return cer(self.portfolio_returns, self.gamma)

    @property
    def sharpe_per_period(self) -> float:
        return sharpe(self.excess_returns, self.horizon, annualize=False)

    @property
    def sharpe_annualized(self) -> float:
        return sharpe(self.excess_returns, self.horizon)

    def weight_path(self) -> list[tuple[str, float]]:
        return list(zip(self.months, self.weights.tolist()))


def _period_gross(market: MonthlyMarketSeries, start: int, h: int) -> tuple[float, float]:
    """Gross market and risk-free returns over months start+1 .. start+h."""
    seg_r = market.excess[start + 1: start + h + 1]
    seg_f = market.risk_free[start + 1: start + h + 1]
    rf_gross = float(np.prod(1.0 + seg_f))
    mkt_gross = float(np.exp(seg_r.sum()) * rf_gross)
    return mkt_gross, rf_gross


def simulate_portfolio(months: Sequence[str], weights: Sequence[float], market_gross: Sequence[float],
                       rf_gross: Sequence[float], config: AllocationConfig,
                       end_months: Optional[Sequence[str]] = None) -> BacktestResult:
    """Hold ``w`` in the market and ``1 - w`` in bills for each period."""
    w = np.asarray(weights, dtype=np.float64)
    gm = np.asarray(market_gross, dtype=np.float64)
    gf = np.asarray(rf_gross, dtype=np.float64)
    excess = w * (gm - gf)
    total = excess + gf - 1.0
    points = np.concatenate(([0.0], np.cumsum(np.log1p(total))))
    if end_months is None:
        end_months = list(months[1:]) + ["end"]
    labels = [months[0]] + list(end_months)
    return BacktestResult(tuple(months), w, total, excess, config.horizon, config.gamma,
                          tuple(zip(labels, points.tolist())))


def backtest(forecasts: Sequence[ForecastRecord] | Mapping[str, float], market: MonthlyMarketSeries,
             config: AllocationConfig = AllocationConfig(), source: str = "model",
             fixed_weight: Optional[float] = None) -> BacktestResult:
    """Rebalance every h months from the first forecast month.

    ``forecasts`` maps each rebalance month to the forecast of the average
    monthly return over the next h months; ForecastRecord sequences use the
    ``model`` or ``benchmark`` field according to ``source``. The return
    forecast fed to the weight rule is the h-month cumulative one (h times
    the average) to match the h-month variance forecast. ``fixed_weight``
    bypasses the rule (e.g. 1.0 for buy-and-hold).
    """
    h = config.horizon
    if isinstance(forecasts, Mapping):
        fmap = dict(forecasts)
        order = sorted(fmap)
    else:
        if source not in ("model", "benchmark"):
            raise DomainError(f"unknown forecast source {source!r}")
        fmap = {r.month: getattr(r, source) for r in forecasts}
        order = [r.month for r in forecasts]
    if not order:
        raise InsufficientSampleError("no forecasts to trade on")
    pos = {m: i for i, m in enumerate(market.months)}
    if order[0] not in pos:
        raise AlignmentError(f"first forecast month {order[0]} not in the market series")
    start = pos[order[0]]
    rebal = list(range(start, len(market) - h, h))
    excess = np.asarray(market.excess, dtype=np.float64)
    # h-month averages starting at each month, shared by every variance forecast
    avg = np.lib.stride_tricks.sliding_window_view(excess, h).mean(axis=1) if len(excess) >= h else np.zeros(0)
    months, weights, gm, gf, ends = [], [], [], [], []
    degenerate = 0
    for i in rebal:
        m = market.months[i]
        if fixed_weight is not None:
            w = fixed_weight
        else:
            if m not in fmap:
                raise AlignmentError(f"missing forecast at rebalance month {m}")
            r_hat = h * fmap[m]
            var = _trailing_variance(avg, i, h, config.variance_window)
            if var > 0:
                w = mv_weight(r_hat, var, config)
            else:
                # push to the bound on the forecast's side; 0 when there is no signal
                w = config.weight_cap if r_hat > 0 else config.weight_floor if r_hat < 0 else 0.0
                degenerate += 1
                log.warning("zero variance forecast at %s; weight set to %g", m, w)
        a, b = _period_gross(market, i, h)
        months.append(m)
        weights.append(w)
        gm.append(a)
        gf.append(b)
        ends.append(market.months[i + h])
    if not months:
        raise InsufficientSampleError("no complete holding period in the sample")
    res = simulate_portfolio(months, weights, gm, gf, config, end_months=ends)
    res.metadata["degenerate_variance_periods"] = degenerate
    return res


def cer(portfolio_returns: Sequence[float], gamma: float) -> float:
    """Mean minus 0.5 * gamma * sample variance, per period."""
    r = np.asarray(portfolio_returns, dtype=np.float64)
    if r.size < 2:
        raise InsufficientSampleError("CER needs at least two periods")
    # centred on the first period so a riskless constant return is reproduced exactly
    mean = r[0] + (r - r[0]).mean()
    return float(mean - 0.5 * gamma * r.var(ddof=1))


def cer_gain(strategy: BacktestResult, benchmark: BacktestResult, h: Optional[int] = None) -> float:
    """Annualized CER difference in basis points."""
    if strategy.months != benchmark.months:
        raise AlignmentError("strategy and benchmark cover different rebalance windows")
    h = h or strategy.horizon
    gain = (strategy.cer - benchmark.cer) * 12.0 / h * 1e4
    strategy.cer_gain_annualized = gain
    return gain


def sharpe(excess_returns: Sequence[float], h: int = 1, annualize: bool = True) -> float:
    r = np.asarray(excess_returns, dtype=np.float64)
    if r.size < 2:
        raise InsufficientSampleError("Sharpe ratio needs at least two periods")
    sd = r.std(ddof=1)
    if sd == 0:
        raise DegenerateStatisticError("zero volatility of excess returns")
    ratio = float(r.mean() / sd)
    return ratio * math.sqrt(12.0 / h) if annualize else ratio


def performance_row(name: str, h: int, gain_bps: float, sharpe_ratio: float) -> str:
    """``predictor,h,cer_gain_bps,sharpe``"""
    return f"{name},{h},{format_number(gain_bps)},{format_number(sharpe_ratio)}"
