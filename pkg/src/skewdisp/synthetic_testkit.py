"""Seeded synthetic markets and brute-force oracles.

Every generator is a pure function of its spec. Random numbers come from
numpy's PCG64 bit generator; per-stock streams are split off the root seed
with ``SeedSequence.spawn`` so a stock's path does not depend on how many
other stocks are drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .data_ingest import (
    GRID_MINUTES,
    GridBatch,
    IntradayReturnGrid,
    MonthlyMarketSeries,
    MonthlyPredictorSeries,
    TradingCalendar,
    month_ordinal,
    ordinal_month,
    parse_month,
    write_bar_file,
)
from .errors import DomainError, UndefinedMomentError


def rng_from(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# calendars

def synthetic_trading_days(n_days: int, start_month: str = "2000-01",
                           days_per_month: Optional[int] = None) -> np.ndarray:
    """Weekdays from ``start_month`` on.

    With ``days_per_month`` set, only the first that many weekdays of each
    month are trading days, which packs more months into a short panel.
    """
    if n_days < 1:
        raise DomainError("n_days must be positive")
    if days_per_month is not None and not 1 <= days_per_month <= 20:
        raise DomainError("days_per_month must lie in 1..20")
    out = []
    ordinal = month_ordinal(parse_month(start_month))
    while len(out) < n_days:
        first = np.datetime64(ordinal_month(ordinal), "D")
        nxt = np.datetime64(ordinal_month(ordinal + 1), "D")
        days = np.arange(first, nxt)
        days = days[np.is_busday(days)]
        if days_per_month is not None:
            days = days[:days_per_month]
        out.extend(days.tolist())
        ordinal += 1
    return np.array(out[:n_days], dtype="datetime64[D]")


# ---------------------------------------------------------------------------
# intraday panels

@dataclass(frozen=True)
class IntradayPanelSpec:
    """Diffusion plus one-sided jumps, per stock.

    Each five-minute return is ``vol / sqrt(k) * z`` plus, with probability
    ``jump_intensity * |skew_mix_i| * day_multiplier_d``, a jump of sign
    ``sign(skew_mix_i)`` and size ``jump_scale * vol / sqrt(k) * (1 + E)``
    with ``E`` standard exponential. ``skew_mix = 0`` gives a symmetric
    Gaussian panel.
    """

    n_stocks: int
    n_days: int
    k: int = 78
    vol: float = 0.015  # daily diffusive volatility
    skew_mix: Union[float, Sequence[float]] = 0.0
    jump_intensity: float = 0.02
    jump_scale: float = 4.0
    vol_dispersion: float = 0.0  # log-normal spread of per-stock volatility
    day_multiplier: Optional[Sequence[float]] = None  # jump intensity per day
    seed: int = 0
    start_month: str = "2000-01"
    days_per_month: Optional[int] = None

    def __post_init__(self):
        if self.n_stocks < 1 or self.n_days < 1 or self.k < 1:
            raise DomainError("panel dimensions must be positive")
        if not self.vol > 0:
            raise DomainError("volatility scale must be positive")
        mix = np.broadcast_to(np.asarray(self.skew_mix, dtype=np.float64), (self.n_stocks,))
        if np.any(np.abs(mix) > 1):
            raise DomainError("skew_mix must lie in [-1, 1]")
        if self.day_multiplier is not None:
            mult = np.asarray(self.day_multiplier, dtype=np.float64)
            if mult.shape != (self.n_days,) or np.any(mult < 0):
                raise DomainError("day_multiplier must be n_days non-negative values")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    def mix(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.skew_mix, dtype=np.float64), (self.n_stocks,)).copy()

    def tickers(self) -> list[str]:
        return [f"S{i:04d}" for i in range(self.n_stocks)]

    def trading_days(self) -> np.ndarray:
        return synthetic_trading_days(self.n_days, self.start_month, self.days_per_month)

    def calendar(self) -> TradingCalendar:
        return TradingCalendar(self.trading_days())


def _stock_returns(spec: IntradayPanelSpec, seq: np.random.SeedSequence, mix: float,
                   mult: np.ndarray) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seq))
    scale = spec.vol / math.sqrt(spec.k)
    if spec.vol_dispersion > 0:
        scale *= math.exp(spec.vol_dispersion * rng.standard_normal())
    r = scale * rng.standard_normal((spec.n_days, spec.k))
    u = rng.random((spec.n_days, spec.k))
    size = rng.standard_exponential((spec.n_days, spec.k))
    if mix != 0:
        p = np.minimum(spec.jump_intensity * abs(mix) * mult, 1.0)[:, None]
        hit = u < p
        r += np.where(hit, math.copysign(1.0, mix) * spec.jump_scale * scale * (1.0 + size), 0.0)
    return r


def generate_intraday_panel(spec: IntradayPanelSpec) -> GridBatch:
    """All stock-days as a :class:`GridBatch` ordered by (ticker, date)."""
    mix = spec.mix()
    mult = (np.ones(spec.n_days) if spec.day_multiplier is None
            else np.asarray(spec.day_multiplier, dtype=np.float64))
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_stocks)
    returns = np.empty((spec.n_stocks, spec.n_days, spec.k))
    for i, child in enumerate(children):
        returns[i] = _stock_returns(spec, child, float(mix[i]), mult)
    days = spec.trading_days()
    tickers = np.repeat(np.array(spec.tickers(), dtype=object), spec.n_days)
    return GridBatch(
        tickers=tickers,
        dates=np.tile(days, spec.n_stocks),
        returns=returns.reshape(-1, spec.k),
        valid_counts=np.full(spec.n_stocks * spec.n_days, spec.k + 1, dtype=np.int64),
    )


def iter_grids(spec: IntradayPanelSpec) -> Iterator[IntradayReturnGrid]:
    yield from generate_intraday_panel(spec)


def panel_to_bars(path, batch: GridBatch, start_price: float = 50.0, seed: int = 0,
                  jitter: bool = True, header: bool = False) -> int:
    """Write a grid batch as a bar file with one trade per grid boundary.

    Each trade is stamped 0-4 minutes before its boundary (``jitter``) so
    the file exercises previous-tick sampling; the open trade sits at 09:30.
    Prices chain across days within a ticker. Returns the line count.
    """
    if batch.returns.shape[1] + 1 != len(GRID_MINUTES):
        raise DomainError("bar export needs 78-return grids")
    n = len(batch)
    rng = rng_from(seed)
    logp = np.cumsum(np.concatenate((np.zeros((n, 1)), batch.returns), axis=1), axis=1)
    # carry the close of one day into the open of the next, per ticker
    closes = logp[:, -1]
    new_ticker = np.ones(n, dtype=bool)
    new_ticker[1:] = batch.tickers[1:] != batch.tickers[:-1]
    carry = np.cumsum(closes) - closes
    first = np.maximum.accumulate(np.where(new_ticker, np.arange(n), 0))
    base = carry - carry[first]
    prices = start_price * np.exp(logp + base[:, None])
    minutes = np.broadcast_to(GRID_MINUTES, (n, len(GRID_MINUTES))).copy()
    if jitter:
        minutes[:, 1:] -= rng.integers(0, 5, size=(n, len(GRID_MINUTES) - 1))
    write_bar_file(path, np.repeat(batch.tickers, len(GRID_MINUTES)),
                   np.repeat(batch.dates, len(GRID_MINUTES)), minutes.ravel(), prices.ravel(), header)
    return prices.size


# ---------------------------------------------------------------------------
# predictive regressions

@dataclass(frozen=True)
class PredictiveDgpSpec:
    """x_t = mu + rho (x_{t-1} - mu) + sigma_x v_t;  r_{t+1} = alpha + beta x_t + noise_vol e_{t+1}.

    ``innovation_corr`` is corr(v_t, e_t). The predictor starts from its
    stationary distribution.
    """

    T: int
    beta: float = 0.0
    rho: float = 0.0
    noise_vol: float = 0.04
    seed: int = 0
    predictor_vol: float = 1.0
    predictor_mean: float = 0.0
    alpha: float = 0.0
    risk_free: float = 0.0
    innovation_corr: float = 0.0
    start_month: str = "1960-01"
    name: str = "x"

    def __post_init__(self):
        if self.T < 2:
            raise DomainError("T must be at least 2")
        if not 0 <= self.rho < 1:
            raise DomainError("rho must lie in [0, 1)")
        if not (self.noise_vol > 0 and self.predictor_vol > 0):
            raise DomainError("volatilities must be positive")
        if not -1 < self.innovation_corr < 1:
            raise DomainError("innovation_corr must lie in (-1, 1)")


def generate_predictive_dgp(spec: PredictiveDgpSpec) -> tuple[MonthlyPredictorSeries, MonthlyMarketSeries]:
    rng = rng_from(spec.seed)
    T = spec.T
    v = rng.standard_normal(T)
    e_ind = rng.standard_normal(T)
    c = spec.innovation_corr
    e = c * v + math.sqrt(1 - c * c) * e_ind
    x = np.empty(T)
    prev = rng.standard_normal() / math.sqrt(1 - spec.rho ** 2)
    for t in range(T):
        prev = spec.rho * prev + v[t]
        x[t] = prev
    x = spec.predictor_mean + spec.predictor_vol * x
    r = np.empty(T)
    # month 0's return is driven by the (unobserved) previous predictor value
    x_lag = np.concatenate(([spec.predictor_mean], x[:-1]))
    r[:] = spec.alpha + spec.beta * x_lag + spec.noise_vol * e
    start = month_ordinal(parse_month(spec.start_month))
    months = tuple(ordinal_month(start + i) for i in range(T))
    return (MonthlyPredictorSeries(spec.name, months, x),
            MonthlyMarketSeries(months, r, np.full(T, spec.risk_free)))


# ---------------------------------------------------------------------------
# oracle

def oracle_moments(returns) -> tuple[float, float, float]:
    """Realized variance, skewness and kurtosis by exactly rounded direct sums."""
    r = [float(v) for v in returns]
    if not r:
        raise DomainError("empty return sequence")
    k = len(r)
    rv = math.fsum(v * v for v in r)
    if rv == 0:
        raise UndefinedMomentError("zero realized variance")
    s3 = math.fsum(v * v * v for v in r)
    s4 = math.fsum((v * v) * (v * v) for v in r)
    return rv, math.sqrt(k) * s3 / rv ** 1.5, k * s4 / (rv * rv)


# ---------------------------------------------------------------------------
# end-to-end synthetic study

@dataclass(frozen=True)
class SyntheticStudySpec:
    """Inputs for a full pipeline run.

    A monthly AR(1) factor ``f`` scales every stock's jump intensity by
    ``exp(intensity_loading * f_m)`` during month m; stocks carry jump signs
    and strengths drawn from [-1, 1], so the cross-sectional skewness spread
    moves with ``f``. Next month's market log excess return is
    ``premium + return_loading * f_m + market_vol * e``.
    """

    n_stocks: int = 500
    n_days: int = 252
    days_per_month: Optional[int] = 6
    start_month: str = "2000-01"
    seed: int = 0
    factor_rho: float = 0.6
    intensity_loading: float = 0.6
    premium: float = 0.005
    return_loading: float = -0.015
    market_vol: float = 0.03
    risk_free: float = 0.002


def _tagged_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


FOMC_MONTHS = (1, 2, 3, 6, 7, 8, 9, 12)


def write_synthetic_study(directory, spec: SyntheticStudySpec = SyntheticStudySpec()) -> dict:
    """Write bars, calendars and monthly series under ``directory``; returns their paths."""
    import os

    os.makedirs(os.path.join(directory, "controls"), exist_ok=True)
    days = synthetic_trading_days(spec.n_days, spec.start_month, spec.days_per_month)
    day_month = days.astype("datetime64[M]")
    months = sorted({str(m) for m in day_month})
    n_months = len(months)
    month_idx = np.searchsorted(np.array(months, dtype="datetime64[M]"), day_month)

    rng = _tagged_rng(spec.seed, 1)
    f = np.empty(n_months)
    prev = rng.standard_normal()
    for i in range(n_months):
        prev = spec.factor_rho * prev + math.sqrt(1 - spec.factor_rho ** 2) * rng.standard_normal()
        f[i] = prev
    mix = _tagged_rng(spec.seed, 2).uniform(-1.0, 1.0, spec.n_stocks)
    panel = IntradayPanelSpec(
        n_stocks=spec.n_stocks, n_days=spec.n_days, skew_mix=tuple(mix.tolist()), vol_dispersion=0.3,
        day_multiplier=tuple(np.exp(spec.intensity_loading * f[month_idx]).tolist()), seed=spec.seed,
        start_month=spec.start_month, days_per_month=spec.days_per_month,
    )
    batch = generate_intraday_panel(panel)
    paths = {"bars": os.path.join(directory, "bars.csv")}
    panel_to_bars(paths["bars"], batch, seed=int(_tagged_rng(spec.seed, 3).integers(0, 2 ** 63)))

    paths["trading_calendar"] = os.path.join(directory, "trading_days.csv")
    with open(paths["trading_calendar"], "w") as fh:
        fh.writelines(f"{d},16:00\n" for d in days.astype(str))

    noise = rng.standard_normal(n_months)
    lagged = np.concatenate(([0.0], f[:-1]))
    excess = spec.premium + spec.return_loading * lagged + spec.market_vol * noise
    market = MonthlyMarketSeries(tuple(months), excess, np.full(n_months, spec.risk_free))
    paths["market"] = os.path.join(directory, "market.csv")
    market.write(paths["market"])

    crng = _tagged_rng(spec.seed, 4)
    signal = MonthlyPredictorSeries("ctrl_signal", tuple(months), 0.7 * f + 0.7 * crng.standard_normal(n_months))
    ar = np.empty(n_months)
    prev = crng.standard_normal()
    for i in range(n_months):
        prev = 0.9 * prev + crng.standard_normal()
        ar[i] = prev
    paths["controls_dir"] = os.path.join(directory, "controls")
    signal.write(os.path.join(paths["controls_dir"], "ctrl_signal.csv"))
    MonthlyPredictorSeries("ctrl_noise", tuple(months), ar).write(os.path.join(paths["controls_dir"], "ctrl_noise.csv"))

    sentiment = MonthlyPredictorSeries("sentiment", tuple(months), 0.5 * f + crng.standard_normal(n_months))
    paths["regime_series"] = os.path.join(directory, "sentiment.csv")
    sentiment.write(paths["regime_series"])

    start = int(0.35 * n_months)
    paths["nber_calendar"] = os.path.join(directory, "nber.csv")
    with open(paths["nber_calendar"], "w") as fh:
        fh.writelines(f"{m}\n" for m in months[start: start + max(1, n_months // 5)])
    paths["fomc_calendar"] = os.path.join(directory, "fomc.csv")
    with open(paths["fomc_calendar"], "w") as fh:
        fh.writelines(f"{m}\n" for m in months if int(m[5:]) in FOMC_MONTHS)

    with open(os.path.join(directory, "factor.csv"), "w") as fh:
        fh.writelines(f"{m},{v:.10g}\n" for m, v in zip(months, f.tolist()))
    return paths
