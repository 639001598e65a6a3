"""Parsing and calendars for intraday bars and monthly series.

Text formats
------------
Bar file      ``TICKER,YYYY-MM-DD,HH:MM,PRICE`` (header optional)
Monthly file  ``YYYY-MM,value`` or ``YYYY-MM,excess_return,risk_free``
Calendar      ``YYYY-MM`` per line
Trading days  ``YYYY-MM-DD[,HH:MM]`` per line; the optional second field is
              the session close, anything before 16:00 marks a short session.
"""

from __future__ import annotations

import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from typing import BinaryIO, Iterable, Iterator, Sequence, Union

import numpy as np
import polars as pl

from .errors import DegenerateGridError, DomainError, FormatError, GapError, ParseError

log = logging.getLogger(__name__)

Source = Union[str, os.PathLike, bytes, BinaryIO]

SESSION_OPEN = 9 * 60 + 30
SESSION_CLOSE = 16 * 60
GRID_STEP = 5
N_GRID_RETURNS = (SESSION_CLOSE - SESSION_OPEN) // GRID_STEP  # 78
GRID_MINUTES = SESSION_OPEN + GRID_STEP * np.arange(N_GRID_RETURNS + 1)
MIN_VALID_POINTS = 10
MALFORMED_TOLERANCE = 0.01

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def format_number(x: float) -> str:
    """Render a number with 10 significant digits (the artifact-wide rule)."""
    return f"{x:.10g}"


# ---------------------------------------------------------------------------
# months

def parse_month(token: str) -> str:
    m = _MONTH_RE.match(token.strip())
    if m is None or not 1 <= int(m.group(2)) <= 12:
        raise ParseError(f"unparseable month token {token.strip()!r}")
    return f"{m.group(1)}-{m.group(2)}"


def month_ordinal(month: str) -> int:
    return int(month[:4]) * 12 + int(month[5:7]) - 1


def ordinal_month(ordinal: int) -> str:
    return f"{ordinal // 12:04d}-{ordinal % 12 + 1:02d}"


def shift_month(month: str, k: int) -> str:
    return ordinal_month(month_ordinal(month) + k)


def month_range(first: str, last: str) -> list[str]:
    return [ordinal_month(i) for i in range(month_ordinal(first), month_ordinal(last) + 1)]


def month_of(day: Union[date, np.datetime64, str]) -> str:
    return str(day)[:7]


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        raw = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"source is not valid UTF-8: {exc}") from exc


# ---------------------------------------------------------------------------
# bar files

@dataclass(frozen=True)
class RawTickRecord:
    ticker: str
    timestamp: datetime
    price: float


@dataclass
class TickTable:
    """Columnar store of parsed bar records sorted by (ticker, timestamp).

    Tickers are held as integer codes into ``symbols`` (sorted), so code
    order is ticker order. Iterating yields :class:`RawTickRecord` objects;
    the pipeline uses the columns directly.
    """

    symbols: np.ndarray  # distinct tickers, sorted
    codes: np.ndarray  # int32 index into symbols
    dates: np.ndarray  # datetime64[D]
    minutes: np.ndarray  # int32 minute of day
    prices: np.ndarray  # float64
    malformed: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def tickers(self) -> np.ndarray:
        return self.symbols[self.codes]

    def __iter__(self) -> Iterator[RawTickRecord]:
        for c, d, mi, p in zip(self.codes, self.dates, self.minutes, self.prices):
            day = d.astype(date)
            yield RawTickRecord(str(self.symbols[c]), datetime(day.year, day.month, day.day, int(mi) // 60,
                                                               int(mi) % 60), float(p))

    @property
    def malformed_count(self) -> int:
        return len(self.malformed)

    @classmethod
    def empty(cls, malformed: Sequence[int] = ()) -> "TickTable":
        return cls(np.array([], dtype=object), np.array([], dtype=np.int32), np.array([], dtype="datetime64[D]"),
                   np.array([], dtype=np.int32), np.array([], dtype=np.float64), list(malformed))

    @classmethod
    def from_records(cls, records: Iterable[RawTickRecord]) -> "TickTable":
        recs = sorted(records, key=lambda r: (r.ticker, r.timestamp))
        for r in recs:
            if not (math.isfinite(r.price) and r.price > 0):
                raise DomainError(f"non-positive price in record {r}")
        symbols = sorted({r.ticker for r in recs})
        code = {t: i for i, t in enumerate(symbols)}
        return cls(
            symbols=np.array(symbols, dtype=object),
            codes=np.array([code[r.ticker] for r in recs], dtype=np.int32),
            dates=np.array([r.timestamp.date() for r in recs], dtype="datetime64[D]"),
            minutes=np.array([r.timestamp.hour * 60 + r.timestamp.minute for r in recs], dtype=np.int32),
            prices=np.array([r.price for r in recs], dtype=np.float64),
        )


_BAR_SCHEMA = {"ticker": pl.Utf8, "date": pl.Utf8, "time": pl.Utf8, "price": pl.Utf8, "extra": pl.Utf8}


def _source_for_polars(source: Source):
    if isinstance(source, bytes):
        return io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise FileNotFoundError(f"bar file not found: {source}")
        return source
    return io.BytesIO(source.read())


def parse_bar_file(source: Source, dialect: str = "standard") -> TickTable:
    """Parse a ``TICKER,YYYY-MM-DD,HH:MM,PRICE`` bar file.

    Malformed lines (wrong field count, unparseable date or time, price that
    is not a positive finite number) are dropped and their 1-based line
    numbers recorded on the result. More than 1% malformed lines raises
    :class:`FormatError`; a single stray line is always tolerated, so tiny
    files are not failed by one bad row. Blank lines are ignored. Trades sharing a
    timestamp keep their file order.
    """
    if dialect != "standard":
        raise DomainError(f"unknown bar-file dialect {dialect!r}")
    try:
        raw = pl.read_csv(
            _source_for_polars(source),
            has_header=False,
            quote_char=None,
            schema=_BAR_SCHEMA,
            truncate_ragged_lines=True,
            raise_if_empty=False,
        )
    except pl.exceptions.ComputeError as exc:
        raise ParseError(f"cannot read bar file: {exc}") from exc
    raw = raw.with_row_index("lineno", offset=1).filter(
        ~pl.all_horizontal(pl.col(c).is_null() for c in _BAR_SCHEMA))
    if raw.height == 0:
        return TickTable.empty()
    head = raw.row(0, named=True)
    if head["lineno"] == 1 and (head["ticker"] or "").strip().lower() == "ticker":
        raw = raw.slice(1)

    clock = pl.col("time").str.strip_chars().str.to_time("%H:%M", strict=False)
    df = raw.lazy().select(
        "lineno",
        "ticker",
        pl.col("date").str.to_date("%Y-%m-%d", strict=False).alias("date"),
        (clock.dt.hour().cast(pl.Int32) * 60 + clock.dt.minute().cast(pl.Int32)).alias("minute"),
        pl.col("price").str.strip_chars().cast(pl.Float64, strict=False).alias("price"),
        pl.col("extra").is_null().alias("no_extra"),
    ).with_columns(
        (pl.col("no_extra")
         & (pl.col("ticker").str.len_bytes() > 0).fill_null(False)
         & pl.col("date").is_not_null()
         & pl.col("minute").is_not_null()
         & (pl.col("price").is_finite() & (pl.col("price") > 0)).fill_null(False)).alias("ok")
    ).collect()

    malformed = df.filter(~pl.col("ok")).get_column("lineno").to_list()
    n_lines = df.height
    if len(malformed) > max(1.0, MALFORMED_TOLERANCE * n_lines):
        raise FormatError(
            f"{len(malformed)} of {n_lines} lines malformed (tolerance {MALFORMED_TOLERANCE:.0%})", malformed
        )
    if malformed:
        log.warning("dropped %d malformed bar lines (first: %s)", len(malformed), malformed[:5])

    good = df.filter(pl.col("ok")).select("ticker", "date", "minute", "price")
    if good.height == 0:
        return TickTable.empty([int(x) for x in malformed])
    t, d, m = pl.col("ticker"), pl.col("date"), pl.col("minute")
    in_order = (
        (t > t.shift(1)) | ((t == t.shift(1)) & ((d > d.shift(1)) | ((d == d.shift(1)) & (m >= m.shift(1)))))
    ).fill_null(True).all()
    if not good.select(in_order).item():
        good = good.sort(["ticker", "date", "minute"], maintain_order=True)
    good = good.with_columns(t.rle_id().cast(pl.Int32).alias("code"))
    return TickTable(
        symbols=good.get_column("ticker").unique(maintain_order=True).to_numpy().astype(object),
        codes=good.get_column("code").to_numpy(),
        dates=good.get_column("date").to_numpy().astype("datetime64[D]"),
        minutes=good.get_column("minute").to_numpy().astype(np.int32),
        prices=good.get_column("price").to_numpy().astype(np.float64),
        malformed=[int(x) for x in malformed],
    )


def write_bar_file(path: Union[str, os.PathLike], tickers, dates, minutes, prices, header: bool = False) -> None:
    """Write bar records in the standard dialect, prices at 10 significant digits."""
    minutes = np.asarray(minutes)
    df = pl.DataFrame({
        "ticker": np.asarray(tickers, dtype=object).astype(str),
        "date": np.asarray(dates, dtype="datetime64[D]"),
        "h": minutes // 60,
        "m": minutes % 60,
        "price": np.asarray(prices, dtype=np.float64),
    }).select(
        "ticker",
        pl.col("date").dt.strftime("%Y-%m-%d"),
        (pl.col("h").cast(pl.Utf8).str.zfill(2) + ":" + pl.col("m").cast(pl.Utf8).str.zfill(2)).alias("time"),
        pl.col("price").round_sig_figs(10),
    )
    df.write_csv(path, include_header=header)


# ---------------------------------------------------------------------------
# return grids

@dataclass(frozen=True)
class IntradayReturnGrid:
    ticker: str
    date: date
    returns: np.ndarray
    valid_count: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.returns)):
            raise DomainError(f"non-finite grid return for {self.ticker} {self.date}")
        if not 0 <= self.valid_count <= len(self.returns) + 1:
            raise DomainError(f"valid_count {self.valid_count} out of range")


def _grid_prices(minutes: np.ndarray, prices: np.ndarray) -> tuple[np.ndarray, int]:
    """Previous-tick prices at the session boundaries for one sorted ticker-day."""
    idx = np.searchsorted(minutes, GRID_MINUTES, side="right") - 1
    # boundaries before the first trade take the first trade's price
    grid = prices[np.maximum(idx, 0)]
    # trade-backed iff a trade arrived in (previous boundary, boundary]
    backed = np.diff(np.concatenate(([-1], idx))) > 0
    backed &= idx >= 0
    return grid, int(backed.sum())


def build_return_grid(records: Sequence[RawTickRecord]) -> IntradayReturnGrid:
    """78 five-minute log returns for one ticker-day under previous-tick sampling."""
    if len(records) == 0:
        raise DegenerateGridError("no trades in session")
    day = records[0].timestamp.date()
    ticker = records[0].ticker
    for r in records:
        if r.timestamp.date() != day or r.ticker != ticker:
            raise DomainError("records span more than one ticker-day")
    minutes = np.array([r.timestamp.hour * 60 + r.timestamp.minute for r in records])
    if np.any(np.diff(minutes) < 0):
        raise DomainError("records not sorted by timestamp")
    prices = np.array([r.price for r in records], dtype=np.float64)
    in_session = minutes <= SESSION_CLOSE
    if not in_session.any():
        raise DegenerateGridError(f"no trades in session for {ticker} {day}")
    grid, valid = _grid_prices(minutes[in_session], prices[in_session])
    return IntradayReturnGrid(ticker, day, np.diff(np.log(grid)), valid)


@dataclass
class GridBatch:
    """Return grids for many ticker-days as aligned arrays (one row per ticker-day)."""

    tickers: np.ndarray
    dates: np.ndarray  # datetime64[D]
    returns: np.ndarray  # (n, 78)
    valid_counts: np.ndarray

    def __len__(self) -> int:
        return len(self.tickers)

    def __iter__(self) -> Iterator[IntradayReturnGrid]:
        for i in range(len(self)):
            yield IntradayReturnGrid(str(self.tickers[i]), self.dates[i].astype(date), self.returns[i],
                                     int(self.valid_counts[i]))

    @classmethod
    def from_grids(cls, grids: Iterable[IntradayReturnGrid]) -> "GridBatch":
        grids = list(grids)
        k = len(grids[0].returns) if grids else N_GRID_RETURNS
        return cls(
            tickers=np.array([g.ticker for g in grids], dtype=object),
            dates=np.array([g.date for g in grids], dtype="datetime64[D]"),
            returns=np.array([g.returns for g in grids], dtype=np.float64).reshape(len(grids), k),
            valid_counts=np.array([g.valid_count for g in grids], dtype=np.int64),
        )

    def select(self, mask: np.ndarray) -> "GridBatch":
        return GridBatch(self.tickers[mask], self.dates[mask], self.returns[mask], self.valid_counts[mask])


def build_return_grids(table: TickTable) -> GridBatch:
    """Vectorized :func:`build_return_grid` over every ticker-day in a table.

    Ticker-days with no trade at or before the close are dropped (degenerate
    grids); the result is ordered by (ticker, date).
    """
    keep = table.minutes <= SESSION_CLOSE
    codes, dates = table.codes[keep], table.dates[keep]
    minutes, prices = table.minutes[keep].astype(np.int64), table.prices[keep]
    n = len(prices)
    if n == 0:
        return GridBatch(np.array([], dtype=object), np.array([], dtype="datetime64[D]"),
                         np.zeros((0, N_GRID_RETURNS)), np.zeros(0, dtype=np.int64))
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = (codes[1:] != codes[:-1]) | (dates[1:] != dates[:-1])
    starts = np.flatnonzero(new_group)
    group = np.cumsum(new_group) - 1
    # boundary j collects the trades in (boundary j-1, boundary j]; earlier trades fall in j = 0
    slot = np.clip(-((SESSION_OPEN - minutes) // GRID_STEP), 0, N_GRID_RETURNS)
    tail = np.ones(n, dtype=bool)
    tail[:-1] = (group[1:] != group[:-1]) | (slot[1:] != slot[:-1])
    last = np.full((len(starts), N_GRID_RETURNS + 1), -1, dtype=np.int64)
    last[group[tail], slot[tail]] = np.flatnonzero(tail)
    backed = last >= 0
    idx = np.maximum.accumulate(last, axis=1)
    grid = prices[np.where(idx < 0, starts[:, None], idx)]
    with np.errstate(divide="ignore"):
        returns = np.diff(np.log(grid), axis=1)
    return GridBatch(table.symbols[codes[starts]], dates[starts], returns, backed.sum(axis=1))


# ---------------------------------------------------------------------------
# trading calendar

@dataclass(frozen=True)
class TradingCalendar:
    """Exchange trading days; ``short_sessions`` are days closing before 16:00."""

    days: np.ndarray  # sorted datetime64[D]
    short_sessions: frozenset = frozenset()

    def last_days(self, month: str, n: int = 5) -> np.ndarray:
        """The last ``n`` full-session trading days of ``month``."""
        days = self.full_days()
        return days[days.astype("datetime64[M]") == np.datetime64(month, "M")][-n:]

    def full_days(self) -> np.ndarray:
        if not self.short_sessions:
            return self.days
        return self.days[~np.isin(self.days, np.array(sorted(self.short_sessions), dtype="datetime64[D]"))]

    def months(self) -> list[str]:
        return sorted({str(m) for m in self.days.astype("datetime64[M]")})

    @classmethod
    def from_days(cls, days) -> "TradingCalendar":
        return cls(np.unique(np.asarray(days, dtype="datetime64[D]")))


def load_trading_calendar(source: Source) -> TradingCalendar:
    days, short = [], set()
    for lineno, line in enumerate(_read_text(source).splitlines(), start=1):
        line = line.strip()
        if not line or line.lower().startswith("date"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            day = date.fromisoformat(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: unparseable trading day {parts[0]!r}")
        days.append(day)
        if len(parts) > 1 and parts[1]:
            try:
                hh, mm = parts[1].split(":")
                close = int(hh) * 60 + int(mm)
            except ValueError:
                raise ParseError(f"line {lineno}: unparseable close time {parts[1]!r}")
            if close < SESSION_CLOSE:
                short.add(np.datetime64(day, "D"))
    return TradingCalendar(np.unique(np.array(days, dtype="datetime64[D]")), frozenset(short))


def write_trading_calendar(path, calendar: TradingCalendar) -> None:
    with open(path, "w") as fh:
        for d in calendar.days:
            fh.write(f"{d}{',13:00' if d in calendar.short_sessions else ''}\n")


# ---------------------------------------------------------------------------
# monthly series

def _check_months(months: Sequence[str]) -> None:
    ords = [month_ordinal(m) for m in months]
    if any(b <= a for a, b in zip(ords, ords[1:])):
        raise ParseError("months not strictly increasing")
    if ords:
        missing = sorted(set(range(ords[0], ords[-1] + 1)) - set(ords))
        if missing:
            raise GapError([ordinal_month(i) for i in missing])


@dataclass(frozen=True)
class MonthlyMarketSeries:
    months: tuple
    excess: np.ndarray  # monthly log excess return of the index
    risk_free: np.ndarray

    def __post_init__(self):
        _check_months(self.months)
        if not (len(self.months) == len(self.excess) == len(self.risk_free)):
            raise DomainError("market series columns differ in length")

    def __len__(self):
        return len(self.months)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for m, r, f in zip(self.months, self.excess, self.risk_free):
                fh.write(f"{m},{format_number(r)},{format_number(f)}\n")


@dataclass(frozen=True)
class MonthlyPredictorSeries:
    name: str
    months: tuple
    values: np.ndarray

    def __post_init__(self):
        _check_months(self.months)
        if len(self.months) != len(self.values):
            raise DomainError("predictor series columns differ in length")
        if not np.all(np.isfinite(self.values)):
            raise DomainError(f"non-finite value in predictor {self.name}")

    def __len__(self):
        return len(self.months)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for m, v in zip(self.months, self.values):
                fh.write(f"{m},{format_number(v)}\n")


def load_monthly_series(source: Source, name: str = "series"):
    """Load a two-column predictor or three-column market series.

    The layout is inferred from the first data row. Gaps inside the declared
    range raise :class:`GapError`; non-numeric or non-finite values raise
    :class:`ParseError` naming the row.
    """
    rows = []
    for lineno, line in enumerate(_read_text(source).splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if not rows and parts[0].lower() in ("month", "date"):
            continue
        month = parse_month(parts[0])
        vals = []
        for p in parts[1:]:
            try:
                v = float(p)
            except ValueError:
                raise ParseError(f"row {lineno}: non-numeric value {p!r}")
            if not math.isfinite(v):
                raise ParseError(f"row {lineno}: non-finite value {p!r}")
            vals.append(v)
        rows.append((lineno, month, vals))
    if not rows:
        return MonthlyPredictorSeries(name, (), np.zeros(0))
    width = len(rows[0][2])
    if width not in (1, 2):
        raise ParseError(f"row {rows[0][0]}: expected 2 or 3 columns")
    for lineno, _, vals in rows:
        if len(vals) != width:
            raise ParseError(f"row {lineno}: inconsistent column count")
    months = tuple(r[1] for r in rows)
    data = np.array([r[2] for r in rows], dtype=np.float64)
    if width == 2:
        return MonthlyMarketSeries(months, data[:, 0].copy(), data[:, 1].copy())
    return MonthlyPredictorSeries(name, months, data[:, 0].copy())


# ---------------------------------------------------------------------------
# event calendars

class CalendarLabel(str, Enum):
    NBER_RECESSION = "NBER_RECESSION"
    FOMC_MEETING = "FOMC_MEETING"
    SENTIMENT_HIGH = "SENTIMENT_HIGH"
    SENTIMENT_LOW = "SENTIMENT_LOW"


@dataclass(frozen=True)
class EventCalendar:
    label: CalendarLabel
    months: frozenset

    def __contains__(self, month: str) -> bool:
        return month in self.months

    def __len__(self):
        return len(self.months)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.writelines(f"{m}\n" for m in sorted(self.months))


def load_calendar(source: Source, label: Union[CalendarLabel, str]) -> EventCalendar:
    label = CalendarLabel(label)
    months = set()
    for lineno, line in enumerate(_read_text(source).splitlines(), start=1):
        if line.strip():
            try:
                months.add(parse_month(line))
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return EventCalendar(label, frozenset(months))
