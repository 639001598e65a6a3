import math
from datetime import date, datetime

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skewdisp.data_ingest import (
    GRID_MINUTES,
    CalendarLabel,
    MonthlyMarketSeries,
    MonthlyPredictorSeries,
    RawTickRecord,
    TickTable,
    TradingCalendar,
    build_return_grid,
    build_return_grids,
    load_calendar,
    load_monthly_series,
    load_trading_calendar,
    parse_bar_file,
    write_bar_file,
)
from skewdisp.errors import DegenerateGridError, FormatError, GapError, ParseError


def tick(hhmm, price, ticker="AAA", day=date(2020, 1, 2)):
    hh, mm = map(int, hhmm.split(":"))
    return RawTickRecord(ticker, datetime(day.year, day.month, day.day, hh, mm), price)


# ---------------------------------------------------------------------------
# bar files

def test_three_line_file_sorted_by_time():
    text = b"AAA,2020-01-02,09:45,101\nAAA,2020-01-02,09:31,100\nAAA,2020-01-02,09:40,100.5\n"
    table = parse_bar_file(text)
    assert len(table) == 3
    assert table.minutes.tolist() == [571, 580, 585]
    assert table.malformed_count == 0


def test_empty_file():
    table = parse_bar_file(b"")
    assert len(table) == 0
    assert table.malformed_count == 0


def test_negative_price_line_counted():
    text = b"AAA,2020-01-02,09:31,100\nAAA,2020-01-02,09:32,-3\nAAA,2020-01-02,09:33,101\n"
    table = parse_bar_file(text)
    assert len(table) == 2
    assert table.malformed == [2]


def test_header_is_skipped(write_text):
    path = write_text("bars.csv", "ticker,date,time,price\nAAA,2020-01-02,09:31,100\n")
    table = parse_bar_file(path)
    assert len(table) == 1 and table.malformed_count == 0


def test_too_many_malformed_lines():
    good = [f"AAA,2020-01-02,{9 + m // 60:02d}:{m % 60:02d},100" for m in range(30, 130)]
    bad = ["AAA,2020-01-02,xx:yy,100", "AAA,2020-01-02,10:00", "AAA,2020-01-02,10:00,nan"]
    with pytest.raises(FormatError) as err:
        parse_bar_file(("\n".join(good + bad) + "\n").encode())
    assert err.value.line_numbers == (101, 102, 103)


def test_one_percent_is_tolerated():
    good = [f"AAA,2020-01-02,{9 + m // 60:02d}:{m % 60:02d},100" for m in range(30, 230)]
    lines = good[:50] + ["AAA,2020-01-02,10:00,0"] + good[50:] + ["AAA,2020-01-02,10:00,1,extra"]
    table = parse_bar_file(("\n".join(lines) + "\n").encode())
    assert len(table) == 200
    assert table.malformed == [51, 202]


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        parse_bar_file("/nonexistent/bars.csv")


def test_equal_timestamps_keep_file_order():
    text = b"BBB,2020-01-02,09:31,7\nAAA,2020-01-02,09:31,2\nAAA,2020-01-02,09:31,1\n"
    table = parse_bar_file(text)
    assert table.tickers.tolist() == ["AAA", "AAA", "BBB"]
    assert table.prices.tolist() == [2.0, 1.0, 7.0]


# ---------------------------------------------------------------------------
# grids

def test_previous_tick_walk():
    grid = build_return_grid([tick("09:31", 100), tick("09:33", 101), tick("09:41", 102)])
    assert len(grid.returns) == 78
    # 09:30 carries the first trade, 09:35 = 101, 09:40 = 101, 09:45 = 102
    assert grid.returns[0] == pytest.approx(math.log(101 / 100), abs=1e-15)
    assert grid.returns[1] == 0.0
    assert grid.returns[2] == pytest.approx(math.log(102 / 101), abs=1e-15)
    assert np.all(grid.returns[3:] == 0)
    assert grid.valid_count == 2


def test_single_trade_at_open():
    grid = build_return_grid([tick("09:30", 100)])
    assert np.all(grid.returns == 0)
    assert grid.valid_count == 1


def test_no_trades():
    with pytest.raises(DegenerateGridError):
        build_return_grid([])


def test_trades_after_close_ignored():
    grid = build_return_grid([tick("09:30", 100), tick("16:00", 110), tick("16:05", 500)])
    assert grid.returns.sum() == pytest.approx(math.log(1.1), abs=1e-15)


ticks = st.lists(
    st.tuples(st.integers(9 * 60, 16 * 60 + 10), st.floats(1.0, 500.0)), min_size=1, max_size=60
)


def _records(raw, ticker="AAA", day=date(2020, 1, 2)):
    raw = sorted(raw, key=lambda t: t[0])
    return [RawTickRecord(ticker, datetime(day.year, day.month, day.day, m // 60, m % 60), p) for m, p in raw]


@given(ticks)
def test_grid_idempotent(raw):
    recs = _records(raw)
    if min(m for m, _ in raw) > 16 * 60:
        return
    grid = build_return_grid(recs)
    open_price = next((r.price for r in reversed(recs) if r.timestamp.hour * 60 + r.timestamp.minute <= 570),
                      recs[0].price)
    prices = open_price * np.exp(np.concatenate(([0.0], np.cumsum(grid.returns))))
    again = build_return_grid(_records(list(zip(GRID_MINUTES.tolist(), prices.tolist()))))
    np.testing.assert_allclose(again.returns, grid.returns, rtol=0, atol=1e-12)
    assert again.valid_count == 79


@given(ticks)
def test_returns_sum_to_log_close_over_open(raw):
    recs = _records(raw)
    session = [r for r in recs if r.timestamp.hour * 60 + r.timestamp.minute <= 960]
    if not session:
        return
    at_open = [r for r in session if r.timestamp.hour * 60 + r.timestamp.minute <= 570]
    open_price = at_open[-1].price if at_open else session[0].price
    grid = build_return_grid(recs)
    assert abs(grid.returns.sum() - math.log(session[-1].price / open_price)) <= 1e-12


@given(st.lists(st.tuples(st.sampled_from(["AAA", "BB", "C"]), st.integers(0, 2), st.integers(540, 975),
                          st.floats(1.0, 100.0)), min_size=1, max_size=80))
def test_vectorized_grids_match_scalar(raw):
    recs = [RawTickRecord(t, datetime(2020, 1, 2 + d, m // 60, m % 60), p) for t, d, m, p in raw]
    batch = build_return_grids(TickTable.from_records(recs))
    expected = []
    for key in sorted({(r.ticker, r.timestamp.date()) for r in recs}):
        day = sorted((r for r in recs if (r.ticker, r.timestamp.date()) == key), key=lambda r: r.timestamp)
        try:
            expected.append(build_return_grid(day))
        except DegenerateGridError:
            pass
    assert len(batch) == len(expected)
    for got, want in zip(batch, expected):
        assert (got.ticker, got.date) == (want.ticker, want.date)
        np.testing.assert_allclose(got.returns, want.returns, rtol=0, atol=1e-15)
        assert got.valid_count == want.valid_count


@given(st.lists(st.tuples(st.sampled_from(["AAA", "XYZ"]), st.integers(570, 960), st.floats(0.01, 1e4)),
                min_size=1, max_size=40))
def test_bar_file_round_trip(tmp_path_factory, raw):
    path = tmp_path_factory.mktemp("bars") / "bars.csv"
    tickers, minutes, prices = zip(*raw)
    write_bar_file(path, tickers, [np.datetime64("2021-06-01")] * len(raw), minutes, prices)
    first = parse_bar_file(str(path))
    write_bar_file(path, first.tickers, first.dates, first.minutes, first.prices, header=True)
    second = parse_bar_file(str(path))
    assert first.tickers.tolist() == second.tickers.tolist()
    assert first.minutes.tolist() == second.minutes.tolist()
    assert first.prices.tolist() == second.prices.tolist()


# ---------------------------------------------------------------------------
# monthly series and calendars

def test_twelve_months():
    text = "".join(f"2007-{m:02d},0.01\n" for m in range(1, 13)).encode()
    series = load_monthly_series(text, "x")
    assert isinstance(series, MonthlyPredictorSeries)
    assert len(series) == 12


def test_market_layout():
    series = load_monthly_series(b"2007-01,0.01,0.002\n2007-02,-0.02,0.002\n")
    assert isinstance(series, MonthlyMarketSeries)
    assert series.excess.tolist() == [0.01, -0.02]


def test_gap_names_missing_month():
    text = "".join(f"2007-{m:02d},0.01\n" for m in range(1, 13) if m != 3).encode()
    with pytest.raises(GapError) as err:
        load_monthly_series(text)
    assert err.value.missing == ("2007-03",)
    assert "2007-03" in str(err.value)


def test_nan_value_names_row():
    with pytest.raises(ParseError, match="row 2"):
        load_monthly_series(b"2007-01,0.01\n2007-02,NaN\n")


def test_non_numeric_value():
    with pytest.raises(ParseError, match="row 1"):
        load_monthly_series(b"2007-01,abc\n")


values = st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False), min_size=1, max_size=30)


@given(values)
def test_predictor_round_trip(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("series") / "x.csv"
    months = tuple(f"{1990 + i // 12}-{i % 12 + 1:02d}" for i in range(len(vals)))
    MonthlyPredictorSeries("x", months, np.array(vals)).write(path)
    first = load_monthly_series(str(path), "x")
    first.write(path)
    second = load_monthly_series(str(path), "x")
    assert first.months == second.months
    assert first.values.tolist() == second.values.tolist()


@given(values)
def test_market_round_trip(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("series") / "m.csv"
    months = tuple(f"{1990 + i // 12}-{i % 12 + 1:02d}" for i in range(len(vals)))
    MonthlyMarketSeries(months, np.array(vals) / 1e6, np.full(len(vals), 0.001)).write(path)
    first = load_monthly_series(str(path))
    first.write(path)
    second = load_monthly_series(str(path))
    assert first.excess.tolist() == second.excess.tolist()
    assert first.risk_free.tolist() == second.risk_free.tolist()


def test_fomc_dedup():
    months = [f"2019-{m:02d}" for m in (1, 3, 5, 6, 7, 9, 10, 12)]
    cal = load_calendar(("\n".join(months * 2) + "\n").encode(), CalendarLabel.FOMC_MEETING)
    assert len(cal) == 8
    assert cal.label is CalendarLabel.FOMC_MEETING


def test_empty_calendar():
    assert len(load_calendar(b"", "NBER_RECESSION")) == 0


def test_bad_month_token():
    with pytest.raises(ParseError, match="2020-13"):
        load_calendar(b"2020-12\n2020-13\n", "FOMC_MEETING")


def test_calendar_round_trip(tmp_path):
    cal = load_calendar(b"2001-03\n2001-04\n2008-12\n", "NBER_RECESSION")
    cal.write(tmp_path / "c.csv")
    assert load_calendar(str(tmp_path / "c.csv"), "NBER_RECESSION") == cal


def test_trading_calendar_short_sessions():
    cal = load_trading_calendar(b"2020-11-25\n2020-11-27,13:00\n2020-11-30,16:00\n")
    assert len(cal.days) == 3
    assert cal.short_sessions == frozenset({np.datetime64("2020-11-27")})
    # the half-day never counts among the last trading days
    assert cal.last_days("2020-11", 2).astype(str).tolist() == ["2020-11-25", "2020-11-30"]


def test_last_days_uses_calendar_not_civil_dates():
    days = np.array(["2021-03-25", "2021-03-26", "2021-03-29", "2021-03-30", "2021-03-31"], dtype="datetime64[D]")
    cal = TradingCalendar.from_days(days)
    assert cal.last_days("2021-03", 3).astype(str).tolist() == ["2021-03-29", "2021-03-30", "2021-03-31"]
