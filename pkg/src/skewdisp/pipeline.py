"""Pipeline stages behind the CLI subcommands.

Each stage validates everything it needs before computing, writes into a
staging directory and moves it into place only on success, so a failed run
leaves no partial outputs. All text outputs are deterministic; timings go
to the log only.
"""

from __future__ import annotations

import glob
import logging
import os
import shutil
import time
from typing import Optional

import numpy as np

from . import allocation, dispersion, oos_eval
from .config import RunConfig, render_config
from .data_ingest import (
    CalendarLabel,
    MonthlyMarketSeries,
    MonthlyPredictorSeries,
    TradingCalendar,
    build_return_grids,
    format_number,
    load_calendar,
    load_monthly_series,
    load_trading_calendar,
    parse_bar_file,
    write_trading_calendar,
)
from .errors import DataError, InsufficientSampleError, ValidationError
from .predictive_regression import (
    FULL,
    Method,
    correlation,
    exclude_nber,
    partition_fomc,
    regime,
    run_bivariate,
    run_ivx,
    run_nonoverlapping,
    run_univariate,
)
from .predictive_regression.filters import RegimeRule
from .realized_moments import MomentPanel, build_moment_panel, write_snapshots

log = logging.getLogger(__name__)

REGRESSION_HEADER = "predictor,method,filter,h,alpha,beta1,t1,adj_r2,n_obs"
BIVARIATE_HEADER = "predictor,method,filter,h,alpha,beta1,t1,beta2,t2,adj_r2,n_obs"
OOS_HEADER = "predictor,h,r2_oos,cw_t,lambda,lambda_t"
PERFORMANCE_HEADER = "predictor,h,cer_gain_bps,sharpe"


# ---------------------------------------------------------------------------
# helpers

def _with_context(exc: Exception, where: str) -> Exception:
    if exc.args:
        exc.args = (f"{where}: {exc.args[0]}",) + exc.args[1:]
    return exc


def _require_file(path: Optional[str], what: str) -> None:
    if path is None:
        raise ValidationError(f"{what} is not configured")
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")


def _write_lines(path: str, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in lines)


class _Stage:
    """Stage output directory written atomically."""

    def __init__(self, cfg: RunConfig, name: str):
        self.final = cfg.out(name)
        self.tmp = cfg.out(f".{name}.partial")

    def __enter__(self) -> str:
        shutil.rmtree(self.tmp, ignore_errors=True)
        os.makedirs(self.tmp)
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        shutil.rmtree(self.final, ignore_errors=True)
        os.replace(self.tmp, self.final)
        return False


def series_names(cfg: RunConfig) -> list[str]:
    return [f"{m}_{a:g}_{b:g}_{g}" for m in cfg.moments for a, b in cfg.percentile_pairs for g in cfg.aggregations]


def predictor_names(cfg: RunConfig) -> list[str]:
    names = series_names(cfg)
    if tuple(cfg.predictors) == ("all",):
        chosen = [n for n in names if n.startswith("skewness_")]
        if not chosen:
            raise ValidationError("predictors = all needs skewness among the configured moments")
        return chosen
    unknown = [p for p in cfg.predictors if p not in names]
    if unknown:
        raise ValidationError(f"predictors not produced by the dispersion settings: {', '.join(unknown)}")
    return list(cfg.predictors)


# ---------------------------------------------------------------------------
# validation

def validate(cfg: RunConfig, stage: str) -> None:
    """Total validation of the inputs a stage needs; raises ValidationError."""
    if stage == "moments":
        _require_file(cfg.path("bars"), "bar file")
        if cfg.trading_calendar:
            _require_file(cfg.path("trading_calendar"), "trading calendar")
        return
    if stage == "dispersion":
        _require_file(cfg.out("moments", "panel.csv"), "moment panel (run the moments stage first)")
        _require_file(cfg.out("moments", "trading_days.csv"), "trading calendar from the moments stage")
        return
    # regress, oos, backtest
    _require_file(cfg.path("market"), "market series")
    for name in predictor_names(cfg):
        _require_file(cfg.out("dispersion", f"{name}.csv"), f"predictor series {name} (run dispersion first)")
    if cfg.controls_dir and not os.path.isdir(cfg.path("controls_dir")):
        raise ValidationError(f"controls directory not found: {cfg.path('controls_dir')}")
    if cfg.nber_calendar:
        _require_file(cfg.path("nber_calendar"), "NBER calendar")
    if cfg.fomc_calendar:
        _require_file(cfg.path("fomc_calendar"), "FOMC calendar")
    for p in cfg.regime_paths():
        _require_file(p, "regime series")
    if stage == "regress":
        if "FOMC" in cfg.filters and not cfg.fomc_calendar:
            raise ValidationError("filter FOMC needs fomc_calendar")
        if "REGIME" in cfg.filters and not cfg.regime_series:
            raise ValidationError("filter REGIME needs regime_series")


# ---------------------------------------------------------------------------
# moments

def cmd_moments(cfg: RunConfig) -> dict:
    validate(cfg, "moments")
    started = time.perf_counter()
    bars = cfg.path("bars")
    try:
        table = parse_bar_file(bars)
    except DataError as exc:
        raise _with_context(exc, bars)
    grids = build_return_grids(table)
    if cfg.trading_calendar:
        cal_path = cfg.path("trading_calendar")
        try:
            calendar = load_trading_calendar(cal_path)
        except DataError as exc:
            raise _with_context(exc, cal_path)
        unknown = np.setdiff1d(np.unique(grids.dates), calendar.days)
        if unknown.size:
            raise DataError(f"{bars}: bar dates outside the trading calendar: "
                            + ", ".join(str(d) for d in unknown[:10]))
    else:
        calendar = TradingCalendar.from_days(grids.dates)
    short = np.isin(grids.dates, np.array(sorted(calendar.short_sessions), dtype="datetime64[D]"))
    if short.any():
        log.info("excluding %d stock-days on %d short sessions", int(short.sum()),
                 len(np.unique(grids.dates[short])))
    panel = build_moment_panel(grids.select(~short), min_valid=cfg.min_valid_points)

    with _Stage(cfg, "moments") as out:
        panel.write(os.path.join(out, "panel.csv"))
        write_snapshots(os.path.join(out, "snapshots_long.csv"), panel)
        write_trading_calendar(os.path.join(out, "trading_days.csv"), calendar)
        _write_lines(os.path.join(out, "report.txt"), [
            f"bar_lines={len(table) + table.malformed_count}",
            f"malformed_lines={table.malformed_count}",
            f"stock_days={len(grids)}",
            f"excluded_short_session={int(short.sum())}",
            f"excluded_illiquid={panel.excluded_illiquid}",
            f"excluded_zero_variance={panel.excluded - panel.excluded_illiquid}",
            f"panel_rows={len(panel)}",
            f"trading_days={len(calendar.days)}",
        ])
    log.info("moments: %d stock-days in %.2f s", len(panel), time.perf_counter() - started)
    return {"panel": cfg.out("moments", "panel.csv"), "rows": len(panel)}


# ---------------------------------------------------------------------------
# dispersion

def cmd_dispersion(cfg: RunConfig) -> dict:
    validate(cfg, "dispersion")
    panel = MomentPanel.read(cfg.out("moments", "panel.csv"))
    calendar = load_trading_calendar(cfg.out("moments", "trading_days.csv"))
    produced = []
    with _Stage(cfg, "dispersion") as out:
        long_lines = ["series,month,value"]
        for moment in cfg.moments:
            snaps = panel.snapshots(moment)
            for a, b in cfg.percentile_pairs:
                dates, daily = dispersion.daily_dispersion_path(snaps, a, b, cfg.min_breadth)
                for agg in cfg.aggregations:
                    months, vals = dispersion.monthly_aggregate(dates, daily, calendar, agg, cfg.last_days)
                    series = dispersion.DispersionSeries(dispersion.Moment(moment), a, b,
                                                         dispersion.Aggregation(agg), tuple(months), vals)
                    series.write(os.path.join(out, f"{series.name}.csv"))
                    produced.append(series.name)
                    long_lines += [f"{series.name},{m},{format_number(v)}" for m, v in zip(months, vals.tolist())]
        _write_lines(os.path.join(out, "dispersion_long.csv"), long_lines)
    return {"series": produced}


# ---------------------------------------------------------------------------
# shared loading for regress / oos / backtest

def _load_market(cfg: RunConfig) -> MonthlyMarketSeries:
    path = cfg.path("market")
    try:
        market = load_monthly_series(path, "market")
    except DataError as exc:
        raise _with_context(exc, path)
    if not isinstance(market, MonthlyMarketSeries):
        raise DataError(f"{path}: market file needs three columns (month, excess return, risk-free)")
    return market


def _load_predictor(path: str, name: str) -> MonthlyPredictorSeries:
    try:
        series = load_monthly_series(path, name)
    except DataError as exc:
        raise _with_context(exc, path)
    if not isinstance(series, MonthlyPredictorSeries):
        raise DataError(f"{path}: expected two columns (month, value)")
    return series


def _load_inputs(cfg: RunConfig) -> dict:
    market = _load_market(cfg)
    preds = [_load_predictor(cfg.out("dispersion", f"{n}.csv"), n) for n in predictor_names(cfg)]
    controls = []
    if cfg.controls_dir:
        for path in sorted(glob.glob(os.path.join(cfg.path("controls_dir"), "*.csv"))):
            controls.append(_load_predictor(path, os.path.splitext(os.path.basename(path))[0]))
    cals = {}
    for key, label in (("nber_calendar", CalendarLabel.NBER_RECESSION), ("fomc_calendar", CalendarLabel.FOMC_MEETING)):
        if getattr(cfg, key):
            try:
                cals[key] = load_calendar(cfg.path(key), label)
            except DataError as exc:
                raise _with_context(exc, cfg.path(key))
    regimes = [_load_predictor(p, os.path.splitext(os.path.basename(p))[0]) for p in cfg.regime_paths()]
    return {"market": market, "predictors": preds, "controls": controls, "calendars": cals, "regimes": regimes}


def _base_filters(cfg: RunConfig, months, inputs) -> list:
    out = []
    for name in cfg.filters:
        if name == "FULL":
            out.append(FULL)
        elif name == "FOMC":
            out.extend(partition_fomc(months, inputs["calendars"]["fomc_calendar"]).values())
        elif name == "REGIME":
            for series in inputs["regimes"]:
                out.append(regime(series, RegimeRule.ABOVE_MEDIAN))
                out.append(regime(series, RegimeRule.BELOW_MEDIAN))
    return out


# ---------------------------------------------------------------------------
# regress

def cmd_regress(cfg: RunConfig) -> dict:
    """Univariate rows for every (predictor, h, base filter), panels A-D.

    A  NW_OVERLAPPING on the filter
    B  NW_OVERLAPPING on the filter with NBER recession months removed (needs nber_calendar)
    C  NONOVERLAPPING_AVG on the filter
    D  IVX on the filter

    Cells whose subsample is too short are listed in ``skipped.csv`` rather
    than aborting the table; degenerate statistics abort with exit code 3.
    """
    validate(cfg, "regress")
    inputs = _load_inputs(cfg)
    market = inputs["market"]
    nber = inputs["calendars"].get("nber_calendar")
    rows, skipped = [REGRESSION_HEADER], ["predictor,method,filter,h,reason"]

    def attempt(fn, label, method, filt, h, *args, **kw):
        try:
            rows.append(fn(*args, **kw).row())
        except InsufficientSampleError as exc:
            skipped.append(f"{label},{method},{filt.describe()},{h},{str(exc).replace(',', ';')}")

    for pred in inputs["predictors"]:
        bases = _base_filters(cfg, pred.months, inputs)
        for h in cfg.horizons:
            for base in bases:
                attempt(run_univariate, pred.name, "NW_OVERLAPPING", base, h, pred, market, h, base, cfg.min_obs)
                if nber is not None:
                    ex = exclude_nber(nber) if base is FULL else base & exclude_nber(nber)
                    attempt(run_univariate, pred.name, "NW_OVERLAPPING", ex, h, pred, market, h, ex, cfg.min_obs)
                attempt(run_nonoverlapping, pred.name, "NONOVERLAPPING_AVG", base, h, pred, market, h, base,
                        cfg.min_obs if h == 1 else cfg.min_obs_per_offset)
                attempt(run_ivx, pred.name, "IVX", base, h, pred, market, h, base, cfg.min_obs)

    biv = [BIVARIATE_HEADER]
    corr = ["predictor,control,correlation"]
    for pred in inputs["predictors"]:
        for ctrl in inputs["controls"]:
            corr.append(f"{pred.name},{ctrl.name},{format_number(correlation(pred, ctrl))}")
            for h in cfg.horizons:
                for fn, method in ((run_bivariate, "NW_OVERLAPPING"), (run_ivx, "IVX")):
                    label = f"{pred.name}+{ctrl.name}"
                    try:
                        if fn is run_bivariate:
                            res = run_bivariate(pred, ctrl, market, h, FULL, cfg.min_obs)
                        else:
                            res = run_ivx(pred, market, h, FULL, cfg.min_obs, control=ctrl)
                        biv.append(res.row())
                    except InsufficientSampleError as exc:
                        skipped.append(f"{label},{method},FULL,{h},{str(exc).replace(',', ';')}")

    with _Stage(cfg, "regress") as out:
        _write_lines(os.path.join(out, "univariate.csv"), rows)
        _write_lines(os.path.join(out, "bivariate.csv"), biv)
        _write_lines(os.path.join(out, "correlations.csv"), corr)
        _write_lines(os.path.join(out, "skipped.csv"), skipped)
        _write_lines(os.path.join(out, "metadata.txt"), [
            "panels=A:NW_OVERLAPPING,B:NW_OVERLAPPING&EXCLUDE_NBER,C:NONOVERLAPPING_AVG,D:IVX",
            "nw_lags=h-1",
            "ivx_t=signed sqrt of per-coefficient Wald",
            "ivx_wald=per-coefficient",
        ])
    return {"rows": len(rows) - 1, "bivariate_rows": len(biv) - 1, "skipped": len(skipped) - 1}


# ---------------------------------------------------------------------------
# oos

def _oos_start(cfg: RunConfig, predictor: MonthlyPredictorSeries, market: MonthlyMarketSeries) -> str:
    if cfg.oos_start:
        return cfg.oos_start
    shared = [m for m in predictor.months if m in set(market.months)]
    if len(shared) <= cfg.min_history:
        raise InsufficientSampleError(f"{len(shared)} months cannot leave {cfg.min_history} months of history")
    return shared[cfg.min_history]


def _forecast_lines(records) -> list[str]:
    out = ["month,h,model,benchmark,realized"]
    for r in records:
        realized = "" if r.realized is None else format_number(r.realized)
        out.append(f"{r.month},{r.h},{format_number(r.model)},{format_number(r.benchmark)},{realized}")
    return out


def cmd_oos(cfg: RunConfig) -> dict:
    """Expanding-window forecasts for each predictor, control and predictor+control pair."""
    validate(cfg, "oos")
    inputs = _load_inputs(cfg)
    market = inputs["market"]
    summary = [OOS_HEADER]
    t0 = _oos_start(cfg, inputs["predictors"][0], market)
    with _Stage(cfg, "oos") as out:
        os.makedirs(os.path.join(out, "forecasts"))
        os.makedirs(os.path.join(out, "cum_sse"))

        def run(series, label, h):
            recs = oos_eval.expanding_forecasts(series, market, h, t0, cfg.min_history)
            ev = oos_eval.evaluate(recs, h)
            _write_lines(os.path.join(out, "forecasts", f"{label}_h{h}.csv"), _forecast_lines(recs))
            _write_lines(os.path.join(out, "cum_sse", f"{label}_h{h}.csv"),
                         ["month,cum_diff"] + [f"{m},{format_number(v)}" for m, v in ev.cum_sse_diff])
            return recs, ev

        for h in cfg.horizons:
            ctrl_recs = {}
            for ctrl in inputs["controls"]:
                recs, ev = run(ctrl, ctrl.name, h)
                ctrl_recs[ctrl.name] = recs
                summary.append(ev.summary_row(ctrl.name, h))
            for pred in inputs["predictors"]:
                recs, ev = run(pred, pred.name, h)
                summary.append(ev.summary_row(pred.name, h))
                for ctrl in inputs["controls"]:
                    label = f"{pred.name}+{ctrl.name}"
                    _, ev_b = run([pred, ctrl], label, h)
                    enc = oos_eval.encompassing_from_records(ctrl_recs[ctrl.name], recs, h)
                    summary.append(ev_b.summary_row(label, h, enc.lambda_hat, enc.test_stat))
        _write_lines(os.path.join(out, "summary.csv"), summary)
        _write_lines(os.path.join(out, "metadata.txt"), [
            f"t0={t0}",
            "t0_role=first estimation endpoint; the first realized forecast covers t0+1..t0+h",
            "benchmark=historical average of the same h-month targets",
            "lambda=weight on the dispersion forecast against the control-only forecast (rows predictor+control)",
            "cw_nw_lags=h-1",
        ])
    return {"rows": len(summary) - 1, "t0": t0}


# ---------------------------------------------------------------------------
# backtest

def cmd_backtest(cfg: RunConfig) -> dict:
    """CER gains over the historical-average investor, Sharpe ratios and wealth paths."""
    validate(cfg, "backtest")
    inputs = _load_inputs(cfg)
    market = inputs["market"]
    t0 = _oos_start(cfg, inputs["predictors"][0], market)
    perf = [PERFORMANCE_HEADER]
    detail = ["strategy,h,periods,cer,cer_gain_bps,sharpe_per_period,sharpe_annualized"]
    with _Stage(cfg, "backtest") as out:
        os.makedirs(os.path.join(out, "wealth"))
        os.makedirs(os.path.join(out, "weights"))

        def emit(label, h, res, bench):
            gain = allocation.cer_gain(res, bench, h)
            perf.append(allocation.performance_row(label, h, gain, res.sharpe_annualized))
            detail.append(",".join([label, str(h), str(len(res.months)), format_number(res.cer), format_number(gain),
                                    format_number(res.sharpe_per_period), format_number(res.sharpe_annualized)]))
            _write_lines(os.path.join(out, "wealth", f"{label}_h{h}.csv"),
                         ["month,log_wealth"] + [f"{m},{format_number(v)}" for m, v in res.log_wealth])
            _write_lines(os.path.join(out, "weights", f"{label}_h{h}.csv"),
                         ["month,weight"] + [f"{m},{format_number(w)}" for m, w in res.weight_path()])

        for h in cfg.horizons:
            acfg = allocation.AllocationConfig(cfg.gamma, cfg.weight_floor, cfg.weight_cap, h, cfg.variance_window)
            base_recs = oos_eval.expanding_forecasts(inputs["predictors"][0], market, h, t0, cfg.min_history)
            bench = allocation.backtest(base_recs, market, acfg, "benchmark")
            emit("historical_average", h, bench, bench)
            emit("buy_and_hold", h, allocation.backtest(base_recs, market, acfg, fixed_weight=1.0), bench)
            for series in inputs["predictors"] + inputs["controls"]:
                recs = oos_eval.expanding_forecasts(series, market, h, t0, cfg.min_history)
                emit(series.name, h, allocation.backtest(recs, market, acfg, "model"), bench)
        _write_lines(os.path.join(out, "performance.csv"), perf)
        _write_lines(os.path.join(out, "performance_detail.csv"), detail)
        _write_lines(os.path.join(out, "metadata.txt"), [
            f"t0={t0}",
            f"gamma={format_number(cfg.gamma)}",
            f"weight_bounds={format_number(cfg.weight_floor)},{format_number(cfg.weight_cap)}",
            "cer_gain=annualized bps over the historical-average investor",
            "sharpe=annualized (performance.csv); per-period in performance_detail.csv",
            "variance_forecast=h^2 * sample variance of overlapping h-month average returns, trailing window",
        ])
    return {"rows": len(perf) - 1}


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(cfg: RunConfig, seed: int) -> dict:
    """Write a synthetic study (inputs plus config) into the output directory."""
    from .synthetic_testkit import SyntheticStudySpec, write_synthetic_study

    root = cfg.path("output_dir")
    if os.path.exists(os.path.join(root, "inputs")):
        raise ValidationError(f"{root} already holds a synthetic study")
    spec = SyntheticStudySpec(n_stocks=cfg.sim_stocks, n_days=cfg.sim_days, days_per_month=cfg.sim_days_per_month,
                              start_month=cfg.sim_start_month, seed=seed)
    staging = os.path.join(root, ".inputs.partial")
    shutil.rmtree(staging, ignore_errors=True)
    try:
        write_synthetic_study(staging, spec)
        os.replace(staging, os.path.join(root, "inputs"))
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    n_months = len({d[:7] for d in open(os.path.join(root, "inputs", "trading_days.csv")).read().split()})
    # keep horizons with 12 observations per non-overlapping offset and 12 realized forecasts
    horizons = ",".join(str(h) for h in (1, 3, 6, 12)
                        if n_months >= max(12 * h, cfg.min_history + 12) + h) or "1"
    text = render_config({
        "bars": "inputs/bars.csv",
        "trading_calendar": "inputs/trading_days.csv",
        "market": "inputs/market.csv",
        "controls_dir": "inputs/controls",
        "nber_calendar": "inputs/nber.csv",
        "fomc_calendar": "inputs/fomc.csv",
        "regime_series": "inputs/sentiment.csv",
        "output_dir": "results",
        "horizons": horizons,
        "filters": "FULL,FOMC,REGIME",
        "sim_stocks": cfg.sim_stocks,
        "sim_days": cfg.sim_days,
        "sim_days_per_month": cfg.sim_days_per_month or "",
        "sim_start_month": cfg.sim_start_month,
    })
    config_path = os.path.join(root, "skewdisp.cfg")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(f"# synthetic study, seed {seed}\n" + text)
    return {"config": config_path, "months": n_months}


STAGES = {
    "moments": cmd_moments,
    "dispersion": cmd_dispersion,
    "regress": cmd_regress,
    "oos": cmd_oos,
    "backtest": cmd_backtest,
}
