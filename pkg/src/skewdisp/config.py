"""Run configuration: a flat ``key = value`` file with a generated template.

Relative paths resolve against the directory holding the config file.
Unknown keys are rejected so typos fail before any work starts.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ValidationError

TEMPLATE = """\
# skewdisp run configuration
# One "key = value" per line; text after '#' is a comment.
# Relative paths resolve against the directory of this file.

# ---- inputs
# bar file: TICKER,YYYY-MM-DD,HH:MM,PRICE (header optional)
bars = bars.csv
# trading days: YYYY-MM-DD[,HH:MM close]; empty derives the days from the bar file
trading_calendar =
# market series: YYYY-MM,log_excess_return,risk_free
market = market.csv
# directory of YYYY-MM,value control series (one per *.csv); empty for none
controls_dir =
# month calendars, one YYYY-MM per line; empty disables the filter
nber_calendar =
fomc_calendar =
# monthly series (YYYY-MM,value) whose median splits the sample; comma list, may be empty
regime_series =
# where every stage writes its outputs
output_dir = output

# ---- dispersion
# moments: skewness, kurtosis
moments = skewness,kurtosis
# upper-lower percentile pairs
percentile_pairs = 95-5,90-10,85-15,80-20,75-25
# daily-to-monthly aggregation over the last trading days: mean, median
aggregations = mean,median
# trading days per month entering the aggregation
last_days = 5
# minimum stocks in a daily cross-section
min_breadth = 100
# minimum trade-backed grid points for a stock-day to count
min_valid_points = 10

# ---- in-sample regressions
# dispersion series used by regress, oos and backtest; "all" uses every skewness series
predictors = all
# forecast horizons in months
horizons = 1,3,6,12
# sample filters: FULL, FOMC (needs fomc_calendar), REGIME (needs regime_series)
filters = FULL
min_obs = 24
min_obs_per_offset = 12

# ---- out-of-sample
# first estimation endpoint (YYYY-MM); empty places it min_history months into the sample
oos_start =
min_history = 24

# ---- allocation
gamma = 3
weight_floor = -0.5
weight_cap = 1.5
# trailing months in the variance forecast
variance_window = 60

# ---- simulate (synthetic study written by the simulate subcommand)
sim_stocks = 500
sim_days = 252
sim_days_per_month = 6
sim_start_month = 2000-01
"""

_PATH_KEYS = ("bars", "trading_calendar", "market", "controls_dir", "nber_calendar", "fomc_calendar", "output_dir")


def _ints(text: str, key: str) -> tuple:
    try:
        vals = tuple(int(t) for t in _items(text))
    except ValueError:
        raise ValidationError(f"{key}: expected a comma list of integers, got {text!r}")
    return vals


def _items(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass(frozen=True)
class RunConfig:
    base_dir: str = "."
    bars: Optional[str] = None
    trading_calendar: Optional[str] = None
    market: Optional[str] = None
    controls_dir: Optional[str] = None
    nber_calendar: Optional[str] = None
    fomc_calendar: Optional[str] = None
    regime_series: tuple = ()
    output_dir: str = "output"
    moments: tuple = ("skewness", "kurtosis")
    percentile_pairs: tuple = ((95, 5), (90, 10), (85, 15), (80, 20), (75, 25))
    aggregations: tuple = ("mean", "median")
    last_days: int = 5
    min_breadth: int = 100
    min_valid_points: int = 10
    predictors: tuple = ("all",)
    horizons: tuple = (1, 3, 6, 12)
    filters: tuple = ("FULL",)
    min_obs: int = 24
    min_obs_per_offset: int = 12
    oos_start: Optional[str] = None
    min_history: int = 24
    gamma: float = 3.0
    weight_floor: float = -0.5
    weight_cap: float = 1.5
    variance_window: int = 60
    sim_stocks: int = 500
    sim_days: int = 252
    sim_days_per_month: Optional[int] = 6
    sim_start_month: str = "2000-01"
    extra: dict = field(default_factory=dict)

    def path(self, key: str) -> Optional[str]:
        value = getattr(self, key)
        if value is None:
            return None
        return value if os.path.isabs(value) else os.path.normpath(os.path.join(self.base_dir, value))

    def out(self, *parts: str) -> str:
        return os.path.join(self.path("output_dir"), *parts)

    def regime_paths(self) -> list[str]:
        return [p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))
                for p in self.regime_series]

    def with_output(self, out_dir: str) -> "RunConfig":
        return replace(self, output_dir=os.path.abspath(out_dir))


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                       empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse config: {exc}") from None
    raw = dict(parser["run"])
    known = {f.name for f in fields(RunConfig)} - {"base_dir", "extra"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")

    kw = {"base_dir": base_dir}
    for key, value in raw.items():
        value = value.strip()
        if key in _PATH_KEYS or key in ("oos_start",):
            kw[key] = value or None
        elif key in ("moments", "aggregations", "predictors", "filters", "regime_series"):
            kw[key] = tuple(_items(value))
        elif key == "percentile_pairs":
            pairs = []
            for tok in _items(value):
                try:
                    a, b = tok.split("-")
                    pairs.append((float(a), float(b)))
                except ValueError:
                    raise ValidationError(f"percentile_pairs: bad pair {tok!r} (expected a-b)")
            kw[key] = tuple(pairs)
        elif key == "horizons":
            kw[key] = _ints(value, key)
        elif key in ("gamma", "weight_floor", "weight_cap"):
            try:
                kw[key] = float(value)
            except ValueError:
                raise ValidationError(f"{key}: expected a number, got {value!r}")
        elif key == "sim_start_month":
            kw[key] = value
        elif key == "sim_days_per_month":
            kw[key] = int(value) if value else None
        else:
            try:
                kw[key] = int(value)
            except ValueError:
                raise ValidationError(f"{key}: expected an integer, got {value!r}")
    if "output_dir" in kw and kw["output_dir"] is None:
        raise ValidationError("output_dir must not be empty")
    return check_values(RunConfig(**kw))


def check_values(cfg: RunConfig) -> RunConfig:
    """Checks that need no file system access."""
    from .data_ingest import parse_month
    from .errors import ParseError

    if not cfg.horizons or any(h < 1 for h in cfg.horizons):
        raise ValidationError("horizons must be positive integers")
    for m in cfg.moments:
        if m not in ("skewness", "kurtosis"):
            raise ValidationError(f"unknown moment {m!r}")
    for a in cfg.aggregations:
        if a not in ("mean", "median"):
            raise ValidationError(f"unknown aggregation {a!r}")
    for a, b in cfg.percentile_pairs:
        if not 0 <= b < a <= 100:
            raise ValidationError(f"percentile pair {a:g}-{b:g} must satisfy 0 <= b < a <= 100")
    for f in cfg.filters:
        if f not in ("FULL", "FOMC", "REGIME"):
            raise ValidationError(f"unknown filter {f!r}")
    if not cfg.gamma > 0:
        raise ValidationError("gamma must be positive")
    if not cfg.weight_floor < cfg.weight_cap:
        raise ValidationError("weight_floor must lie below weight_cap")
    for key in ("last_days", "min_breadth", "min_obs", "min_obs_per_offset", "min_history", "variance_window",
                "sim_stocks", "sim_days"):
        if getattr(cfg, key) < 1:
            raise ValidationError(f"{key} must be positive")
    try:
        if cfg.oos_start:
            parse_month(cfg.oos_start)
        parse_month(cfg.sim_start_month)
    except ParseError as exc:
        raise ValidationError(str(exc)) from None
    return cfg


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)))


def write_template(path: str) -> None:
    if os.path.exists(path):
        raise ValidationError(f"refusing to overwrite existing file {path}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TEMPLATE)


def render_config(settings: dict) -> str:
    """Template text with selected keys replaced (used by ``simulate``)."""
    lines = []
    for line in TEMPLATE.splitlines():
        key = line.split("=", 1)[0].strip() if "=" in line and not line.lstrip().startswith("#") else None
        if key in settings:
            lines.append(f"{key} = {settings[key]}")
        else:
            lines.append(line)
    return "\n".join(lines) + "\n"
