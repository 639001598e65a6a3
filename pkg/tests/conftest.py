import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

from skewdisp.data_ingest import MonthlyMarketSeries, MonthlyPredictorSeries, month_range, shift_month  # noqa: E402


def monthly(values, start="2000-01", name="x"):
    values = np.asarray(values, dtype=np.float64)
    months = tuple(month_range(start, shift_month(start, len(values) - 1)))
    return MonthlyPredictorSeries(name, months, values)


def market(values, start="2000-01", rf=0.0):
    values = np.asarray(values, dtype=np.float64)
    months = tuple(month_range(start, shift_month(start, len(values) - 1)))
    return MonthlyMarketSeries(months, values, np.full(len(values), rf))


@pytest.fixture
def write_text(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return str(path)

    return _write


@pytest.fixture(scope="session")
def small_study(tmp_path_factory):
    """A 120-stock, 42-month synthetic study with its generated config."""
    from skewdisp.cli import main

    root = tmp_path_factory.mktemp("study")
    cfg_path = root / "sim.cfg"
    cfg_path.write_text("sim_stocks = 120\nsim_days = 252\nsim_days_per_month = 6\n")
    out = root / "run"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out), "--seed", "7"]) == 0
    return os.path.join(str(out), "skewdisp.cfg")
