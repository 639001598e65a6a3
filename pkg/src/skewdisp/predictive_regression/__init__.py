"""In-sample predictive regressions and their inference procedures."""

from .core import (
    MIN_OBS,
    MIN_OBS_PER_OFFSET,
    HorizonReturnSeries,
    Method,
    PredictiveRegressionResult,
    correlation,
    overlapping_returns,
    run_bivariate,
    run_ivx,
    run_method,
    run_nonoverlapping,
    run_univariate,
)
from .filters import (
    FULL,
    CompositeFilter,
    FilterMode,
    RegimeRule,
    SampleFilter,
    exclude_nber,
    partition_fomc,
    regime,
)
from .ivx import IVXResult, build_instrument, instrument_rho, ivx_fit
from .ols import OLSFit, hac_covariance, mean_tstat, newey_west_se, newey_west_tstats, ols_fit

__all__ = [name for name in dir() if not name.startswith("_")]
