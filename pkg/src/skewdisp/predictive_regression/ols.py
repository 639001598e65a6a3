"""Least squares with heteroskedasticity- and autocorrelation-robust inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CollinearityError, DomainError


@dataclass(frozen=True)
class OLSFit:
    X: np.ndarray
    y: np.ndarray
    coef: np.ndarray
    resid: np.ndarray
    r2: float
    adj_r2: float

    @property
    def nobs(self) -> int:
        return self.X.shape[0]


def ols_fit(X, y) -> OLSFit:
    """Fit ``y = X b + e``. ``X`` must already contain the intercept column.

    Raises
    ------
    CollinearityError
        If ``X`` is not of full column rank.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n <= p:
        raise DomainError(f"need more observations ({n}) than coefficients ({p})")
    if np.linalg.matrix_rank(X) < p:
        raise CollinearityError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ssr = float(resid @ resid)
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst > 0:
        r2 = 1.0 - ssr / sst
        adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p)
    else:
        r2 = adj = float("nan")
    return OLSFit(X, y, coef, resid, r2, adj)


def hac_covariance(X: np.ndarray, resid: np.ndarray, lags: int) -> np.ndarray:
    """Newey-West (Bartlett kernel) sandwich covariance without df correction.

    ``lags == 0`` gives the White heteroskedasticity-robust estimator.
    """
    n = X.shape[0]
    if lags < 0 or lags >= n:
        raise DomainError(f"lag truncation {lags} must lie in [0, {n})")
    scores = X * resid[:, None]
    meat = scores.T @ scores
    for j in range(1, lags + 1):
        w = 1.0 - j / (lags + 1.0)
        gamma = scores[j:].T @ scores[:-j]
        meat += w * (gamma + gamma.T)
    bread = np.linalg.inv(X.T @ X)
    return bread @ meat @ bread


def _tstats(coef: np.ndarray, cov: np.ndarray) -> np.ndarray:
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    # zero standard error: flag as signed infinity
    return np.where(se > 0, t, np.copysign(np.inf, coef))


def newey_west_tstats(fit: OLSFit, lags: int) -> np.ndarray:
    return _tstats(fit.coef, hac_covariance(fit.X, fit.resid, lags))


def newey_west_se(fit: OLSFit, lags: int) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(hac_covariance(fit.X, fit.resid, lags)), 0.0, None))


def mean_tstat(series, lags: int) -> float:
    """HAC t-statistic of the sample mean (regression on a constant)."""
    d = np.asarray(series, dtype=np.float64)
    X = np.ones((d.size, 1))
    mu = d.mean()
    cov = hac_covariance(X, d - mu, lags)
    return float(_tstats(np.array([mu]), cov)[0])
