"""IVX estimation and Wald inference for predictive regressions.

Implements the mildly integrated self-generated instrument approach of
Kostakis, Magdalinos and Stamatogiannis (2015) for

    r_{t+1} = mu + A x_t + e_{t+1},      x_t = c + R x_{t-1} + u_t,

including the long-horizon version where the h-period sum of returns is
regressed on the h-period sum of regressors. The instrument is

    z_t = rho_z z_{t-1} + (x_t - x_{t-1}),   z_0 = 0,   rho_z = 1 - C_z / n^delta.

The Wald statistic is chi-squared under the null whatever the persistence of
``x`` (stationary, near unit root or unit root).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from ..errors import DegenerateInstrumentError, DomainError, InsufficientSampleError

DELTA = 0.95
C_Z = 1.0


def instrument_rho(n: int, c_z: float = C_Z, delta: float = DELTA) -> float:
    return 1.0 - c_z / n ** delta


def build_instrument(x: np.ndarray, rho: float) -> np.ndarray:
    """z_t for t = 0..T-1 from the first differences of ``x`` (z_0 = 0)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64).T).T
    z = np.zeros_like(x)
    z[1:] = lfilter([1.0], [1.0, -rho], np.diff(x, axis=0), axis=0)
    return z


@dataclass(frozen=True)
class IVXResult:
    coef: np.ndarray  # one-period slope A
    alpha: float
    wald: float  # joint
    wald_individual: np.ndarray
    rho_z: float
    n: int


def _bartlett_bandwidth(n: int) -> int:
    return int(np.floor(n ** (1.0 / 3.0)))


def _ols_resid(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return y - X @ coef


def ivx_fit(x, r, h: int = 1, admitted: Optional[np.ndarray] = None,
            c_z: float = C_Z, delta: float = DELTA) -> IVXResult:
    """IVX slope and Wald statistics.

    Parameters
    ----------
    x : array (T,) or (T, l)
        Predictor values for months 0..T-1 (contiguous).
    r : array (T,)
        One-month returns for the same months; origin ``t`` predicts
        ``r[t+1] + ... + r[t+h]``.
    h : int
        Horizon in months.
    admitted : bool array (T,), optional
        Origin months to keep. The instrument is always built on the full
        contiguous history of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    r = np.asarray(r, dtype=np.float64)
    T, l = x.shape
    if h < 1:
        raise DomainError("horizon must be positive")
    if T - h < 3:
        raise InsufficientSampleError(f"{T} months is too short for horizon {h}")
    dx = np.diff(x, axis=0)
    if np.any(np.all(dx == 0, axis=0)):
        raise DegenerateInstrumentError("predictor is constant: first differences vanish")
    if admitted is None:
        admitted = np.ones(T, dtype=bool)
    admitted = np.asarray(admitted, dtype=bool)

    nn_full = T - 1
    rho = instrument_rho(nn_full, c_z, delta)
    z = build_instrument(x, rho)

    # one-period nuisance estimates over admitted origins t = 0..T-2
    short = np.flatnonzero(admitted[: T - 1])
    nn = short.size
    if nn <= l + 2:
        raise InsufficientSampleError(f"only {nn} admitted one-period observations")
    X1 = np.column_stack([np.ones(nn), x[short]])
    eps = _ols_resid(X1, r[short + 1])
    u = np.column_stack([_ols_resid(np.column_stack([np.ones(nn), x[short, j]]), x[short + 1, j])
                         for j in range(l)])

    m = _bartlett_bandwidth(nn)
    sig_ee = float(eps @ eps) / nn
    omega_uu = u.T @ u / nn
    omega_eu = eps @ u / nn
    for i in range(1, m + 1):
        w = 1.0 - i / (m + 1.0)
        g_uu = u[i:].T @ u[:-i] / nn
        omega_uu = omega_uu + w * (g_uu + g_uu.T)
        omega_eu = omega_eu + w * (eps[:-i] @ u[i:]) / nn

    # long-horizon rows: origins t with t + h <= T - 1
    origins = np.arange(T - h)
    origins = origins[admitted[origins]]
    n = origins.size
    if n <= l + 2:
        raise InsufficientSampleError(f"only {n} admitted observations at horizon {h}")
    csum_r = np.concatenate(([0.0], np.cumsum(r)))
    yK = csum_r[origins + h + 1] - csum_r[origins + 1]
    offs = origins[:, None] + np.arange(h)[None, :]
    xK = x[offs].sum(axis=1)
    zK = z[offs].sum(axis=1)
    Z = z[origins]

    Yd = yK - yK.mean()
    Xd = xK - xK.mean(axis=0)
    ZX = Z.T @ Xd
    if np.linalg.matrix_rank(ZX) < l:
        raise DegenerateInstrumentError("instrument uncorrelated with the regressors")
    A = np.linalg.solve(ZX, Z.T @ Yd)

    fm = sig_ee - float(omega_eu @ np.linalg.solve(omega_uu, omega_eu))
    zbar = zK.mean(axis=0)
    M = zK.T @ zK * sig_ee - n * np.outer(zbar, zbar) * fm
    ZX_inv = np.linalg.inv(ZX)
    Q = ZX_inv @ M @ ZX_inv.T
    wald = float(A @ np.linalg.solve(Q, A))
    wald_ind = A ** 2 / np.diag(Q)
    alpha = float((yK.mean() - xK.mean(axis=0) @ A) / h)
    return IVXResult(A, alpha, wald, wald_ind, rho, n)
