import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st

from conftest import market, monthly
from skewdisp.data_ingest import CalendarLabel, EventCalendar, month_range
from skewdisp.errors import (
    AlignmentError,
    CollinearityError,
    DegenerateInstrumentError,
    InsufficientSampleError,
)
from skewdisp.predictive_regression import (
    FULL,
    Method,
    OLSFit,
    exclude_nber,
    hac_covariance,
    instrument_rho,
    ivx_fit,
    newey_west_se,
    newey_west_tstats,
    ols_fit,
    overlapping_returns,
    partition_fomc,
    regime,
    run_bivariate,
    run_ivx,
    run_method,
    run_nonoverlapping,
    run_univariate,
)
from skewdisp.synthetic_testkit import PredictiveDgpSpec, generate_predictive_dgp


def dgp(**kw):
    return generate_predictive_dgp(PredictiveDgpSpec(**kw))


# ---------------------------------------------------------------------------
# horizon returns

def test_overlapping_example():
    hr = overlapping_returns(market([0.01, 0.02, 0.03, 0.04]), 2)
    np.testing.assert_allclose(hr.values, [0.025, 0.035], rtol=0, atol=1e-17)
    assert hr.months == ("2000-01", "2000-02")


def test_overlapping_h1_and_constant():
    m = market([0.01, -0.02, 0.03, 0.04])
    assert overlapping_returns(m, 1).values.tolist() == [-0.02, 0.03, 0.04]
    np.testing.assert_allclose(overlapping_returns(market([0.007] * 12), 5).values, 0.007, rtol=1e-15)


def test_overlapping_too_long():
    with pytest.raises(InsufficientSampleError):
        overlapping_returns(market([0.01, 0.02]), 2)


@given(st.lists(st.floats(-0.3, 0.3), min_size=2, max_size=60), st.integers(1, 12))
def test_overlapping_reconstructs(values, h):
    if h >= len(values):
        return
    hr = overlapping_returns(market(values), h)
    assert len(hr.values) == len(values) - h
    for t, v in enumerate(hr.values):
        assert abs(v - sum(values[t + 1: t + h + 1]) / h) <= 1e-14


# ---------------------------------------------------------------------------
# OLS and HAC

def test_exact_linear_target():
    x = np.arange(30.0)
    fit = ols_fit(np.column_stack([np.ones(30), x]), 2.0 - 0.5 * x)
    assert np.max(np.abs(fit.resid)) < 1e-12
    assert fit.adj_r2 == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_regressor():
    rng = np.random.default_rng(4)
    y = rng.standard_normal(200)
    x = rng.standard_normal(200)
    yc = y - y.mean()
    x = x - x.mean()
    x -= yc * (x @ yc) / (yc @ yc)
    fit = ols_fit(np.column_stack([np.ones(200), x]), y)
    assert abs(fit.coef[1]) < 1e-10


def test_normal_equations_oracle():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(200), rng.standard_normal((200, 2))])
    y = X @ [0.3, -1.0, 2.0] + rng.standard_normal(200)
    fit = ols_fit(X, y)
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(fit.coef, oracle, rtol=0, atol=1e-10)
    np.testing.assert_allclose(X.T @ fit.resid, 0, atol=1e-10)
    n, p = X.shape
    r2 = 1 - fit.resid @ fit.resid / np.sum((y - y.mean()) ** 2)
    assert fit.adj_r2 == pytest.approx(1 - (1 - r2) * (n - 1) / (n - p), rel=1e-12)


def test_rank_deficient():
    x = np.arange(10.0)
    with pytest.raises(CollinearityError):
        ols_fit(np.column_stack([np.ones(10), x, 2 * x]), x)


@pytest.mark.parametrize("lags", [0, 1, 4, 11])
def test_hac_matches_statsmodels(lags):
    rng = np.random.default_rng(lags)
    X = np.column_stack([np.ones(150), np.cumsum(rng.standard_normal(150))])
    e = np.convolve(rng.standard_normal(160), np.ones(5) / 5, "valid")[:150]
    y = X @ [0.1, 0.02] + e
    ours = hac_covariance(X, ols_fit(X, y).resid, lags)
    ref = sm.OLS(y, X).fit()
    if lags == 0:
        theirs = ref.get_robustcov_results("HC0").cov_params()
    else:
        theirs = ref.get_robustcov_results("HAC", maxlags=lags, use_correction=False).cov_params()
    np.testing.assert_allclose(ours, theirs, rtol=1e-10)


def test_nw_close_to_ols_under_iid():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(10_000)
    y = 0.02 * x + rng.standard_normal(10_000)
    X = np.column_stack([np.ones(x.size), x])
    fit = ols_fit(X, y)
    t_nw = newey_west_tstats(fit, 5)[1]
    t_ols = sm.OLS(y, X).fit().tvalues[1]
    assert abs(t_nw / t_ols - 1) < 0.05


def test_zero_residuals_flag_infinite_t():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    fit = OLSFit(X, X @ [1.0, -2.0], np.array([1.0, -2.0]), np.zeros(10), 1.0, 1.0)
    np.testing.assert_array_equal(newey_west_se(fit, 2), [0.0, 0.0])
    assert newey_west_tstats(fit, 2).tolist() == [math.inf, -math.inf]


# ---------------------------------------------------------------------------
# univariate and bivariate

def test_univariate_recovers_slope():
    x, m = dgp(T=5000, beta=-0.1, rho=0.9, noise_vol=0.045, predictor_vol=0.1 * math.sqrt(1 - 0.81), seed=3)
    res = run_univariate(x, m, 1)
    se = abs(res.betas[0] / res.tstats[0])
    assert abs(res.betas[0] + 0.1) < 3 * se
    assert res.method is Method.NW_OVERLAPPING and res.n_obs == 4999
    assert res.metadata["nw_lags"] == 0


def test_univariate_row_format():
    x, m = dgp(T=60, beta=-0.1, rho=0.5, seed=1)
    cells = run_univariate(x, m, 3).row().split(",")
    assert cells[:4] == ["x", "NW_OVERLAPPING", "FULL", "3"]
    assert cells[-1] == "57"
    assert len(cells) == 9


def test_misaligned_predictor():
    x, m = dgp(T=60, seed=1)
    late = monthly(np.ones(70), start=x.months[0])
    with pytest.raises(AlignmentError):
        run_univariate(late, m, 1)


def test_minimum_observations():
    x, m = dgp(T=24, seed=1)
    with pytest.raises(InsufficientSampleError):
        run_univariate(x, m, 1)
    run_univariate(x, m, 1, min_obs=23)


def test_fomc_filter_reduces_sample():
    x, m = dgp(T=240, beta=-0.1, rho=0.5, seed=2)
    fomc = EventCalendar(CalendarLabel.FOMC_MEETING,
                         frozenset(mo for mo in x.months if int(mo[5:]) in (1, 3, 4, 6, 7, 9, 10, 12)))
    parts = partition_fomc(x.months, fomc)
    res = run_univariate(x, m, 1, parts["FOMC"])
    assert res.sample_filter == "FOMC_FOMC"
    assert res.n_obs == 160 - 1  # the last month has no next-month return
    assert run_univariate(x, m, 1, parts["PRE"]).n_obs < res.n_obs


def test_duplicate_control_is_collinear():
    x, m = dgp(T=120, seed=1)
    twin = monthly(x.values, start=x.months[0], name="twin")
    with pytest.raises(CollinearityError):
        run_bivariate(x, twin, m, 1)


def test_orthogonal_control_leaves_slope():
    x, m = dgp(T=300, beta=-0.1, rho=0.5, noise_vol=0.045, seed=8)
    y = overlapping_returns(m, 1).values
    xs = x.values[:-1]
    # a control orthogonal to the constant, the predictor and the target over the regression sample
    c = np.random.default_rng(9).standard_normal(len(xs))
    B = np.column_stack([np.ones(len(xs)), xs, y])
    c -= B @ np.linalg.lstsq(B, c, rcond=None)[0]
    ctrl = monthly(np.append(c, 0.0), start=x.months[0], name="ctrl")
    uni = run_univariate(x, m, 1)
    biv = run_bivariate(x, ctrl, m, 1)
    assert abs(biv.betas[0] - uni.betas[0]) < 1e-6
    assert biv.predictor == "x+ctrl" and len(biv.betas) == 2


def test_noise_predictor_with_true_control():
    insignificant = 0
    for i in range(500):
        ctrl, m = dgp(T=240, beta=-0.1, rho=0.9, noise_vol=0.045, predictor_vol=0.1, seed=60000 + i, name="ctrl")
        noise = monthly(np.random.default_rng(70000 + i).standard_normal(240), start=ctrl.months[0])
        res = run_bivariate(noise, ctrl, m, 1)
        insignificant += abs(res.tstats[0]) <= 1.959963985
    assert insignificant / 500 >= 0.90


# ---------------------------------------------------------------------------
# non-overlapping averaging

def test_nonoverlapping_hand_enumeration():
    r = np.array([0.01, -0.02, 0.03, 0.015, -0.01, 0.02, 0.005, -0.03, 0.04, 0.01])
    xv = np.array([0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.6, 0.8, 0.4, 0.0])
    res = run_nonoverlapping(monthly(xv), market(r), 2, min_obs=3)
    target = (r[1:-1] + r[2:]) / 2  # origins 0..7
    slopes, tstats, adj = [], [], []
    for rows in ([0, 2, 4, 6], [1, 3, 5, 7]):
        X = np.column_stack([np.ones(4), xv[rows]])
        model = sm.OLS(target[rows], X).fit()
        slopes.append(model.params[1])
        tstats.append(model.get_robustcov_results("HC0").tvalues[1])
        adj.append(model.rsquared_adj)
    assert res.metadata["offset_n_obs"] == [4, 4]
    assert res.betas[0] == pytest.approx(np.mean(slopes), rel=1e-10)
    assert res.tstats[0] == pytest.approx(np.mean(tstats), rel=1e-10)
    assert res.adj_r2 == pytest.approx(np.mean(adj), rel=1e-10)
    assert res.n_obs == 8


def test_nonoverlapping_short_offset_named():
    x, m = dgp(T=30, seed=1)
    with pytest.raises(InsufficientSampleError, match="offset"):
        run_nonoverlapping(x, m, 3)


def test_h1_collapse():
    x, m = dgp(T=200, beta=-0.1, rho=0.8, noise_vol=0.045, seed=12)
    nw = run_univariate(x, m, 1)
    non = run_nonoverlapping(x, m, 1)
    assert (non.alpha, non.betas, non.tstats, non.adj_r2, non.n_obs) == (
        nw.alpha, nw.betas, nw.tstats, nw.adj_r2, nw.n_obs)
    # lag-0 NW equals the single-offset HC0 regression
    X = np.column_stack([np.ones(199), x.values[:-1]])
    hc0 = sm.OLS(m.excess[1:], X).fit().get_robustcov_results("HC0").tvalues[1]
    assert nw.tstats[0] == pytest.approx(hc0, rel=1e-10)


# ---------------------------------------------------------------------------
# IVX

def test_rho_z():
    assert instrument_rho(100) == pytest.approx(1 - 100 ** -0.95, rel=0, abs=1e-12)
    assert abs(instrument_rho(100) - 0.98745) < 5e-5


def test_constant_predictor_is_degenerate():
    _, m = dgp(T=60, seed=1)
    with pytest.raises(DegenerateInstrumentError):
        run_ivx(monthly(np.full(60, 0.3), start=m.months[0]), m, 1)


def _ivx_loop_oracle(x, r, h):
    """Direct transcription of the IVX recursions with explicit loops."""
    T = len(x)
    n1 = T - 1
    rho = 1 - 1 / n1 ** 0.95
    z = [0.0] * T
    for t in range(1, T):
        z[t] = rho * z[t - 1] + (x[t] - x[t - 1])
    X1 = np.column_stack([np.ones(n1), x[:-1]])
    eps = r[1:] - X1 @ np.linalg.solve(X1.T @ X1, X1.T @ r[1:])
    u = x[1:] - X1 @ np.linalg.solve(X1.T @ X1, X1.T @ x[1:])
    m = int(n1 ** (1 / 3))
    s_ee = sum(e * e for e in eps) / n1
    o_uu = sum(v * v for v in u) / n1
    o_eu = sum(e * v for e, v in zip(eps, u)) / n1
    for i in range(1, m + 1):
        w = 1 - i / (m + 1)
        o_uu += 2 * w * sum(u[t] * u[t - i] for t in range(i, n1)) / n1
        o_eu += w * sum(u[t] * eps[t - i] for t in range(i, n1)) / n1
    n = T - h
    yk = [sum(r[t + 1: t + h + 1]) for t in range(n)]
    xk = [sum(x[t: t + h]) for t in range(n)]
    zk = [sum(z[t: t + h]) for t in range(n)]
    ybar, xbar, zbar = sum(yk) / n, sum(xk) / n, sum(zk) / n
    num = sum(z[t] * (yk[t] - ybar) for t in range(n))
    den = sum(z[t] * (xk[t] - xbar) for t in range(n))
    a = num / den
    fm = s_ee - o_eu ** 2 / o_uu
    mid = sum(v * v for v in zk) * s_ee - n * zbar ** 2 * fm
    q = mid / den ** 2
    return a, a * a / q


@pytest.mark.parametrize("h", [1, 3])
def test_ivx_matches_loop_oracle(h):
    x, m = dgp(T=150, beta=-0.1, rho=0.95, noise_vol=0.045, predictor_vol=0.05, seed=21)
    res = ivx_fit(x.values, m.excess, h)
    a, wald = _ivx_loop_oracle(x.values, m.excess, h)
    assert res.coef[0] == pytest.approx(a, rel=1e-10)
    assert res.wald == pytest.approx(wald, rel=1e-10)
    assert res.rho_z == instrument_rho(149)


@pytest.mark.parametrize("c", [-3.0, 0.01, 250.0])
def test_affine_invariance(c):
    x, m = dgp(T=300, beta=-0.1, rho=0.95, noise_vol=0.045, predictor_vol=0.05, seed=31)
    scaled = monthly(c * x.values + 5.0, start=x.months[0])
    for method in Method:
        a = run_method(method, x, m, 3)
        b = run_method(method, scaled, m, 3)
        assert b.betas[0] == pytest.approx(a.betas[0] / c, rel=1e-8)
        assert b.tstats[0] == pytest.approx(a.tstats[0] * math.copysign(1, c), rel=1e-8)
        assert b.adj_r2 == pytest.approx(a.adj_r2, rel=1e-8, abs=1e-12)
        if method is Method.IVX:
            assert b.wald[0] == pytest.approx(a.wald[0], rel=1e-8)


def test_ivx_result_fields():
    x, m = dgp(T=200, beta=-0.1, rho=0.95, noise_vol=0.045, predictor_vol=0.05, seed=4)
    res = run_ivx(x, m, 1)
    assert res.method is Method.IVX
    assert res.tstats[0] == pytest.approx(math.copysign(math.sqrt(res.wald[0]), res.betas[0]))
    assert res.metadata["wald_kind"] == "per-coefficient"


# ---------------------------------------------------------------------------
# filters

def _fomc(*months):
    return EventCalendar(CalendarLabel.FOMC_MEETING, frozenset(months))


def _members(filters, months):
    return {k: {m for m, ok in zip(months, f.admits(months)) if ok} for k, f in filters.items()}


def test_fomc_partition_single():
    months = month_range("2010-01", "2010-06")
    got = _members(partition_fomc(months, _fomc("2010-03")), months)
    assert got == {"FOMC": {"2010-03"}, "PRE": {"2010-02"}, "POST": {"2010-04"},
                   "NONE": {"2010-01", "2010-05", "2010-06"}}


def test_fomc_partition_adjacent():
    months = month_range("2010-01", "2010-06")
    got = _members(partition_fomc(months, _fomc("2010-03", "2010-04")), months)
    assert got["FOMC"] == {"2010-03", "2010-04"}
    assert got["PRE"] == {"2010-02"} and got["POST"] == {"2010-05"}


def test_fomc_partition_priority_pre_over_post():
    months = month_range("2010-01", "2010-06")
    got = _members(partition_fomc(months, _fomc("2010-02", "2010-04")), months)
    assert got["PRE"] == {"2010-01", "2010-03"}
    assert got["POST"] == {"2010-05"}


def test_fomc_partition_empty_calendar():
    months = month_range("2010-01", "2010-06")
    got = _members(partition_fomc(months, _fomc()), months)
    assert got["NONE"] == set(months) and not got["FOMC"] | got["PRE"] | got["POST"]


@given(st.sets(st.integers(0, 35)))
def test_fomc_partition_covers_disjointly(idx):
    months = month_range("2015-01", "2017-12")
    parts = partition_fomc(months, _fomc(*(months[i] for i in idx)))
    masks = np.array([f.admits(months) for f in parts.values()])
    assert np.all(masks.sum(axis=0) == 1)


def test_regime_ties_go_high():
    cond = monthly([1.0, 2.0, 2.0, 3.0], name="sent")
    months = list(cond.months)
    assert regime(cond, "ABOVE_MEDIAN").admits(months).tolist() == [False, True, True, True]
    assert regime(cond, "BELOW_MEDIAN").admits(months).tolist() == [True, False, False, False]
    assert regime(cond, "ABOVE_MEDIAN").describe() == "SENT_HIGH"


def test_filters_commute():
    x, m = dgp(T=240, beta=-0.1, rho=0.5, noise_vol=0.045, seed=14)
    nber = EventCalendar(CalendarLabel.NBER_RECESSION, frozenset(x.months[40:70]))
    sent = monthly(np.random.default_rng(2).standard_normal(240), start=x.months[0], name="sent")
    a = exclude_nber(nber) & regime(sent, "ABOVE_MEDIAN")
    b = regime(sent, "ABOVE_MEDIAN") & exclude_nber(nber)
    assert a.admits(x.months).tolist() == b.admits(x.months).tolist()
    ra, rb = run_univariate(x, m, 1, a), run_univariate(x, m, 1, b)
    assert (ra.betas, ra.tstats, ra.n_obs) == (rb.betas, rb.tstats, rb.n_obs)


def test_exclude_nber_drops_months():
    x, m = dgp(T=120, seed=3)
    nber = EventCalendar(CalendarLabel.NBER_RECESSION, frozenset(x.months[10:30]))
    assert run_univariate(x, m, 1, exclude_nber(nber)).n_obs == run_univariate(x, m, 1, FULL).n_obs - 20
