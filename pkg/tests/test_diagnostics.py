import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from whmc.diagnostics import (
    T_time_moments,
    bm_barrier_price,
    bm_barrier_price_dblquad,
    bm_barrier_price_gamma,
    bm_barrier_price_quad,
    bm_expected_max,
    bm_expected_max_gamma,
    fit_rates,
    gamma_time_moments,
    lemma_moment_identity_check,
    theoretical_rate_curves,
    validation_suite,
)
from whmc.models import BrownianMotion
from whmc.payoffs import BarrierPayoff
from whmc.rng import StreamFamily
from whmc.walk import gamma_horizon_times, T_horizon_batch

# E|Gamma(n, n) - 1|, evaluated independently with mpmath at 30 digits
GAMMA_ABS = {
    1: 0.73575888234288464,
    4: 0.39073362962632918,
    16: 0.19843506324431164,
    64: 0.099605791642383914,
    256: 0.049851554697290533,
}


@pytest.mark.parametrize("n", sorted(GAMMA_ABS))
def test_gamma_first_abs_frozen(n):
    m = gamma_time_moments(n, 1.0)
    assert m.first_abs == pytest.approx(GAMMA_ABS[n], rel=1e-12)
    assert m.second_central == pytest.approx(1.0 / n, rel=1e-15)


def test_gamma_moments_examples():
    m = gamma_time_moments(1, 1.0)
    assert m.second_central == 1.0 and m.first_abs == pytest.approx(2 / math.e, rel=1e-14)
    assert gamma_time_moments(4, 1.0).second_central == 0.25
    assert gamma_time_moments(3, 2.0).first_abs == pytest.approx(2 * gamma_time_moments(3, 1.0).first_abs)


def test_gamma_moments_stirling_limit():
    n = 10_000
    assert gamma_time_moments(n, 1.0).first_abs * math.sqrt(n) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-3)
    # log-space evaluation survives where n**n overflows
    assert math.isfinite(gamma_time_moments(10**6, 1.0).first_abs)


def test_gamma_moments_errors():
    with pytest.raises(ValueError):
        gamma_time_moments(0, 1.0)
    with pytest.raises(ValueError):
        gamma_time_moments(2, -1.0)


@pytest.mark.parametrize("n", [1, 4, 16, 64])
def test_gamma_moments_mc(n):
    g = gamma_horizon_times(n, 1.0, StreamFamily(31, n), 1_000_000)
    d = np.abs(g - 1.0)
    assert abs(d.mean() - GAMMA_ABS[n]) < 3 * d.std() / 1000


def test_T_moments_examples():
    assert T_time_moments(2, 1.0) == pytest.approx((0.5, 0.5), rel=1e-15)
    assert T_time_moments(10, 2.0) == pytest.approx((0.08, 0.2), rel=1e-15)
    assert T_time_moments(16, 1.0) == (0.0078125, 0.0625)
    with pytest.raises(ValueError):
        T_time_moments(0, 1.0)


@pytest.mark.parametrize("n", [2, 16])
def test_T_moments_mc(n):
    out = T_horizon_batch(0.0, 1.0, n, 1.0, StreamFamily(32, n), 1_000_000)
    e = out[:, 2] - 1.0
    sec, first = T_time_moments(n, 1.0)
    assert abs(e.mean() - first) < 3 * e.std() / 1000
    assert abs((e**2).mean() - sec) < 3 * (e**2).std() / 1000


def test_lemma_identity_driftless():
    r = lemma_moment_identity_check(BrownianMotion(0.0, 1.0), "gamma", 16, 1.0, 400_000, StreamFamily(33))
    assert r.rhs == pytest.approx(GAMMA_ABS[16], rel=1e-12)
    assert abs(r.z) < 3 and r.passed


def test_lemma_identity_drift_term():
    r = lemma_moment_identity_check(BrownianMotion(2.0, 1.0), "gamma", 16, 1.0, 400_000, StreamFamily(34))
    assert r.rhs == pytest.approx(GAMMA_ABS[16] + 4.0 / 16.0, rel=1e-12)
    assert abs(r.z) < 3


def test_lemma_identity_T_horizon():
    r = lemma_moment_identity_check(BrownianMotion(0.5, 0.8), "T", 16, 1.0, 400_000, StreamFamily(35))
    sec, first = T_time_moments(16, 1.0)
    assert r.rhs == pytest.approx(0.64 * first + 0.25 * sec, rel=1e-12)
    assert abs(r.z) < 3


def test_lemma_identity_fixed_horizon():
    r = lemma_moment_identity_check(BrownianMotion(2.0, 1.0), "fixed", 16, 1.0, 10, StreamFamily(0))
    assert r.lhs == r.rhs == 0.0 and r.passed


def test_lemma_identity_beta_fallback(beta25):
    r = lemma_moment_identity_check(beta25, "gamma", 16, 1.0, 200_000, StreamFamily(36))
    assert r.kind == "second_moment" and abs(r.z) < 4


def test_fit_exact_power_law():
    n = [2**k for k in range(3, 10)]
    f = fit_rates(n, [1.0 / x for x in n])
    assert f.slope == pytest.approx(-1.0, abs=1e-12) and f.r_squared == pytest.approx(1.0, abs=1e-12)
    c = fit_rates(n, [0.3] * len(n))
    assert c.slope == pytest.approx(0.0, abs=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(0.01, 100.0))
def test_fit_recovers_slope(b, c):
    n = [2**k for k in range(2, 9)]
    f = fit_rates(n, [c * x**b for x in n])
    assert f.slope == pytest.approx(b, abs=1e-9)
    assert 0.0 <= f.r_squared <= 1.0


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_rates([1, 2, 4, 8], [1.0, 0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        fit_rates([1, 2, 4], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        fit_rates([1, 2, 4, 8], [1.0, 1.0, 1.0])


def _curve(rows, method, variation):
    return {r["rho"]: r for r in rows if r["method"] == method and r["variation"] == variation}


def test_theoretical_curves():
    rows = theoretical_rate_curves()
    mlwh = _curve(rows, "MLWH", "unbounded")
    assert all(r["rate"] == 0.25 and not r["approximate"] for r in mlwh.values())
    assert all(r["rate"] == pytest.approx(1 / 3) for r in _curve(rows, "MLWH", "bounded").values())
    assert all(r["rate"] == pytest.approx(1 / 6) for r in _curve(rows, "WHMC", "unbounded").values())
    d = theoretical_rate_curves([1.5, 1.6, 1.7])
    rate = {r["rho"]: r["rate"] for r in d if r["method"] == "D"}
    assert rate[1.6] == pytest.approx(0.25)
    assert rate[1.5] > 0.25 > rate[1.7]
    assert {r["approximate"] for r in rows if r["method"] in ("D", "DH", "JKMP")} == {True}
    assert all(r["provenance"] for r in rows)


# BM barrier oracles, frozen from an independent mpmath evaluation
def test_bm_barrier_frozen():
    p = BarrierPayoff(1.0, 0.2, 0.0)
    assert bm_barrier_price(0.0, 1.0, 1.0, p) == pytest.approx(0.14594892809165096, rel=1e-10)
    q = BarrierPayoff(1.1, 0.2, 0.0)
    ref = 0.17285409925820033
    assert bm_barrier_price(0.1, 0.8, 2.0, q) == pytest.approx(ref, rel=1e-10)
    assert bm_barrier_price_quad(0.1, 0.8, 2.0, q) == pytest.approx(ref, rel=1e-8)
    assert bm_barrier_price_dblquad(0.1, 0.8, 2.0, q) == pytest.approx(ref, rel=1e-6)


def test_bm_horizon_oracles_frozen():
    assert bm_expected_max(0.0, 1.0, 1.0) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-10)
    assert bm_expected_max_gamma(0.0, 1.0, 16, 1.0) == pytest.approx(0.791676379381221996, rel=1e-10)
    assert bm_barrier_price_gamma(0.0, 1.0, 16, 1.0, BarrierPayoff()) == pytest.approx(0.143728028160191419, rel=1e-8)


def test_gamma_price_approaches_fixed():
    # the Gamma-horizon price converges to the fixed-time price at the |Gamma - t| rate
    p = BarrierPayoff()
    fixed = bm_barrier_price(0.0, 1.0, 1.0, p)
    gaps = [abs(bm_barrier_price_gamma(0.0, 1.0, n, 1.0, p) - fixed) for n in (16, 64, 256)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_validation_suite_small(bm, beta15):
    for model in (bm, beta15):
        rows = validation_suite(model, 1.0, StreamFamily(37), samples=40_000, ns=(1, 4))
        assert rows and all(r.status != "fail" for r in rows), [(r.check, r.z) for r in rows if r.status == "fail"]
