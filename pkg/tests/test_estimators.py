import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whmc.diagnostics import bm_barrier_price_gamma, bm_expected_max_gamma
from whmc.estimators import (
    CHUNK,
    LevelPlan,
    allocate_samples,
    level_samples,
    mlmc_estimate,
    mlmc_run,
    mse_decomposition,
    pilot_levels,
    single_level_estimate,
)
from whmc.models import BrownianMotion
from whmc.payoffs import BarrierPayoff, ConstantPayoff, LipschitzPayoff
from whmc.rng import StreamFamily

BM0 = BrownianMotion(0.0, 1.0)


def test_level_plan_checks():
    p = LevelPlan(4, 2, (10, 5, 3))
    assert p.levels == [4, 8, 16]
    with pytest.raises(ValueError):
        LevelPlan(4, 2, (10, 5))
    with pytest.raises(ValueError):
        LevelPlan(4, 1, (10, 1))
    with pytest.raises(ValueError):
        LevelPlan(0, 0, (10,))
    with pytest.raises(ValueError):
        LevelPlan(2, 0, (10,), s=1)


def test_constant_payoff_single_level():
    r = single_level_estimate(BM0, 8, 1000, 1.0, ConstantPayoff(2.5), StreamFamily(1))
    assert r.estimate == 2.5 and r.variance == 0.0 and r.cost == 8000


def test_driftless_terminal_value_mean_zero():
    r = single_level_estimate(BM0, 16, 100_000, 1.0, LipschitzPayoff("V"), StreamFamily(2))
    assert abs(r.estimate) < 3 * r.stat_error


def test_expected_max_single_level():
    r = single_level_estimate(BM0, 256, 400_000, 1.0, LipschitzPayoff("J"), StreamFamily(3))
    ref = bm_expected_max_gamma(0.0, 1.0, 256, 1.0)
    assert abs(r.estimate - ref) < 3 * r.stat_error


def test_L0_is_single_level_bit_for_bit():
    fam = StreamFamily(11)
    p = BarrierPayoff()
    rep = mlmc_estimate(BM0, LevelPlan(8, 0, (5000,)), 1.0, p, fam)
    one = single_level_estimate(BM0, 8, 5000, 1.0, p, fam)
    assert rep.estimate == one.estimate and rep.per_level[0].var == one.variance
    assert math.isnan(rep.bias_proxy)


def test_telescoping_matches_finest_level():
    p = BarrierPayoff()
    rep = mlmc_estimate(BM0, LevelPlan(8, 4, (200_000, 60_000, 30_000, 15_000, 8_000)), 1.0, p, StreamFamily(4))
    one = single_level_estimate(BM0, 128, 200_000, 1.0, p, StreamFamily(4, 99))
    assert abs(rep.estimate - one.estimate) < 3 * math.hypot(rep.stat_error, one.stat_error)
    assert rep.estimate == pytest.approx(sum(s.mean for s in rep.per_level), abs=1e-15)
    assert rep.total_cost == pytest.approx(sum(s.cost_units for s in rep.per_level))
    exact = bm_barrier_price_gamma(0.0, 1.0, 128, 1.0, p)
    assert abs(rep.estimate - exact) < 3 * rep.stat_error


def test_chunked_reduction_matches_direct(beta15):
    # more samples than one chunk: the merged moments equal a one-shot computation
    M = CHUNK + 1234
    p = BarrierPayoff()
    lev = mlmc_estimate(beta15, LevelPlan(4, 1, (2, M)), 1.0, p, StreamFamily(5)).per_level[1]
    x, c = level_samples(beta15, 1, 8, 1.0, p, StreamFamily(5, 1), M)
    assert lev.mean == pytest.approx(x.mean(), rel=1e-12, abs=1e-15)
    assert lev.var == pytest.approx(x.var(ddof=1), rel=1e-10)
    assert lev.cost_units == c.sum()


def test_levels_use_distinct_streams():
    fams = {(StreamFamily(3, l).keys.tobytes()) for l in range(6)}
    fams |= {StreamFamily(3, l, 1 << 31).keys.tobytes() for l in range(6)}
    assert len(fams) == 12


def test_allocate_single_level():
    assert allocate_samples([2.0], [3.0], 0.01) == [math.ceil(2.0 / 1e-4)]


def test_allocate_two_levels_ratio():
    M = allocate_samples([1.0, 0.25], [1.0, 4.0], 1e-3)
    assert M[0] / M[1] == pytest.approx(4.0, rel=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-6, 10.0), st.floats(0.5, 1e4)), min_size=1, max_size=8),
       st.floats(1e-3, 1.0))
def test_allocation_meets_target(levels, target):
    v = [a for a, _ in levels]
    c = [b for _, b in levels]
    M = allocate_samples(v, c, target)
    assert all(m >= 2 for m in M)
    assert sum(a / m for a, m in zip(v, M)) <= target**2 * (1 + 1e-12)
    # cost scaling leaves the allocation alone
    assert allocate_samples(v, [10 * x for x in c], target) == M


def test_allocation_rejects_bad_input():
    with pytest.raises(ValueError):
        allocate_samples([-1.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        allocate_samples([1.0], [0.0], 0.1)
    with pytest.raises(ValueError):
        allocate_samples([1.0, 2.0], [1.0], 0.1)
    assert allocate_samples([0.0, 1.0], [1.0, 1.0], 0.1)[0] == 2


def test_mse_decomposition_constant():
    rep = mlmc_estimate(BM0, LevelPlan(2, 2, (10, 10, 10)), 1.0, ConstantPayoff(1.0), StreamFamily(0))
    d = mse_decomposition(rep, reference=0.75)
    assert d.stat_error == 0.0 and d.bias_estimate == 0.25 and not d.surrogate
    s = mse_decomposition(rep)
    assert s.surrogate and s.bias_estimate == 0.0


def test_mse_split_over_repetitions():
    # realised squared error against the exact price, averaged over replicas
    p = BarrierPayoff()
    plan = LevelPlan(4, 3, (4000, 1500, 800, 400))
    exact = bm_barrier_price_gamma(0.0, 1.0, 32, 1.0, p)
    errs, preds = [], []
    for r in range(50):
        rep = mlmc_estimate(BM0, plan, 1.0, p, StreamFamily(17, 0, r))
        d = mse_decomposition(rep, reference=exact)
        errs.append((rep.estimate - exact) ** 2)
        preds.append(d.stat_error**2)
    # the reference is the estimator's own mean, so the predicted MSE is stat^2 alone
    assert np.mean(errs) == pytest.approx(np.mean(preds), rel=0.4)


def test_bias_proxy_trend(beta25):
    p = BarrierPayoff()
    stats = pilot_levels(beta25, 4, 7, 1.0, p, StreamFamily(8), 20_000)
    proxies = [abs(s.mean) for s in stats[2:]]
    drops = sum(b > a for a, b in zip(proxies, proxies[1:]))
    # downward trend with at most a couple of noise reversals
    assert proxies[-1] < proxies[0] and drops <= 2


def test_mlmc_run_meets_target():
    rep, plan = mlmc_run(BM0, 4, 3, 1.0, BarrierPayoff(), StreamFamily(6), 3e-3, pilot=2000)
    assert rep.stat_error < 3e-3 * 1.15
    assert len(plan.M) == 4


def test_T_horizon_levels(bm):
    p = BarrierPayoff()
    rep = mlmc_estimate(bm, LevelPlan(4, 3, (20_000, 8000, 4000, 2000)), 1.0, p, StreamFamily(9), horizon="T")
    assert rep.horizon == "T" and len(rep.per_level) == 4
    with pytest.raises(TypeError):
        from whmc.models import BetaClass, BetaParams
        mlmc_estimate(BetaClass(BetaParams()), LevelPlan(4, 1, (10, 10)), 1.0, p, StreamFamily(9), horizon="T")
    with pytest.raises(ValueError):
        mlmc_estimate(bm, LevelPlan(4, 1, (10, 10)), 1.0, p, StreamFamily(9), horizon="fixed")
