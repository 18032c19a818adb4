import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from whmc.factors import bm_factor_rates
from whmc.models import BrownianMotion
from whmc.rng import StreamFamily
from whmc.walk import (
    GridRealisation,
    WalkState,
    draw_grid,
    gamma_horizon_batch,
    gamma_horizon_times,
    grid_batch,
    simulate_gamma_horizon,
    simulate_T_horizon_bm,
    step,
    T_horizon_batch,
    walk_grid,
)


def test_step_recursion():
    s = WalkState()
    s = step(s, 0.5, -1.0, 0.1)
    s = s.step(0.2, -0.1, 0.2)
    assert (s.V, s.J, s.steps) == pytest.approx((-0.4, 0.5, 2))
    s = s.step(2.0, 0.0)
    assert s.J == pytest.approx(1.6) and s.elapsed == pytest.approx(0.3)
    with pytest.raises(ValueError):
        step(s, -0.1, 0.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridRealisation(np.ones(2), np.ones(3), -np.ones(3))
    with pytest.raises(ValueError):
        GridRealisation(np.ones(2), -np.ones(2), -np.ones(2))


@pytest.mark.parametrize("fixture", ["bm", "beta15"])
def test_batch_agrees_with_grid_walk(request, fixture):
    m = request.getfixturevalue(fixture)
    fam = StreamFamily(3)
    out = gamma_horizon_batch(m, 12, 2.0, fam, 20)
    grids = grid_batch(m, 12, 2.0, fam, 20)
    for i in (0, 7, 19):
        g = draw_grid(m, 12, 2.0, fam, i)
        assert np.array_equal(np.stack([g.spacings, g.sup_draws, g.inf_draws]), grids[i])
        w = walk_grid(g)
        assert (w.V, w.J) == pytest.approx(tuple(out[i, :2]), abs=1e-13)
        assert w.elapsed == pytest.approx(out[i, 2], rel=1e-13)
    one = simulate_gamma_horizon(m, 12, 2.0, fam, 7)
    assert one.V == out[7, 0] and one.cost == 12


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10_000))
def test_batches_are_partition_invariant(split, start):
    fam = StreamFamily(77)
    m = BrownianMotion(0.2, 0.7)
    whole = gamma_horizon_batch(m, 5, 1.0, fam, 300, start)
    parts = np.vstack([gamma_horizon_batch(m, 5, 1.0, fam, split, start),
                       gamma_horizon_batch(m, 5, 1.0, fam, 300 - split, start + split)])
    assert np.array_equal(whole, parts)


def test_gamma_times_match_walk_clock(bm):
    fam = StreamFamily(9)
    g = gamma_horizon_times(16, 1.0, fam, 5000, 100)
    el = gamma_horizon_batch(bm, 16, 1.0, fam, 5000, 100)[:, 2]
    assert np.allclose(g, el, rtol=1e-12)
    assert stats.kstest(g, stats.gamma(16, scale=1 / 16).cdf).pvalue > 1e-3


def test_one_step_is_exponential_time_sample(bm):
    # n = 1: J is S_q ~ Exp(theta_plus), V is S_q + I_q
    q = 4.0
    out = gamma_horizon_batch(bm, 1, 1 / q, StreamFamily(2), 100_000, record_time=False)
    tp, tm = bm_factor_rates(bm.mu, bm.sigma, q)
    assert stats.kstest(out[:, 1], stats.expon(scale=1 / tp).cdf).pvalue > 1e-3
    assert abs(out[:, 0].mean() - (1 / tp - 1 / tm)) < 4 * out[:, 0].std() / math.sqrt(len(out))


def test_gamma_horizon_first_two_moments(beta25):
    n, t = 8, 1.0
    out = gamma_horizon_batch(beta25, n, t, StreamFamily(4), 200_000, record_time=False)
    mom = beta25.moments()
    V = out[:, 0]
    assert abs(V.mean() - mom.mean1 * t) < 4 * V.std() / math.sqrt(len(V))
    want2 = mom.var1 * t + mom.mean1**2 * (t * t + t * t / n)
    assert abs((V**2).mean() - want2) < 4 * (V**2).std() / math.sqrt(len(V))


def test_T_horizon_law(bm):
    n, t = 10, 1.0
    out = T_horizon_batch(bm.mu, bm.sigma, n, t, StreamFamily(6), 50_000)
    over = out[:, 2] - t
    assert np.all(over > 0) and np.all(out[:, 3] >= 1)
    assert stats.kstest(over, stats.expon(scale=t / n).cdf).pvalue > 1e-3
    # steps = N(t) + 1 for a rate-n/t Poisson process
    assert abs(out[:, 3].mean() - (n + 1)) < 4 * math.sqrt(n / len(out))
    assert np.all(out[:, 1] >= np.maximum(out[:, 0], 0.0))
    r = simulate_T_horizon_bm(bm.mu, bm.sigma, n, t, StreamFamily(6), 3)
    assert r.V == out[3, 0]


def test_horizon_input_checks(bm):
    with pytest.raises(ValueError):
        gamma_horizon_batch(bm, 0, 1.0, StreamFamily(0), 1)
    with pytest.raises(ValueError):
        gamma_horizon_batch(bm, 4, -1.0, StreamFamily(0), 1)
    with pytest.raises(ValueError):
        T_horizon_batch(0.0, 0.0, 4, 1.0, StreamFamily(0), 1)
