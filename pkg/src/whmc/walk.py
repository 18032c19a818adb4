"""The Wiener-Hopf random walk and its two random horizons.

With ``q = n/t`` and i.i.d. factor pairs ``(S^k, I^k)`` distributed as
``(sup, inf)`` of the process at an independent Exp(q) time,

    V_k = V_{k-1} + S^k + I^k,      J_k = max(J_{k-1}, V_{k-1} + S^k),

and ``(V_n, J_n)`` has the law of ``(X_g, sup_{s<=g} X_s)`` at the Gamma(n, q)
time ``g``.  For Brownian motion the walk can also be run on a Poisson grid up to
the first arrival after ``t`` (the ``T(n, t)`` horizon), drawing each step's
increment and maximum jointly from the Gaussian/reflection law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numba as nb
import numpy as np

from .factors import FactorSampler, SamplingError, default_sampler, draw_magnitude, draw_unsigned
from .models import BrownianMotion, LevyModel
from .rng import STATE_SIZE, Purpose, StreamFamily, init_state, next_normal, next_uniform

__all__ = [
    "GridRealisation",
    "WalkResult",
    "WalkState",
    "draw_grid",
    "gamma_horizon_batch",
    "gamma_horizon_times",
    "grid_batch",
    "simulate_T_horizon_bm",
    "simulate_gamma_horizon",
    "step",
    "T_horizon_batch",
    "walk_grid",
]

_SUP = int(Purpose.SUP)
_INF = int(Purpose.INF)
_SPACING = int(Purpose.SPACING)
_NORMAL = int(Purpose.NORMAL)
_BRIDGE = int(Purpose.BRIDGE)


@dataclass(frozen=True)
class WalkState:
    """``(V, J)`` after ``steps`` factor pairs, and the grid time used so far."""

    V: float = 0.0
    J: float = 0.0
    steps: int = 0
    elapsed: float = 0.0

    def step(self, S: float, I: float, spacing: float = 0.0) -> "WalkState":
        return step(self, S, I, spacing)


def step(state: WalkState, S: float, I: float, spacing: float = 0.0) -> WalkState:
    if S < 0 or I > 0:
        raise ValueError("need S >= 0 and I <= 0")
    return WalkState(state.V + S + I, max(state.J, state.V + S), state.steps + 1, state.elapsed + spacing)


@dataclass(frozen=True)
class WalkResult:
    V: float
    J: float
    elapsed: float
    cost: float


@dataclass(frozen=True)
class GridRealisation:
    """Spacings and factor draws of one Poisson grid, in arrival order."""

    spacings: np.ndarray
    sup_draws: np.ndarray
    inf_draws: np.ndarray

    def __post_init__(self):
        n = len(self.sup_draws)
        if len(self.spacings) != n or len(self.inf_draws) != n:
            raise ValueError("grid arrays must have equal length")
        if np.any(np.asarray(self.spacings) <= 0):
            raise ValueError("spacings must be positive")
        if np.any(np.asarray(self.sup_draws) < 0) or np.any(np.asarray(self.inf_draws) > 0):
            raise ValueError("need sup draws >= 0 and inf draws <= 0")

    def __len__(self) -> int:
        return len(self.sup_draws)


def walk_grid(grid: GridRealisation, upto: int | None = None) -> WalkState:
    """Walk over the first ``upto`` arrivals of a grid (all of them by default)."""
    k = len(grid) if upto is None else int(upto)
    if k == 0:
        return WalkState()
    S = np.asarray(grid.sup_draws[:k], dtype=float)
    I = np.asarray(grid.inf_draws[:k], dtype=float)
    V = np.cumsum(S + I)
    before = np.concatenate(([0.0], V[:-1]))
    J = max(0.0, float(np.max(before + S)))
    return WalkState(float(V[-1]), J, k, float(np.sum(grid.spacings[:k])))


# ---------------------------------------------------------------- kernels

def _walk_kernels(draw):
    """Compile the Gamma-horizon kernels around one factor sampler.

    ``draw`` is a compile-time constant, so the unsigned sampler inlines into the
    loop; a runtime branch to the rejection sampler would block that.
    """

    @nb.njit(cache=True)
    def gamma_one(keys, idx, tab_s, tab_i, n, q, record, st_s, st_i, st_t):
        init_state(st_s, keys[_SUP, 0], keys[_SUP, 1], idx)
        init_state(st_i, keys[_INF, 0], keys[_INF, 1], idx)
        init_state(st_t, keys[_SPACING, 0], keys[_SPACING, 1], idx)
        V = 0.0
        J = 0.0
        el = 0.0
        for _ in range(n):
            S = draw(st_s, tab_s)
            I = -draw(st_i, tab_i)
            if V + S > J:
                J = V + S
            V += S + I
            if record:
                el += -math.log(next_uniform(st_t)) / q
        return V, J, el

    @nb.njit(cache=True, parallel=True)
    def gamma_batch(keys, tab_s, tab_i, n, q, record, start, out):
        for i in nb.prange(out.shape[0]):
            st_s = np.zeros(STATE_SIZE, np.uint64)
            st_i = np.zeros(STATE_SIZE, np.uint64)
            st_t = np.zeros(STATE_SIZE, np.uint64)
            V, J, el = gamma_one(keys, np.uint64(start + i), tab_s, tab_i, n, q, record, st_s, st_i, st_t)
            out[i, 0] = V
            out[i, 1] = J
            out[i, 2] = el

    @nb.njit(cache=True)
    def grid(keys, idx, tab_s, tab_i, q, out):
        st_s = np.zeros(STATE_SIZE, np.uint64)
        st_i = np.zeros(STATE_SIZE, np.uint64)
        st_t = np.zeros(STATE_SIZE, np.uint64)
        init_state(st_s, keys[_SUP, 0], keys[_SUP, 1], idx)
        init_state(st_i, keys[_INF, 0], keys[_INF, 1], idx)
        init_state(st_t, keys[_SPACING, 0], keys[_SPACING, 1], idx)
        for k in range(out.shape[1]):
            S = draw(st_s, tab_s)
            I = -draw(st_i, tab_i)
            out[0, k] = -math.log(next_uniform(st_t)) / q
            out[1, k] = S
            out[2, k] = I

    @nb.njit(cache=True, parallel=True)
    def grid_batch(keys, tab_s, tab_i, q, start, out):
        for i in nb.prange(out.shape[0]):
            grid(keys, np.uint64(start + i), tab_s, tab_i, q, out[i])

    return SimpleNamespace(gamma_one=gamma_one, gamma_batch=gamma_batch, grid=grid, grid_batch=grid_batch)


_KERNELS = {False: _walk_kernels(draw_unsigned), True: _walk_kernels(draw_magnitude)}


def walk_kernels(signed: bool) -> SimpleNamespace:
    return _KERNELS[bool(signed)]


@nb.njit(cache=True)
def bm_step_pair(st_n, st_b, mu, sigma, s):
    """Exact ``(X_s, sup_{u<=s} X_u)`` for BM: Gaussian endpoint, then the reflection inverse."""
    x = mu * s + sigma * math.sqrt(s) * next_normal(st_n)
    u = next_uniform(st_b)
    m = 0.5 * (x + math.sqrt(x * x - 2.0 * sigma * sigma * s * math.log(u)))
    return x, m


@nb.njit(cache=True)
def _t_one(keys, idx, mu, sigma, q, t, st_t, st_n, st_b):
    init_state(st_t, keys[_SPACING, 0], keys[_SPACING, 1], idx)
    init_state(st_n, keys[_NORMAL, 0], keys[_NORMAL, 1], idx)
    init_state(st_b, keys[_BRIDGE, 0], keys[_BRIDGE, 1], idx)
    V = 0.0
    J = 0.0
    el = 0.0
    steps = 0
    while el <= t:
        s = -math.log(next_uniform(st_t)) / q
        el += s
        x, m = bm_step_pair(st_n, st_b, mu, sigma, s)
        if V + m > J:
            J = V + m
        V += x
        steps += 1
    return V, J, el, steps


@nb.njit(cache=True, parallel=True)
def _t_batch(keys, mu, sigma, q, t, start, out):
    for i in nb.prange(out.shape[0]):
        st_t = np.zeros(STATE_SIZE, np.uint64)
        st_n = np.zeros(STATE_SIZE, np.uint64)
        st_b = np.zeros(STATE_SIZE, np.uint64)
        V, J, el, steps = _t_one(keys, np.uint64(start + i), mu, sigma, q, t, st_t, st_n, st_b)
        out[i, 0] = V
        out[i, 1] = J
        out[i, 2] = el
        out[i, 3] = steps


@nb.njit(cache=True, parallel=True)
def _gamma_times(keys, n, q, start, out):
    for i in nb.prange(out.shape[0]):
        st = np.zeros(STATE_SIZE, np.uint64)
        init_state(st, keys[_SPACING, 0], keys[_SPACING, 1], np.uint64(start + i))
        # one log per 16 spacings: a product of 16 uniforms stays far above the underflow limit
        acc = 0.0
        prod = 1.0
        for k in range(n):
            prod *= next_uniform(st)
            if (k & 15) == 15:
                acc += math.log(prod)
                prod = 1.0
        out[i] = -(acc + math.log(prod)) / q


# ---------------------------------------------------------------- Python API

def _check_nt(n: int, t: float):
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not t > 0:
        raise ValueError("t must be positive")


def _sampler(model_or_sampler, q: float) -> FactorSampler:
    if isinstance(model_or_sampler, FactorSampler):
        if not math.isclose(model_or_sampler.q, q, rel_tol=1e-12):
            raise ValueError(f"factor sampler built for q={model_or_sampler.q}, walk needs q={q}")
        return model_or_sampler
    return default_sampler(model_or_sampler, q)


def _checked(out: np.ndarray) -> np.ndarray:
    if np.isnan(out).any():
        raise SamplingError("a factor draw failed (envelope rejection did not accept)")
    return out


def draw_grid(model: LevyModel | FactorSampler, n: int, t: float, streams: StreamFamily,
              sample_index: int = 0) -> GridRealisation:
    """The first ``n`` arrivals of a rate-``n/t`` grid, drawn from the same streams the walks use."""
    _check_nt(n, t)
    q = n / t
    fs = _sampler(model, q)
    out = np.empty((3, int(n)))
    walk_kernels(fs.signed).grid(streams.keys, np.uint64(sample_index), fs.sup.table, fs.inf.table, q, out)
    return GridRealisation(*_checked(out))


def grid_batch(model: LevyModel | FactorSampler, n: int, t: float, streams: StreamFamily,
               count: int, start: int = 0) -> np.ndarray:
    """``count`` grids at once, shaped ``(count, 3, n)``: spacings, sup draws, inf draws."""
    _check_nt(n, t)
    q = n / t
    fs = _sampler(model, q)
    out = np.empty((int(count), 3, int(n)))
    walk_kernels(fs.signed).grid_batch(streams.keys, fs.sup.table, fs.inf.table, q, int(start), out)
    return _checked(out)


def gamma_horizon_batch(model: LevyModel | FactorSampler, n: int, t: float, streams: StreamFamily,
                        count: int, start: int = 0, record_time: bool = True) -> np.ndarray:
    """``count`` walks to the Gamma(n, n/t) horizon; rows ``(V, J, elapsed)``, sample indices from ``start``."""
    _check_nt(n, t)
    q = n / t
    fs = _sampler(model, q)
    out = np.empty((int(count), 3))
    walk_kernels(fs.signed).gamma_batch(streams.keys, fs.sup.table, fs.inf.table, int(n), q, bool(record_time),
                                         int(start), out)
    return _checked(out)


def gamma_horizon_times(n: int, t: float, streams: StreamFamily, count: int, start: int = 0) -> np.ndarray:
    """Realised ``g(n, n/t)`` horizons alone, from the walk's spacing stream (equal up to rounding to ``elapsed``)."""
    _check_nt(n, t)
    out = np.empty(int(count))
    _gamma_times(streams.keys, int(n), n / t, int(start), out)
    return out


def simulate_gamma_horizon(model: LevyModel | FactorSampler, n: int, t: float, streams: StreamFamily,
                           sample_index: int = 0) -> WalkResult:
    """One walk of ``n`` steps at factor rate ``n/t``; cost is ``n`` factor pairs."""
    V, J, el = gamma_horizon_batch(model, n, t, streams, 1, sample_index)[0]
    return WalkResult(float(V), float(J), float(el), float(n))


def _bm_params(model) -> tuple[float, float]:
    if isinstance(model, BrownianMotion):
        return model.mu, model.sigma
    raise TypeError("the T(n, t) horizon is only available for Brownian motion")


def T_horizon_batch(mu: float, sigma: float, n: int, t: float, streams: StreamFamily,
                    count: int, start: int = 0) -> np.ndarray:
    """Rows ``(V, J, elapsed, steps)`` of walks stopped at the first arrival after ``t``."""
    _check_nt(n, t)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    out = np.empty((int(count), 4))
    _t_batch(streams.keys, float(mu), float(sigma), n / t, float(t), int(start), out)
    return out


def simulate_T_horizon_bm(mu: float, sigma: float, n: int, t: float, streams: StreamFamily,
                          sample_index: int = 0) -> WalkResult:
    V, J, el, steps = T_horizon_batch(mu, sigma, n, t, streams, 1, sample_index)[0]
    return WalkResult(float(V), float(J), float(el), float(steps))
