"""Fine/coarse coupling by Poisson thinning.

Each arrival of the rate ``n_f/t`` grid is kept with probability ``1/s``; the
kept arrivals form a rate ``n_c/t`` grid with ``n_c = n_f/s``.  The factor
pairs of a bundle of fine arrivals (everything after one kept arrival up to
and including the next) collapse into one coarse pair:

    S_c = max_k ( sum_{j<k} (S_j + I_j) + S_k ),    I_c = sum_k (S_k + I_k) - S_c.

The coarse walk after ``n_c`` bundles is therefore the fine walk stopped at the
``n_c``-th kept arrival, which is how the compiled kernels evaluate it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numba as nb
import numpy as np

from .factors import FactorSampler, default_sampler, draw_magnitude, draw_unsigned
from .models import LevyModel
from .rng import STATE_SIZE, Purpose, StreamFamily, UniformStream, init_state, next_bit, next_uniform
from .walk import GridRealisation, _check_nt, _checked, _t_one, bm_step_pair

__all__ = [
    "CoupledDraw",
    "coarsen_factors",
    "coupled_gamma_batch",
    "coupled_gamma_sample",
    "coupled_T_batch",
    "coupled_T_sample_bm",
    "thin_indices",
]

_SUP = int(Purpose.SUP)
_INF = int(Purpose.INF)
_SPACING = int(Purpose.SPACING)
_COIN = int(Purpose.COIN)
_DIRECT = int(Purpose.DIRECT)
_EXTRA = int(Purpose.EXTRA_SPACING)

# columns of the batch outputs
FINE_V, FINE_J, COARSE_V, COARSE_J, COST, FINE_T, COARSE_T = range(7)


@dataclass(frozen=True)
class CoupledDraw:
    fine_payoff: float
    coarse_payoff: float
    cost: float
    fine: tuple[float, float] = (0.0, 0.0)
    coarse: tuple[float, float] = (0.0, 0.0)


def thin_indices(n_fine: int, coin_stream: UniformStream, s: int = 2) -> np.ndarray:
    """1-based indices of the kept arrivals among the first ``n_fine``.

    For ``s = 2`` each coin is one bit of the stream's 64-bit words, least significant
    first, exactly as the compiled kernels consume them; otherwise an arrival is kept
    when a uniform falls below ``1/s``.
    """
    if n_fine < 1:
        raise ValueError("n_fine must be at least 1")
    if s < 2:
        raise ValueError("s must be at least 2")
    if s == 2:
        words = coin_stream.integers64(-(-n_fine // 64))
        bits = ((words[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1)).ravel()[:n_fine]
        keep = bits == 1
    else:
        keep = coin_stream.random(n_fine) < 1.0 / s
    return np.flatnonzero(keep) + 1


def coarsen_factors(fine: GridRealisation, accepted) -> GridRealisation:
    """Collapse the fine arrivals into one coarse pair per kept arrival."""
    acc = np.asarray(accepted, dtype=np.int64)
    if len(acc) and (acc[0] < 1 or acc[-1] > len(fine) or np.any(np.diff(acc) <= 0)):
        raise ValueError("accepted indices must be increasing and within the fine grid")
    inc = np.asarray(fine.sup_draws) + np.asarray(fine.inf_draws)
    sp, sup, inf = [], [], []
    prev = 0
    for kappa in acc:
        S = np.asarray(fine.sup_draws[prev:kappa])
        partial = np.concatenate(([0.0], np.cumsum(inc[prev:kappa])[:-1]))
        s_c = float(np.max(partial + S))
        sup.append(s_c)
        inf.append(float(np.sum(inc[prev:kappa])) - s_c)
        sp.append(float(np.sum(fine.spacings[prev:kappa])))
        prev = int(kappa)
    # floating round-off can leave I_c a hair above 0 on a one-point bundle with I = 0
    return GridRealisation(np.array(sp), np.array(sup), np.minimum(np.array(inf), 0.0))


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True, inline="always")
def _coin(st, bits, p):
    if p == 0.5:
        return next_bit(st, bits)
    return next_uniform(st) < p


def _coupled_kernels(draw):
    """Coupled Gamma-horizon kernels around one factor sampler (see ``walk._walk_kernels``)."""

    @nb.njit(cache=True)
    def direct_completion(st_d, st_e, tab_cs, tab_ci, count, q_c, record, Vc, Jc, elc):
        for _ in range(count):
            S = draw(st_d, tab_cs)
            I = -draw(st_d, tab_ci)
            if Vc + S > Jc:
                Jc = Vc + S
            Vc += S + I
            if record:
                elc += -math.log(next_uniform(st_e)) / q_c
        return Vc, Jc, elc

    @nb.njit(cache=True)
    def coupled_one(keys, idx, tab_s, tab_i, tab_cs, tab_ci, n_f, n_c, q_f, q_c, p, direct, record,
                    st_s, st_i, st_t, st_c, st_d, st_e, bits, row):
        init_state(st_s, keys[_SUP, 0], keys[_SUP, 1], idx)
        init_state(st_i, keys[_INF, 0], keys[_INF, 1], idx)
        init_state(st_t, keys[_SPACING, 0], keys[_SPACING, 1], idx)
        init_state(st_c, keys[_COIN, 0], keys[_COIN, 1], idx)
        init_state(st_d, keys[_DIRECT, 0], keys[_DIRECT, 1], idx)
        init_state(st_e, keys[_EXTRA, 0], keys[_EXTRA, 1], idx)
        bits[0] = np.uint64(0)
        bits[1] = np.uint64(0)
        V = 0.0
        J = 0.0
        el = 0.0
        Vc = 0.0
        Jc = 0.0
        elc = 0.0
        kept = 0
        for _ in range(n_f):
            S = draw(st_s, tab_s)
            I = -draw(st_i, tab_i)
            if V + S > J:
                J = V + S
            V += S + I
            if record:
                el += -math.log(next_uniform(st_t)) / q_f
            if kept < n_c and _coin(st_c, bits, p):
                kept += 1
                Vc = V
                Jc = J
                elc = el
        row[0] = V
        row[1] = J
        row[5] = el
        k = n_f
        # grid extension: keep walking the fine grid until the coarse walk is complete
        while kept < n_c and not direct:
            S = draw(st_s, tab_s)
            I = -draw(st_i, tab_i)
            if V + S > J:
                J = V + S
            V += S + I
            if record:
                el += -math.log(next_uniform(st_t)) / q_f
            k += 1
            if _coin(st_c, bits, p):
                kept += 1
                Vc = V
                Jc = J
                elc = el
        cost = float(k)
        if kept < n_c:
            # continue from the last fine arrival: the open bundle ends one Exp(q_c) spacing
            # later (memorylessness), so it closes with the first direct pair
            Vc, Jc, elc = direct_completion(st_d, st_e, tab_cs, tab_ci, n_c - kept, q_c, record, V, J, el)
            cost += n_c - kept
        row[2] = Vc
        row[3] = Jc
        row[4] = cost
        row[6] = elc

    @nb.njit(cache=True, parallel=True)
    def coupled_batch(keys, tab_s, tab_i, tab_cs, tab_ci, n_f, n_c, q_f, q_c, p, direct, record, start, out):
        for i in nb.prange(out.shape[0]):
            st_s = np.zeros(STATE_SIZE, np.uint64)
            st_i = np.zeros(STATE_SIZE, np.uint64)
            st_t = np.zeros(STATE_SIZE, np.uint64)
            st_c = np.zeros(STATE_SIZE, np.uint64)
            st_d = np.zeros(STATE_SIZE, np.uint64)
            st_e = np.zeros(STATE_SIZE, np.uint64)
            bits = np.zeros(2, np.uint64)
            row = np.zeros(7)
            coupled_one(keys, np.uint64(start + i), tab_s, tab_i, tab_cs, tab_ci, n_f, n_c, q_f, q_c, p,
                        direct, record, st_s, st_i, st_t, st_c, st_d, st_e, bits, row)
            for j in range(7):
                out[i, j] = row[j]

    return SimpleNamespace(batch=coupled_batch, one=coupled_one)


_KERNELS = {False: _coupled_kernels(draw_unsigned), True: _coupled_kernels(draw_magnitude)}


@nb.njit(cache=True, parallel=True)
def _coupled_T_batch(keys, mu, sigma, q_f, q_c, t, start, out):
    for i in nb.prange(out.shape[0]):
        idx = np.uint64(start + i)
        st_t = np.zeros(STATE_SIZE, np.uint64)
        st_n = np.zeros(STATE_SIZE, np.uint64)
        st_b = np.zeros(STATE_SIZE, np.uint64)
        st_c = np.zeros(STATE_SIZE, np.uint64)
        st_d = np.zeros(STATE_SIZE, np.uint64)
        st_e = np.zeros(STATE_SIZE, np.uint64)
        bits = np.zeros(2, np.uint64)
        V, J, el, steps = _t_one(keys, idx, mu, sigma, q_f, t, st_t, st_n, st_b)
        init_state(st_c, keys[_COIN, 0], keys[_COIN, 1], idx)
        out[i, 0] = V
        out[i, 1] = J
        out[i, 5] = el
        if next_bit(st_c, bits):
            # the fine terminal arrival is also a coarse arrival
            out[i, 2] = V
            out[i, 3] = J
            out[i, 4] = steps
            out[i, 6] = el
        else:
            # memorylessness: the next coarse arrival is one Exp(q_c) spacing later
            init_state(st_d, keys[_DIRECT, 0], keys[_DIRECT, 1], idx)
            init_state(st_e, keys[_EXTRA, 0], keys[_EXTRA, 1], idx)
            s = -math.log(next_uniform(st_e)) / q_c
            x, m = bm_step_pair(st_d, st_d, mu, sigma, s)
            out[i, 2] = V + x
            out[i, 3] = max(J, V + m)
            out[i, 4] = steps + 1
            out[i, 6] = el + s


# ---------------------------------------------------------------- Python API

def _level_sizes(n_coarse: int, s: int) -> tuple[int, int]:
    if int(n_coarse) != n_coarse or n_coarse < 1:
        raise ValueError("n_coarse must be a positive integer")
    if int(s) != s or s < 2:
        raise ValueError("coarsening factor s must be an integer >= 2")
    return int(n_coarse) * int(s), int(n_coarse)


def coupled_gamma_batch(model: LevyModel, n_coarse: int, t: float, streams: StreamFamily, count: int,
                        start: int = 0, s: int = 2, extension: str = "grid", record_time: bool = False,
                        fine_factors: FactorSampler | None = None,
                        coarse_factors: FactorSampler | None = None) -> np.ndarray:
    """Coupled Gamma-horizon walks at ``n_f = s*n_coarse`` and ``n_coarse``.

    Rows hold ``(V_f, J_f, V_c, J_c, cost, elapsed_f, elapsed_c)``.  When the fine grid
    has fewer than ``n_coarse`` kept arrivals, ``extension="grid"`` keeps drawing
    fine arrivals (charged to the cost) and ``extension="direct"`` continues the coarse
    walk from the last fine arrival with the missing pairs drawn at the coarse rate.
    """
    n_f, n_c = _level_sizes(n_coarse, s)
    _check_nt(n_f, t)
    if extension not in ("grid", "direct"):
        raise ValueError("extension must be 'grid' or 'direct'")
    q_f, q_c = n_f / t, n_c / t
    ff = fine_factors or default_sampler(model, q_f)
    if extension == "direct":
        cf = coarse_factors or default_sampler(model, q_c)
    else:
        cf = ff
    out = np.empty((int(count), 7))
    kernel = _KERNELS[ff.signed or cf.signed].batch
    kernel(streams.keys, ff.sup.table, ff.inf.table, cf.sup.table, cf.inf.table, n_f, n_c,
           q_f, q_c, 1.0 / s, extension == "direct", bool(record_time), int(start), out)
    return _checked(out)


def coupled_gamma_sample(model: LevyModel, level: int, n_coarse: int, t: float, payoff, streams: StreamFamily,
                         sample_index: int = 0, **kw) -> CoupledDraw:
    """One coupled draw; ``level`` only documents which stream family the caller chose."""
    if level < 1:
        raise ValueError("coupled draws exist for levels >= 1")
    r = coupled_gamma_batch(model, n_coarse, t, streams, 1, sample_index, **kw)[0]
    return CoupledDraw(float(payoff(r[FINE_V], r[FINE_J])), float(payoff(r[COARSE_V], r[COARSE_J])),
                       float(r[COST]), (float(r[FINE_V]), float(r[FINE_J])), (float(r[COARSE_V]), float(r[COARSE_J])))


def coupled_T_batch(mu: float, sigma: float, n_coarse: int, t: float, streams: StreamFamily, count: int,
                    start: int = 0) -> np.ndarray:
    """Coupled ``T(n, t)`` walks for BM with one coin per sample; same columns as the Gamma batch."""
    n_f, n_c = _level_sizes(n_coarse, 2)
    _check_nt(n_f, t)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    out = np.empty((int(count), 7))
    _coupled_T_batch(streams.keys, float(mu), float(sigma), n_f / t, n_c / t, float(t), int(start), out)
    return out


def coupled_T_sample_bm(mu: float, sigma: float, level: int, n_coarse: int, t: float, payoff,
                        streams: StreamFamily, sample_index: int = 0) -> CoupledDraw:
    if level < 1:
        raise ValueError("coupled draws exist for levels >= 1")
    r = coupled_T_batch(mu, sigma, n_coarse, t, streams, 1, sample_index)[0]
    return CoupledDraw(float(payoff(r[FINE_V], r[FINE_J])), float(payoff(r[COARSE_V], r[COARSE_J])),
                       float(r[COST]), (float(r[FINE_V]), float(r[FINE_J])), (float(r[COARSE_V]), float(r[COARSE_J])))
