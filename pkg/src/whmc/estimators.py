"""Single-level and multilevel Wiener-Hopf Monte Carlo estimators.

Level ``l`` of a multilevel run draws from the stream family ``(seed, l, replica)``;
pilot runs use the replica with bit 31 set, so they never share a key with the
production samples.  Sample ``i`` of a level always uses counter index ``i``, and
samples are reduced in fixed chunks, so results do not depend on the thread count.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .coupling import COARSE_J, COARSE_V, COST, FINE_J, FINE_V, coupled_gamma_batch, coupled_T_batch
from .models import LevyModel
from .rng import StreamFamily
from .walk import T_horizon_batch, _bm_params, gamma_horizon_batch

log = logging.getLogger(__name__)

__all__ = [
    "LevelPlan",
    "LevelStats",
    "MlmcReport",
    "MseDecomposition",
    "SingleLevelResult",
    "allocate_samples",
    "level_samples",
    "mlmc_estimate",
    "mlmc_run",
    "mse_decomposition",
    "pilot_levels",
    "single_level_estimate",
]

CHUNK = 1 << 16
PILOT_BIT = 1 << 31
DEFAULT_PILOT = 1000
DEFAULT_ALPHA = 0.25
HORIZONS = ("gamma", "T")


@dataclass(frozen=True)
class LevelPlan:
    n0: int
    L: int
    M: tuple[int, ...]
    s: int = 2

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(int(m) for m in self.M))
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise ValueError("n0 must be a positive integer")
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if int(self.s) != self.s or self.s < 2:
            raise ValueError("s must be an integer >= 2")
        if len(self.M) != self.L + 1:
            raise ValueError(f"need {self.L + 1} sample sizes, got {len(self.M)}")
        if min(self.M) < 2:
            raise ValueError("every level needs at least 2 samples")

    def n(self, level: int) -> int:
        return int(self.n0) * int(self.s) ** int(level)

    @property
    def levels(self) -> list[int]:
        return [self.n(l) for l in range(self.L + 1)]


@dataclass(frozen=True)
class LevelStats:
    """Summary of one level: ``mean``/``var`` of the level's correction, and its cost."""

    level: int
    n: int
    M: int
    mean: float
    var: float
    cost_units: float
    abs_mean: float
    wall_ms: float = 0.0

    @property
    def mean_cost(self) -> float:
        return self.cost_units / self.M


@dataclass(frozen=True)
class MlmcReport:
    estimate: float
    per_level: tuple[LevelStats, ...]
    bias_proxy: float
    stat_error: float
    total_cost: float
    alpha: float = DEFAULT_ALPHA
    horizon: str = "gamma"

    @property
    def L(self) -> int:
        return len(self.per_level) - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_level"] = [asdict(s) for s in self.per_level]
        return d


@dataclass(frozen=True)
class SingleLevelResult:
    estimate: float
    variance: float
    cost: float
    M: int
    n: int
    wall_ms: float = 0.0

    @property
    def stat_error(self) -> float:
        return math.sqrt(self.variance / self.M)


@dataclass(frozen=True)
class MseDecomposition:
    stat_error: float
    bias_estimate: float
    surrogate: bool
    method: str = "reference"

    @property
    def rmse(self) -> float:
        return math.hypot(self.stat_error, self.bias_estimate)


# ---------------------------------------------------------------- sampling

def _check_horizon(model, horizon: str, s: int):
    if horizon not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}")
    if horizon == "T":
        _bm_params(model)
        if s != 2:
            raise ValueError("the T(n, t) coupling is implemented for s = 2 only")


def level_samples(model: LevyModel, level: int, n: int, t: float, payoff, streams: StreamFamily,
                  count: int, start: int = 0, horizon: str = "gamma", s: int = 2,
                  extension: str = "grid") -> tuple[np.ndarray, np.ndarray]:
    """Per-sample corrections ``F^n - F^(n/s)`` (plain ``F^n`` on level 0) and their costs."""
    _check_horizon(model, horizon, s)
    if level == 0:
        if horizon == "gamma":
            out = gamma_horizon_batch(model, n, t, streams, count, start, record_time=False)
            return np.asarray(payoff(out[:, 0], out[:, 1]), dtype=float), np.full(len(out), float(n))
        mu, sigma = _bm_params(model)
        out = T_horizon_batch(mu, sigma, n, t, streams, count, start)
        return np.asarray(payoff(out[:, 0], out[:, 1]), dtype=float), out[:, 3].copy()
    if n % s:
        raise ValueError(f"n={n} is not divisible by s={s}")
    if horizon == "gamma":
        out = coupled_gamma_batch(model, n // s, t, streams, count, start, s=s, extension=extension)
    else:
        mu, sigma = _bm_params(model)
        out = coupled_T_batch(mu, sigma, n // 2, t, streams, count, start)
    diff = np.asarray(payoff(out[:, FINE_V], out[:, FINE_J]), dtype=float) \
        - np.asarray(payoff(out[:, COARSE_V], out[:, COARSE_J]), dtype=float)
    return diff, out[:, COST].copy()


@dataclass
class _Moments:
    # Chan et al. pairwise update, merged in chunk order
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    abs_sum: float = 0.0
    cost: float = 0.0

    def add(self, x: np.ndarray, cost: np.ndarray):
        k = len(x)
        if k == 0:
            return
        mx = float(np.mean(x))
        m2x = float(np.sum((x - mx) ** 2))
        n = self.count + k
        d = mx - self.mean
        self.mean += d * k / n
        self.m2 += m2x + d * d * self.count * k / n
        self.count = n
        self.abs_sum += float(np.sum(np.abs(x)))
        self.cost += float(np.sum(cost))

    @property
    def var(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


def _run_level(model, level, n, M, t, payoff, streams, horizon, s, extension, start=0) -> LevelStats:
    acc = _Moments()
    t0 = time.perf_counter()
    for lo in range(0, M, CHUNK):
        k = min(CHUNK, M - lo)
        x, c = level_samples(model, level, n, t, payoff, streams, k, start + lo, horizon, s, extension)
        acc.add(x, c)
    wall = 1e3 * (time.perf_counter() - t0)
    return LevelStats(level, n, M, acc.mean, acc.var, acc.cost, acc.abs_sum / M, wall)


def single_level_estimate(model: LevyModel, n: int, M: int, t: float, payoff, streams: StreamFamily,
                          horizon: str = "gamma") -> SingleLevelResult:
    """Plain WHMC: the mean of ``M`` independent ``F(V_n, J_n)``."""
    if M < 2:
        raise ValueError("M must be at least 2")
    st = _run_level(model, 0, int(n), int(M), t, payoff, streams, horizon, 2, "grid")
    return SingleLevelResult(st.mean, st.var, st.cost_units, st.M, st.n, st.wall_ms)


def _family(streams: StreamFamily, level: int, pilot: bool = False) -> StreamFamily:
    replica = streams.replica | PILOT_BIT if pilot else streams.replica
    return StreamFamily(streams.experiment_seed, level, replica)


def _bias_proxy(last: LevelStats, L: int, alpha: float) -> float:
    if L == 0:
        return float("nan")
    return abs(last.mean) / (2.0**alpha - 1.0)


def mlmc_estimate(model: LevyModel, plan: LevelPlan, t: float, payoff, streams: StreamFamily,
                  horizon: str = "gamma", extension: str = "grid", alpha: float = DEFAULT_ALPHA) -> MlmcReport:
    """Telescoping estimator over ``n_l = n0 * s**l``, ``l = 0..L``, with ``plan.M`` samples per level.

    ``streams`` fixes the seed and replica; its level is replaced by each level index.
    """
    _check_horizon(model, horizon, plan.s)
    stats = tuple(
        _run_level(model, l, plan.n(l), plan.M[l], t, payoff, _family(streams, l), horizon, plan.s, extension)
        for l in range(plan.L + 1))
    means = np.array([st.mean for st in stats])
    est = float(np.sum(means))
    stat = math.sqrt(sum(st.var / st.M for st in stats))
    return MlmcReport(est, stats, _bias_proxy(stats[-1], plan.L, alpha), stat,
                      float(sum(st.cost_units for st in stats)), alpha, horizon)


def pilot_levels(model: LevyModel, n0: int, L: int, t: float, payoff, streams: StreamFamily,
                 samples: int = DEFAULT_PILOT, s: int = 2, horizon: str = "gamma",
                 extension: str = "grid") -> tuple[LevelStats, ...]:
    """Level statistics from an independent pilot run (replica with the pilot bit set)."""
    plan = LevelPlan(n0, L, (samples,) * (L + 1), s)
    _check_horizon(model, horizon, s)
    return tuple(
        _run_level(model, l, plan.n(l), samples, t, payoff, _family(streams, l, pilot=True), horizon, s, extension)
        for l in range(L + 1))


def allocate_samples(level_vars, level_costs, target_stat_error: float) -> list[int]:
    """Sample sizes ``M_l ~ sqrt(V_l / C_l)`` with ``sum V_l / M_l <= target**2`` and ``M_l >= 2``.

    Zero variances get the minimum of two samples (logged); negative ones are rejected.
    """
    v = np.asarray(level_vars, dtype=float)
    c = np.asarray(level_costs, dtype=float)
    if v.shape != c.shape or v.ndim != 1 or len(v) == 0:
        raise ValueError("level_vars and level_costs must be nonempty and of equal length")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("level variances must be finite and nonnegative")
    if np.any(c <= 0):
        raise ValueError("level costs must be positive")
    if not target_stat_error > 0:
        raise ValueError("target_stat_error must be positive")
    if np.any(v == 0):
        log.warning("zero variance on levels %s; using the minimum sample size there", np.flatnonzero(v == 0).tolist())
    scale = float(np.sum(np.sqrt(v * c))) / target_stat_error**2
    raw = np.sqrt(v / c) * scale
    # snap values within round-off of an integer before taking the ceiling
    near = np.round(raw)
    raw = np.where(np.abs(raw - near) <= 1e-9 * np.maximum(near, 1.0), near, raw)
    return [max(2, int(math.ceil(r))) for r in raw]


def mlmc_run(model: LevyModel, n0: int, L: int, t: float, payoff, streams: StreamFamily,
             target_stat_error: float, pilot: int = DEFAULT_PILOT, s: int = 2, horizon: str = "gamma",
             extension: str = "grid", alpha: float = DEFAULT_ALPHA,
             pilot_stats: tuple[LevelStats, ...] | None = None) -> tuple[MlmcReport, LevelPlan]:
    """Pilot, allocate for ``target_stat_error``, then run the multilevel estimator."""
    if pilot_stats is None:
        pilot_stats = pilot_levels(model, n0, L, t, payoff, streams, pilot, s, horizon, extension)
    M = allocate_samples([p.var for p in pilot_stats], [p.mean_cost for p in pilot_stats], target_stat_error)
    plan = LevelPlan(n0, L, tuple(M), s)
    return mlmc_estimate(model, plan, t, payoff, streams, horizon, extension, alpha), plan


def mse_decomposition(report: MlmcReport, reference: float | None = None, alpha: float | None = None,
                      bias: str = "weak") -> MseDecomposition:
    """Statistical error and bias of a report.

    With a ``reference`` the bias is ``|estimate - reference|``.  Otherwise it is a
    surrogate from the finest correction divided by ``2**alpha - 1``: its mean
    (``bias="weak"``) or its mean absolute value (``bias="strong"``, an upper bound).
    """
    if reference is not None:
        return MseDecomposition(report.stat_error, abs(report.estimate - float(reference)), False, "reference")
    a = report.alpha if alpha is None else alpha
    if report.L == 0:
        return MseDecomposition(report.stat_error, float("nan"), True, bias)
    last = report.per_level[-1]
    if bias == "weak":
        b = abs(last.mean)
    elif bias == "strong":
        b = last.abs_mean
    else:
        raise ValueError("bias must be 'weak' or 'strong'")
    return MseDecomposition(report.stat_error, b / (2.0**a - 1.0), True, bias)
