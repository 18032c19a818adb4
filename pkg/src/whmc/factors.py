"""Wiener-Hopf factor samplers.

``S_q`` (supremum at an independent Exp(q) time) and ``I_q`` (infimum) are
represented as exponential mixtures.  For Brownian motion each side is a
single exponential.  For the beta-class the factor characteristic functions
are infinite products over the real solutions of ``psi(z) = q`` interlaced
with the poles of ``psi``; truncating after N factors and expanding in
partial fractions yields a finite mixture whose cost per draw does not
depend on ``q``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from contextlib import contextmanager
from functools import lru_cache

import numba as nb
import numpy as np

from scipy import special

from .models import BetaClass, BrownianMotion, LevyModel, log_gamma_ratio
from .rng import UniformStream, next_uniform

log = logging.getLogger(__name__)

__all__ = [
    "BracketingError",
    "CancellationError",
    "ExponentialMixture",
    "FactorSampler",
    "SamplingError",
    "ZeroSet",
    "bm_factor_rates",
    "build_mixture",
    "build_series_mixture",
    "cached_factor_provider",
    "default_sampler",
    "factor_options",
    "factor_provider",
    "product_cf",
    "find_zeros",
    "sample_factor",
    "truncation_check",
]

DEFAULT_TRUNCATION = 50
# roots computed for the series method and exponentials kept before the remainder
DEFAULT_SERIES_ROOTS = 1500
DEFAULT_COMPONENTS = 400
MAX_REJECTIONS = 10_000


class BracketingError(RuntimeError):
    """No sign change of ``psi - q`` inside a pole interval."""


class CancellationError(RuntimeError):
    """Partial-fraction weights lost too much precision; lower N."""


class SamplingError(RuntimeError):
    pass


def bm_factor_rates(mu: float, sigma: float, q: float) -> tuple[float, float]:
    """Rates of ``S_q ~ Exp(theta_plus)`` and ``-I_q ~ Exp(theta_minus)`` for BM.

    They are the roots of ``sigma**2 theta**2 / 2 + mu theta - q = 0``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not q > 0:
        raise ValueError("q must be positive")
    s2 = sigma * sigma
    root = math.sqrt(mu * mu + 2.0 * s2 * q)
    # both written without subtractive cancellation
    theta_plus = 2.0 * q / (mu + root)
    theta_minus = 2.0 * q / (root - mu)
    return theta_plus, theta_minus


@dataclass(frozen=True)
class ZeroSet:
    """Solutions of ``psi(z) = q`` on both half-lines with their bounding poles.

    Root ``k >= 1`` on a side sits in the gap between poles ``k-1`` and ``k``; its
    fractional position in that gap is kept in ``frac_*`` so that distances to the
    neighbouring poles are available to full relative precision.  Root 0 sits in the
    first gap ``(0, pole 0)``.
    """

    q: float
    zeros_pos: np.ndarray
    zeros_neg: np.ndarray
    poles_pos: np.ndarray
    poles_neg: np.ndarray
    truncation_N: int
    max_residual: float
    frac_pos: np.ndarray | None = None
    frac_neg: np.ndarray | None = None
    scale_pos: tuple[float, float] = (1.0, 1.0)
    scale_neg: tuple[float, float] = (1.0, 1.0)
    drift_pos: tuple[float, float] = (0.0, 0.0)
    drift_neg: tuple[float, float] = (0.0, 0.0)

    def check_interlacing(self) -> bool:
        ok = True
        for zeros, poles in ((self.zeros_pos, self.poles_pos), (-self.zeros_neg, -self.poles_neg)):
            if len(poles) == 0:
                continue
            ok &= zeros[0] < poles[0]
            for k in range(1, len(zeros)):
                ok &= poles[k - 1] < zeros[k] < poles[k] if k < len(poles) else poles[k - 1] < zeros[k]
        return bool(ok)

    def side(self, side: str) -> "_Side":
        if side == "sup":
            return _Side(self.zeros_pos, self.poles_pos, self.frac_pos, *self.scale_pos, self.drift_pos)
        if side == "inf":
            return _Side(-self.zeros_neg, -self.poles_neg, self.frac_neg, *self.scale_neg, self.drift_neg)
        raise ValueError("side must be 'sup' or 'inf'")


@dataclass(frozen=True)
class _Side:
    """Magnitudes of one side's roots and poles, in gap coordinates when available.

    With poles ``b*(a+j)``, root k >= 1 is ``b*(a + (k-1) + s_k)`` and root 0 is
    ``b*a*s_0``; ``base`` and ``off`` hold ``k-1`` and ``s_k`` (``0`` and ``-a(1-s_0)``).
    """

    rates: np.ndarray
    poles: np.ndarray
    frac: np.ndarray | None
    a: float
    b: float
    # sum_{j>=J} (s_{j+1} - s_J) / (a+j)**2 and 2 * sum (s_{j+1} - s_J) / (a+j)**3
    drift: tuple[float, float] = (0.0, 0.0)

    @property
    def exact(self) -> bool:
        return self.frac is not None and len(self.poles) > 0

    def _coords(self):
        n = len(self.rates)
        base = np.concatenate(([0.0], np.arange(n - 1, dtype=float)))
        off = np.concatenate(([-self.a * (1.0 - self.frac[0])], self.frac[1:]))
        return base, off

    def log_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """``log|w_k|`` and ``sign(w_k)`` of the partial-fraction expansion of the truncated product."""
        n = len(self.rates)
        logmag = np.zeros(n)
        sgn = np.ones(n)
        if self.exact:
            base, off = self._coords()
            units = self.a + base + off
            pidx = np.arange(len(self.poles), dtype=float)
            punits = self.a + pidx
        for i in range(n):
            if self.exact:
                num = ((pidx - base[i]) - off[i]) / punits
                den = ((base - base[i]) + (off - off[i])) / units
            else:
                num = 1.0 - self.rates[i] / self.poles
                den = 1.0 - self.rates[i] / self.rates
            den[i] = 1.0
            logmag[i] = np.sum(np.log(np.abs(num))) - np.sum(np.log(np.abs(den)))
            sgn[i] = np.prod(np.sign(num)) * np.prod(np.sign(den))
        return logmag, sgn

    def tail(self):
        """Root/pole pairs beyond the last computed root.

        The gap fraction is frozen at its last value, which gives closed forms, and the
        drift of later fractions is added to first order.  Returns a function of the rate
        giving ``log prod_{j >= J} (1 - r/p_j)/(1 - r/r_{j+1})`` and the tail's
        contributions to the factor's mean and variance.
        """
        J = float(len(self.poles))
        s = float(self.frac[-1])
        a, b = self.a, self.b
        c1, c2 = self.drift

        def log_factor(rate):
            u = np.asarray(rate) / b
            return log_gamma_ratio(a + J - u, s, 0.0) - log_gamma_ratio(a + J, s, 0.0) - u * c1

        mean = -(special.digamma(a + J + s) - special.digamma(a + J) + c1) / b
        var = -(special.polygamma(1, a + J) - special.polygamma(1, a + J + s) + c2) / b**2
        return log_factor, float(mean), float(var)

    def cumulants(self) -> tuple[float, float]:
        """Mean and variance of the truncated product's law."""
        r, p = self.rates, self.poles
        if self.exact:
            base, off = self._coords()
            units = self.a + base[1:] + off[1:]
            punits = self.a + np.arange(len(p), dtype=float)
            # 1/r_k - 1/p_{k-1} with p_{k-1} - r_k = -b*s_k
            mean = 1.0 / r[0] + np.sum(-off[1:] / (units * punits)) / self.b
            var = 1.0 / r[0] ** 2 + np.sum(-off[1:] * (units + punits) / (units * punits) ** 2) / self.b**2
            return float(mean), float(var)
        mean = 1.0 / r[0] + np.sum(1.0 / r[1:] - 1.0 / p)
        var = 1.0 / r[0] ** 2 + np.sum(1.0 / r[1:] ** 2 - 1.0 / p**2)
        return float(mean), float(var)


def _bisect_gaps(fun, lo, hi, q):
    """Vectorised bisection of ``fun(u) = q`` on each open interval ``(lo[i], hi[i])``.

    ``fun`` tends to -inf at every left end (or equals ``psi(0) = 0 < q`` at 0) and to
    +inf at every right end, so the sign change is guaranteed for a meromorphic psi.
    """
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    width = hi - lo
    left = np.where(lo == 0.0, 0.0, lo + 1e-12 * width)
    right = hi - 1e-12 * width
    fl = fun(left) - q
    fr = fun(right) - q
    bad = ~((fl < 0) & (fr > 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BracketingError(f"no sign change of psi - q on ({lo[i]:.6g}, {hi[i]:.6g})")
    a, b = left, right
    for _ in range(200):
        mid = 0.5 * (a + b)
        done = (mid <= a) | (mid >= b)
        if done.all():
            break
        neg = fun(mid) - q < 0
        a = np.where(neg & ~done, mid, a)
        b = np.where(~neg & ~done, mid, b)
    ra = np.abs(fun(a) - q)
    rb = np.abs(fun(b) - q)
    return np.where(ra <= rb, a, b)


def _gap_fractions(model: BetaClass, positive: bool, gaps: np.ndarray, q: float) -> tuple[np.ndarray, float]:
    """Fractions ``s`` solving ``psi = q`` in the listed pole gaps (-1 is ``(0, pole 0)``)."""
    k = np.asarray(gaps)
    n = len(k)
    fun = lambda s: model.laplace_exponent_gap(positive, k, s) - q  # noqa: E731
    # psi -> -inf at each left pole (psi(0) = 0 < q in the first gap) and +inf at each right pole
    lo = np.zeros(n)
    hi = np.ones(n)
    eps = np.finfo(float).tiny
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bad = ~((fun(np.where(k < 0, 0.0, eps)) < 0) & (fun(np.full(n, 1.0 - 2**-53)) > 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BracketingError(f"no sign change of psi - q in pole gap {k[i]}")
    for _ in range(1100):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi)
        if done.all():
            break
        neg = fun(mid) < 0
        lo = np.where(neg & ~done, mid, lo)
        hi = np.where(~neg & ~done, mid, hi)
    rl, rh = np.abs(fun(lo)), np.abs(fun(hi))
    s = np.where(rl <= rh, lo, hi)
    return s, float(np.minimum(rl, rh).max())


def _gap_roots(model: BetaClass, positive: bool, count: int, q: float) -> tuple[np.ndarray, float]:
    """Gap fractions of the first ``count`` roots on one side, and the worst residual."""
    return _gap_fractions(model, positive, np.arange(-1, count - 1), q)


def _side_roots(fun, q: float) -> tuple[np.ndarray, float]:
    """The single positive solution of ``fun(u) = q`` when a side carries no jumps."""
    hi = 1.0
    while fun(np.array([hi]))[0] - q <= 0:
        hi *= 2.0
        if hi > 1e12:
            raise BracketingError("psi(z) - q has no positive root")
    r = _bisect_gaps(fun, np.array([0.0]), np.array([hi]), q)
    return r, float(np.abs(fun(r) - q).max())


def _tail_drift(model: BetaClass, positive: bool, J: int, s_last: float, q: float,
                span: float = 1e4, points: int = 96) -> tuple[float, float]:
    """First-order correction for the drift of the gap fractions beyond root ``J``.

    Fractions are computed on a geometric grid of gaps out to ``span * J`` and the sums
    over gaps are replaced by integrals in ``log j``; past the grid the fraction is
    taken as constant.
    """
    _, a_, _, _ = model.params.side(positive)
    gaps = np.unique(np.round(J * np.geomspace(1.0, span, points)).astype(np.int64))
    gaps = gaps[gaps >= J]
    s = _gap_fractions(model, positive, gaps, q)[0] - s_last
    j = gaps.astype(float)
    lj = np.log(j)
    c1 = np.trapezoid(s / (a_ + j) ** 2 * j, lj) + s[-1] / (a_ + j[-1])
    c2 = np.trapezoid(2.0 * s / (a_ + j) ** 3 * j, lj) + s[-1] / (a_ + j[-1]) ** 2
    return float(c1), float(c2)


def find_zeros(model: BetaClass, q: float, N: int = DEFAULT_TRUNCATION) -> ZeroSet:
    """Solutions of ``psi(z) = q``: N+1 positive and N+1 negative ones (fewer if a side has no jumps)."""
    if not q > 0:
        raise ValueError("q must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    if not isinstance(model, BetaClass):
        raise TypeError("find_zeros needs a beta-class model")
    out = {}
    for positive, name in ((True, "pos"), (False, "neg")):
        c, a_, b, _ = model.params.side(positive)
        sign = 1.0 if positive else -1.0
        if c == 0:
            r, res = _side_roots(lambda u: model.laplace_exponent(sign * u), q)
            out[name] = (sign * r, np.empty(0), None, res, (a_, b), (0.0, 0.0))
        else:
            s, res = _gap_roots(model, positive, N + 1, q)
            z = model.gap_point(positive, np.arange(-1, N), s)
            drift = _tail_drift(model, positive, N, float(s[-1]), q)
            out[name] = (z, model.poles(positive, N), s, res, (a_, b), drift)
    zp, pp, sp, rp, cp, dp = out["pos"]
    zn, pn, sn, rn, cn, dn = out["neg"]
    return ZeroSet(q, zp, zn, pp, pn, N, max(rp, rn) / q, sp, sn, cp, cn, dp, dn)


def _alias_tables(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose's alias tables for a probability vector."""
    k = len(p)
    scaled = p * k / p.sum()
    prob = np.ones(k)
    alias = np.arange(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    return prob, alias


class ExponentialMixture:
    """Law ``atom * delta_0 + sum_k w_k Exp(r_k)`` on x >= 0, mirrored for the inf side.

    Weights may be signed as long as the density stays nonnegative; signed
    mixtures are sampled by rejection from the absolute-weight envelope.
    """

    def __init__(self, rates, weights, side: str = "sup", atom: float = 0.0):
        if side not in ("sup", "inf"):
            raise ValueError("side must be 'sup' or 'inf'")
        self.rates = np.ascontiguousarray(rates, dtype=float)
        self.weights = np.ascontiguousarray(weights, dtype=float)
        if self.rates.shape != self.weights.shape or self.rates.ndim != 1 or len(self.rates) == 0:
            raise ValueError("rates and weights must be equal-length 1-d arrays")
        if np.any(self.rates <= 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rates must be positive and finite")
        if not 0.0 <= atom < 1.0:
            raise ValueError("atom must lie in [0, 1)")
        self.side = side
        self.sign = 1.0 if side == "sup" else -1.0
        self.atom = float(atom)
        self.signed = bool(np.any(self.weights < 0))
        if self.signed and self.atom > 0:
            raise ValueError("signed mixtures cannot carry an atom")
        self._prob, self._alias = _alias_tables(np.append(np.abs(self.weights), self.atom))

    def __len__(self) -> int:
        return len(self.rates)

    def __repr__(self) -> str:
        return (f"ExponentialMixture(side={self.side!r}, terms={len(self)}, atom={self.atom:.3g}, "
                f"mean={self.mean():.6g})")

    @property
    def table(self) -> np.ndarray:
        """Packed arrays for the compiled samplers; the last column is the atom (rate inf)."""
        k = len(self) + 1
        t = np.zeros((5, k))
        t[0, :-1] = self.rates
        t[0, -1] = np.inf
        t[1, :-1] = self.weights
        t[1, -1] = self.atom
        t[2] = self._prob
        t[3] = self._alias
        t[4, 0] = 1.0 if self.signed else 0.0
        return t

    def pdf(self, x):
        """Density of the continuous part (support [0, inf) or (-inf, 0])."""
        y = self.sign * np.asarray(x, dtype=float)
        val = np.sum(self.weights * self.rates * np.exp(-np.multiply.outer(np.maximum(y, 0), self.rates)), axis=-1)
        return np.where(y >= 0, val, 0.0)

    def sf(self, y):
        """``P(|factor| > y)`` for y >= 0."""
        y = np.asarray(y, dtype=float)
        return np.sum(self.weights * np.exp(-np.multiply.outer(np.maximum(y, 0), self.rates)), axis=-1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.side == "sup":
            return np.where(x >= 0, 1.0 - self.sf(x), 0.0)
        return np.where(x < 0, self.sf(-x), 1.0)

    def cf(self, theta):
        th = np.asarray(theta, dtype=float)
        return self.atom + np.sum(self.weights / (1.0 - 1j * self.sign * np.multiply.outer(th, 1.0 / self.rates)),
                                  axis=-1)

    def mean(self) -> float:
        return float(self.sign * np.sum(self.weights / self.rates))

    def second_moment(self) -> float:
        return float(np.sum(2.0 * self.weights / self.rates**2))

    def sample(self, stream: UniformStream, size: int | None = None):
        return sample_factor(self, stream, size)


def _truncated_product_cf(theta, zeros: np.ndarray, poles: np.ndarray, sign: float):
    th = np.multiply.outer(np.asarray(theta, dtype=float), np.ones(1))
    out = 1.0 / (1.0 - 1j * sign * th / zeros[0])
    for k in range(1, len(zeros)):
        out = out * (1.0 - 1j * sign * th / poles[k - 1]) / (1.0 - 1j * sign * th / zeros[k])
    return out[..., 0]


def product_cf(zeros: ZeroSet, side: str, theta):
    """CF of the truncated infinite product, for checking the mixture."""
    if side == "sup":
        return _truncated_product_cf(theta, zeros.zeros_pos, zeros.poles_pos, 1.0)
    return _truncated_product_cf(theta, -zeros.zeros_neg, -zeros.poles_neg, -1.0)


def build_mixture(zeros: ZeroSet, side: str) -> ExponentialMixture:
    """Partial-fraction expansion of the truncated factor product (CF equal to the product)."""
    sd = zeros.side(side)
    logmag, sgn = sd.log_weights()
    weights = sgn * np.exp(logmag)
    err = abs(math.fsum(weights) - 1.0)
    if err > 1e-6:
        raise CancellationError(f"partial-fraction weights sum to 1 + {err:.2e}; reduce N")
    return ExponentialMixture(sd.rates, weights, side)


def build_series_mixture(zeros: ZeroSet, side: str, components: int = DEFAULT_COMPONENTS) -> ExponentialMixture:
    """Mixture from the leading terms of the untruncated partial-fraction series.

    The weights of the first ``components`` exponentials are those of the infinite
    product: the truncated-product weights times a closed-form correction for the
    root/pole pairs beyond the last computed root.  The remaining probability mass,
    which includes any atom of the factor at 0, is replaced by an atom plus one
    exponential matching its mass, mean and second moment.
    """
    sd = zeros.side(side)
    if not sd.exact:
        return build_mixture(zeros, side)
    # weights near the last root depend on the tail model; keep well inside
    K = min(int(components), max(len(sd.rates) // 3, 1))
    if K < 1:
        raise ValueError("components must be at least 1")
    logmag, sgn = sd.log_weights()
    log_tail, tail_mean, tail_var = sd.tail()
    rates = sd.rates[:K]
    lw = logmag[:K] + log_tail(rates)
    if np.any(sgn[:K] < 0):
        raise CancellationError("negative weight in the series expansion")
    w = np.exp(lw)
    mean, var = sd.cumulants()
    mean += tail_mean
    var += tail_var
    rest = 1.0 - math.fsum(w)
    rest_m1 = mean - math.fsum(w / rates)
    rest_m2 = var + mean * mean - math.fsum(2.0 * w / rates**2)
    if rest < -1e-9:
        raise CancellationError(f"series weights exceed 1 by {-rest:.2e}")
    atom = max(rest, 0.0)
    if rest > 0 and rest_m1 > 0 and rest_m2 > 0:
        # atom + w' Exp(r): w'/r = m1 and 2 w'/r**2 = m2; Cauchy-Schwarz keeps w' <= rest
        r = 2.0 * rest_m1 / rest_m2
        wr = min(rest_m1 * r, rest)
        rates = np.append(rates, r)
        w = np.append(w, wr)
        atom = rest - wr
    return ExponentialMixture(rates, w, side, atom=atom)


@nb.njit(cache=True, inline="always")
def draw_unsigned(st, tab):
    """Draw of ``|factor|`` for a mixture with nonnegative weights (small enough to inline)."""
    k = tab.shape[1]
    if k == 2 and tab[1, 1] == 0.0:
        # a single exponential needs no alias draw
        return -math.log(next_uniform(st)) / tab[0, 0]
    u = next_uniform(st) * k
    j = int(u)
    if j >= k:
        j = k - 1
    if u - j >= tab[2, j]:
        j = int(tab[3, j])
    return -math.log(next_uniform(st)) / tab[0, j]


@nb.njit(cache=True)
def _draw_signed(st, tab):
    k = tab.shape[1]
    for _ in range(MAX_REJECTIONS):
        u = next_uniform(st) * k
        j = int(u)
        if j >= k:
            j = k - 1
        if u - j >= tab[2, j]:
            j = int(tab[3, j])
        x = -math.log(next_uniform(st)) / tab[0, j]
        f = 0.0
        g = 0.0
        for i in range(k - 1):
            term = tab[0, i] * math.exp(-tab[0, i] * x)
            f += tab[1, i] * term
            g += abs(tab[1, i]) * term
        if next_uniform(st) * g <= f:
            return x
    return np.nan


@nb.njit(cache=True)
def draw_magnitude(st, tab):
    """One draw of ``|factor|`` from a packed mixture table; NaN if rejection fails."""
    if tab[4, 0] != 0.0:
        return _draw_signed(st, tab)
    return draw_unsigned(st, tab)


@nb.njit(cache=True)
def _draw_many(st, tab, out):
    for i in range(out.shape[0]):
        out[i] = draw_magnitude(st, tab)


def sample_factor(mixture: ExponentialMixture, stream: UniformStream, size: int | None = None):
    """Draw from the mixture; sup-side draws are >= 0, inf-side draws <= 0."""
    tab = mixture.table
    if size is None:
        x = float(draw_magnitude(stream.state, tab))
        if math.isnan(x):
            raise SamplingError("envelope rejection did not accept")
        return mixture.sign * x
    out = np.empty(int(size))
    _draw_many(stream.state, tab, out)
    if np.isnan(out).any():
        raise SamplingError("envelope rejection did not accept")
    return mixture.sign * out


@dataclass(frozen=True)
class FactorSampler:
    """Precomputed ``(S_q, I_q)`` laws at one rate ``q``."""

    q: float
    sup: ExponentialMixture
    inf: ExponentialMixture
    zeros: ZeroSet | None = None

    def draw(self, sup_stream: UniformStream, inf_stream: UniformStream, size: int | None = None):
        return sample_factor(self.sup, sup_stream, size), sample_factor(self.inf, inf_stream, size)

    def cf_sum(self, theta):
        """Exact CF of ``S_q + I_q`` for independent factors."""
        return self.sup.cf(theta) * self.inf.cf(theta)

    @property
    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sup.table, self.inf.table

    @property
    def signed(self) -> bool:
        return self.sup.signed or self.inf.signed


FACTOR_METHODS = ("series", "product")


def _mixtures(zs: ZeroSet, method: str, components: int):
    if method == "product":
        return build_mixture(zs, "sup"), build_mixture(zs, "inf")
    return (build_series_mixture(zs, "sup", components),
            build_series_mixture(zs, "inf", components))


def truncation_check(model: BetaClass, q: float, N: int, method: str = "product",
                     components: int = DEFAULT_COMPONENTS) -> float:
    """Largest change of a factor mean when the truncation goes from N to 2N."""
    m1 = _mixtures(find_zeros(model, q, N), method, components)
    m2 = _mixtures(find_zeros(model, q, 2 * N), method, components)
    return max(abs(a.mean() - b.mean()) for a, b in zip(m1, m2))


def factor_provider(model: LevyModel, q: float, truncation_N: int | None = None,
                    check_truncation: bool = False, tol: float = 1e-6, method: str = "series",
                    components: int = DEFAULT_COMPONENTS) -> FactorSampler:
    """Build the factor sampler of ``model`` at rate ``q``.

    ``method="product"`` expands the product truncated after ``truncation_N`` pole pairs
    (default 50).  ``method="series"`` (default) uses ``truncation_N`` roots (default 1500)
    to get the leading ``components`` weights of the untruncated expansion and lumps the rest.
    """
    if not q > 0:
        raise ValueError("q must be positive")
    if method not in FACTOR_METHODS:
        raise ValueError(f"method must be one of {FACTOR_METHODS}")
    if isinstance(model, BrownianMotion):
        tp, tm = bm_factor_rates(model.mu, model.sigma, q)
        return FactorSampler(q, ExponentialMixture([tp], [1.0], "sup"), ExponentialMixture([tm], [1.0], "inf"))
    if isinstance(model, BetaClass):
        if truncation_N is None:
            truncation_N = DEFAULT_TRUNCATION if method == "product" else DEFAULT_SERIES_ROOTS
        zs = find_zeros(model, q, truncation_N)
        if zs.max_residual > 1e-10:
            log.info("largest relative residual |psi(z)/q - 1| = %.2e at q=%g", zs.max_residual, q)
        sampler = FactorSampler(q, *_mixtures(zs, method, components), zs)
        if check_truncation:
            moved = truncation_check(model, q, truncation_N, method, components)
            if moved >= tol:
                log.warning("factor means moved by %.3g between N=%d and N=%d at q=%g",
                            moved, truncation_N, 2 * truncation_N, q)
        return sampler
    raise TypeError(f"unsupported model {type(model).__name__}")


@lru_cache(maxsize=128)
def cached_factor_provider(model: LevyModel, q: float, truncation_N: int | None = None,
                           method: str = "series", components: int = DEFAULT_COMPONENTS) -> FactorSampler:
    """Memoised :func:`factor_provider`; models are frozen and hashable."""
    return factor_provider(model, q, truncation_N, method=method, components=components)


_OPTIONS = {"truncation_N": None, "method": "series"}


@contextmanager
def factor_options(truncation_N: int | None = None, method: str = "series"):
    """Temporarily change how the walks build their factor samplers."""
    if method not in FACTOR_METHODS:
        raise ValueError(f"method must be one of {FACTOR_METHODS}")
    if truncation_N is not None and int(truncation_N) < 1:
        raise ValueError("truncation_N must be a positive integer")
    saved = dict(_OPTIONS)
    _OPTIONS.update(truncation_N=None if truncation_N is None else int(truncation_N), method=method)
    try:
        yield
    finally:
        _OPTIONS.update(saved)


def default_sampler(model: LevyModel, q: float) -> FactorSampler:
    """Cached sampler at rate ``q`` under the current :func:`factor_options`."""
    return cached_factor_provider(model, q, _OPTIONS["truncation_N"], _OPTIONS["method"])
