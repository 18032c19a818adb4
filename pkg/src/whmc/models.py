"""Lévy models: Brownian motion with drift and the ten-parameter beta-class.

Conventions: ``E[exp(i*theta*X_t)] = exp(-t * Psi(theta))`` with

    Psi(theta) = i*a*theta + sigma**2 * theta**2 / 2
                 + int (1 - exp(i*theta*x) + i*theta*x*1{|x|<1}) Pi(dx),

and the Laplace exponent ``psi(z) = log E[exp(z*X_1)] = -Psi(-i*z)``.
For the beta-class, ``Psi`` is computed by quadrature of the Lévy integral
and ``psi`` on the real line by its meromorphic Beta-function form, so the
two are independent routes to the same function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

__all__ = [
    "BrownianMotion",
    "BetaParams",
    "BetaClass",
    "ModelMoments",
    "LevyModel",
    "beta_levy_density",
    "char_exponent",
    "laplace_exponent",
    "moments",
    "QuadratureError",
]

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10
# admissibility checks on the beta-class integrals run at this looser level
_CHECK_TOL = 1e-8


class QuadratureError(RuntimeError):
    """Quadrature of a Lévy integral did not reach its tolerance."""


@dataclass(frozen=True)
class ModelMoments:
    mean1: float
    var1: float


@dataclass(frozen=True)
class BrownianMotion:
    """``X_t = mu*t + sigma*W_t``."""

    mu: float = 0.0
    sigma: float = 1.0

    kind = "bm"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Brownian motion needs sigma > 0")

    @property
    def bounded_variation(self) -> bool:
        return False

    @property
    def blumenthal_getoor(self) -> float:
        return 0.0

    def char_exponent(self, theta):
        theta = np.asarray(theta, dtype=complex)
        return -1j * self.mu * theta + 0.5 * self.sigma**2 * theta**2

    def laplace_exponent(self, z):
        z = np.asarray(z)
        return 0.5 * self.sigma**2 * z**2 + self.mu * z

    def moments(self) -> ModelMoments:
        return ModelMoments(self.mu, self.sigma**2)

    def to_dict(self) -> dict:
        return {"kind": "bm", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class BetaParams:
    a1: float = 1.0
    a2: float = 1.0
    b1: float = 1.0
    b2: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    lambda1: float = 1.5
    lambda2: float = 1.5
    a: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("c1", "c2", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("lambda1", "lambda2"):
            if not 0 < getattr(self, name) < 3:
                raise ValueError(f"{name} must lie in (0, 3)")

    @classmethod
    def symmetric(cls, lam: float, sigma: float = 0.0, a: float = 1.0) -> "BetaParams":
        """The family used in the numerical study: ``a = c_i = a_i = b_i = 1``."""
        return cls(lambda1=lam, lambda2=lam, sigma=sigma, a=a)

    def side(self, positive: bool) -> tuple[float, float, float, float]:
        """``(c, a, b, lambda)`` of the positive or negative half-line."""
        if positive:
            return self.c1, self.a1, self.b1, self.lambda1
        return self.c2, self.a2, self.b2, self.lambda2


def beta_levy_density(p: BetaParams, x):
    """Lévy density of the beta-class at ``x != 0`` (vectorised)."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ValueError("the Lévy density is not defined at x = 0")
    out = np.zeros_like(x)
    pos = x > 0
    for mask, sign in ((pos, 1.0), (~pos, -1.0)):
        c, a_, b, lam = p.side(sign > 0)
        if c == 0 or not mask.any():
            continue
        y = sign * x[mask]
        out[mask] = c * np.exp(-a_ * b * y) / (-np.expm1(-b * y)) ** lam
    return out if out.ndim else float(out)


def _regular_part(x, c, a_, b, lam):
    """``x**lam * density(x)`` on x > 0; smooth down to x = 0."""
    x = np.asarray(x, dtype=float)
    bx = b * x
    ratio = np.where(bx > 1e-12, x / -np.expm1(-np.maximum(bx, 1e-300)), 1.0 / b)
    return c * np.exp(-a_ * bx) * ratio**lam


def _phi2(w):
    """``(exp(w) - 1 - w) / w**2`` for complex ``w``, stable near 0."""
    if abs(w) < 0.1:
        term, total = 0.5, 0.0
        for k in range(2, 16):
            total += term
            term *= w / (k + 1)
        return total
    return (np.exp(w) - 1.0 - w) / (w * w)


def _quad(f, lo, hi, **kw):
    val, err = integrate.quad(f, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400, **kw)
    if not np.isfinite(val) or err > max(1e3 * QUAD_EPSABS, 1e-6 * abs(val), _CHECK_TOL):
        raise QuadratureError(f"quadrature error estimate {err:.2e} on [{lo}, {hi}]")
    return val


def _tail_end(a_, b):
    # density decays like exp(-a*b*x); beyond this point it is below 1e-18 of its size at 1
    return 1.0 + 42.0 / (a_ * b)


def _side_char_integral(z: complex, c, a_, b, lam) -> complex:
    """``int_0^inf (1 - e^{izx} + izx 1{x<1}) c e^{-abx} (1-e^{-bx})^{-lam} dx``."""
    if c == 0:
        return 0.0j

    def near(x, part):
        v = z * z * _phi2(1j * z * x) * _regular_part(x, c, a_, b, lam)
        return v.real if part == 0 else v.imag

    def far(x, part):
        v = (1.0 - np.exp(1j * z * x)) * _regular_part(x, c, a_, b, lam) * x**-lam
        return v.real if part == 0 else v.imag

    hi = _tail_end(a_, b)
    out = []
    for part in (0, 1):
        v = _quad(near, 0.0, 1.0, args=(part,), weight="alg", wvar=(2.0 - lam, 0.0))
        v += _quad(far, 1.0, hi, args=(part,))
        out.append(v)
    return complex(out[0], out[1])


_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360)


def log_gamma_ratio(z, a, b):
    """``log Gamma(z+a) - log Gamma(z+b)`` for ``z > 0``, without cancellation at large z."""
    z = np.asarray(z, dtype=float)
    small = z < 20.0
    zs = np.where(small, 1.0, z)
    w1, w2 = zs + a, zs + b
    out = ((a - b) * np.log(zs) + (zs + a - 0.5) * np.log1p(a / zs)
           - (zs + b - 0.5) * np.log1p(b / zs) - (a - b))
    for n, coef in enumerate(_STIRLING, start=1):
        out = out + coef * (w1 ** (1 - 2 * n) - w2 ** (1 - 2 * n))
    direct = special.gammaln(np.where(small, z, 1.0) + a) - special.gammaln(np.where(small, z, 1.0) + b)
    return np.where(small, direct, out)


def _beta_fn_real(x, y):
    """Beta function for real arguments off the poles."""
    x = np.asarray(x, dtype=float)
    xy = x + y
    # 1/Gamma is entire, so its sign is 0 where x + y hits a pole of Gamma and B vanishes;
    # rgamma underflows past ~171, so only ask it when x + y <= 0
    sgn_xy = np.where(xy > 0, 1.0, np.sign(special.rgamma(np.minimum(xy, 0.0))))
    sgn = special.gammasgn(x) * special.gammasgn(y) * sgn_xy
    with np.errstate(over="ignore", invalid="ignore"):
        mag = np.exp(special.gammaln(x) + special.gammaln(y) - special.gammaln(xy))
        pos = (x > 0) & (xy > 0)
        # Gamma(x)/Gamma(x+y) without cancelling two large log-gammas
        ratio = special.gamma(y) * np.exp(log_gamma_ratio(np.where(pos, x, 1.0), 0.0, y))
    return np.where(pos, ratio, np.where(sgn == 0, 0.0, sgn * mag))


def _beta_fn_complex(x, y):
    return np.exp(special.loggamma(x) + special.loggamma(complex(y)) - special.loggamma(x + y))


def _side_laplace(z, c, a_, b, lam, _h=1e-5):
    """``int_0^inf (e^{zx} - 1 - zx) c e^{-abx}(1-e^{-bx})^{-lam} dx``, continued past the poles.

    Poles sit at ``z = b*(a+k)``, k = 0, 1, ...
    """
    if c == 0:
        return np.zeros_like(np.asarray(z, dtype=float)) if np.isrealobj(z) else 0.0j
    if abs(lam - round(lam)) < 1e-7:
        # Gamma(1-lam) blows up at integer lam but the combination has a finite limit
        return 0.5 * (_side_laplace(z, c, a_, b, lam + _h) + _side_laplace(z, c, a_, b, lam - _h))
    y = 1.0 - lam
    is_complex = np.iscomplexobj(z)
    beta = _beta_fn_complex if is_complex else _beta_fn_real
    b0 = _beta_fn_real(a_, y)
    d1 = b0 * (special.digamma(a_) - special.digamma(a_ + y))
    return (c / b) * (beta(a_ - z / b, y) - b0) + (c * z / b**2) * d1


def _beta_fn_gap(k, s, y):
    """``B(-(k+s), y)`` for integer ``k >= 0`` and ``0 < s < 1``.

    Reflecting both ``Gamma(x)`` and ``Gamma(x+y)`` leaves
    ``Gamma(y) sin(pi (s-y)) / sin(pi s) * Gamma(1+k+s-y) / Gamma(1+k+s)``, which stays
    accurate when ``s`` is within a few ulps of 0 or 1.
    """
    k = np.asarray(k, dtype=float)
    s = np.asarray(s, dtype=float)
    near = np.minimum(s, 1.0 - s)
    ratio = np.exp(log_gamma_ratio(1.0 + k + s, -y, 0.0))
    return special.gamma(y) * np.sin(np.pi * (s - y)) / np.sin(np.pi * near) * ratio


def _side_laplace_gap(k, s, c, a_, b, lam, _h=1e-5):
    """``_side_laplace`` at ``z = b*(a+k+s)`` (``k >= 0``) or ``z = b*a*s`` (``k == -1``)."""
    k = np.asarray(k)
    s = np.asarray(s, dtype=float)
    if abs(lam - round(lam)) < 1e-7:
        return 0.5 * (_side_laplace_gap(k, s, c, a_, b, lam + _h)
                      + _side_laplace_gap(k, s, c, a_, b, lam - _h))
    y = 1.0 - lam
    first = k < 0
    z = np.where(first, b * a_ * s, b * (a_ + k + s))
    x_first = a_ * (1.0 - s)
    beta = np.where(first, _beta_fn_real(np.where(first, x_first, 1.0), y),
                    _beta_fn_gap(np.maximum(k, 0), s, y))
    b0 = _beta_fn_real(a_, y)
    d1 = b0 * (special.digamma(a_) - special.digamma(a_ + y))
    return (c / b) * (beta - b0) + (c * z / b**2) * d1


@dataclass(frozen=True)
class BetaClass:
    """Beta-class Lévy process with triplet ``(a, sigma, Pi)``."""

    params: BetaParams = field(default_factory=BetaParams)

    kind = "beta"

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def blumenthal_getoor(self) -> float:
        p = self.params
        lams = [lam for c, lam in ((p.c1, p.lambda1), (p.c2, p.lambda2)) if c > 0]
        if not lams:
            return 0.0
        return min(max(max(lams) - 1.0, 0.0), 2.0 - 1e-15)

    @property
    def bounded_variation(self) -> bool:
        p = self.params
        active = [lam for c, lam in ((p.c1, p.lambda1), (p.c2, p.lambda2)) if c > 0]
        return p.sigma == 0 and all(lam < 2 for lam in active)

    def levy_density(self, x):
        return beta_levy_density(self.params, x)

    def _side_moment(self, positive: bool, power: int, lo: float, hi: float | None) -> float:
        c, a_, b, lam = self.params.side(positive)
        if c == 0:
            return 0.0
        hi = _tail_end(a_, b) if hi is None else hi

        if lo == 0.0:
            return _quad(lambda x: _regular_part(x, c, a_, b, lam), 0.0, hi,
                         weight="alg", wvar=(power - lam, 0.0)) if hi <= 1.0 else (
                _quad(lambda x: _regular_part(x, c, a_, b, lam), 0.0, 1.0,
                      weight="alg", wvar=(power - lam, 0.0))
                + _quad(lambda x: x ** (power - lam) * _regular_part(x, c, a_, b, lam), 1.0, hi))
        return _quad(lambda x: x ** (power - lam) * _regular_part(x, c, a_, b, lam), lo, hi)

    @cached_property
    def large_jump_mean(self) -> float:
        """``int_{|x|>=1} x Pi(dx)``."""
        return self._side_moment(True, 1, 1.0, None) - self._side_moment(False, 1, 1.0, None)

    def small_jump_activity(self) -> float:
        """``int_{|x|<1} x**2 Pi(dx)``; finite for every admissible parameter set."""
        return self._side_moment(True, 2, 0.0, 1.0) + self._side_moment(False, 2, 0.0, 1.0)

    def large_jump_second_moment(self) -> float:
        """``int_{|x|>=1} x**2 Pi(dx)``; finiteness is assumption (A1)."""
        return self._side_moment(True, 2, 1.0, None) + self._side_moment(False, 2, 1.0, None)

    def char_exponent(self, theta):
        theta_arr = np.asarray(theta, dtype=complex)
        p = self.params
        flat = []
        for z in theta_arr.ravel():
            v = 1j * p.a * z + 0.5 * p.sigma**2 * z * z
            v += _side_char_integral(z, *p.side(True))
            v += _side_char_integral(-z, *p.side(False))
            flat.append(v)
        out = np.array(flat, dtype=complex).reshape(theta_arr.shape)
        return out if out.ndim else complex(out)

    def laplace_exponent(self, z):
        p = self.params
        drift = self.large_jump_mean - p.a
        return (0.5 * p.sigma**2 * z * z + drift * z
                + _side_laplace(z, *p.side(True)) + _side_laplace(-z, *p.side(False)))

    def gap_point(self, positive: bool, k, s):
        """Point ``u = +-z`` with ``z = b*(a+k+s)``, or ``b*a*s`` in the first gap (``k == -1``)."""
        _, a_, b, _ = self.params.side(positive)
        k = np.asarray(k)
        z = np.where(k < 0, b * a_ * np.asarray(s), b * (a_ + k + s))
        return z if positive else -z

    def laplace_exponent_gap(self, positive: bool, k, s):
        """``psi`` at ``gap_point(positive, k, s)``, accurate right up to the bounding poles."""
        p = self.params
        drift = self.large_jump_mean - p.a
        u = self.gap_point(positive, k, s)
        near = _side_laplace_gap(k, s, *p.side(positive))
        far = _side_laplace(-u if positive else u, *p.side(not positive))
        return 0.5 * p.sigma**2 * u * u + drift * u + near + far

    def poles(self, positive: bool, count: int) -> np.ndarray:
        """First ``count`` poles of ``psi`` on one half-line, ordered away from 0."""
        c, a_, b, _ = self.params.side(positive)
        if c == 0:
            return np.empty(0)
        k = np.arange(count, dtype=float)
        return (1.0 if positive else -1.0) * b * (a_ + k)

    @cached_property
    def _moments(self) -> ModelMoments:
        p = self.params
        mean1 = -p.a + self.large_jump_mean
        second = (self._side_moment(True, 2, 0.0, None) + self._side_moment(False, 2, 0.0, None))
        return ModelMoments(mean1, p.sigma**2 + second)

    def moments(self) -> ModelMoments:
        return self._moments

    def to_dict(self) -> dict:
        return {"kind": "beta", **self.params.__dict__}


LevyModel = BrownianMotion | BetaClass


def char_exponent(model: LevyModel, z):
    return model.char_exponent(z)


def laplace_exponent(model: LevyModel, z):
    return model.laplace_exponent(z)


def moments(model: LevyModel) -> ModelMoments:
    return model.moments()
