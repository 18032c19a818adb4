"""Payoff functionals ``F(V, J)`` of the terminal value and running maximum.

All payoffs are vectorised: they accept scalars or equal-shape arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BarrierPayoff",
    "ConstantPayoff",
    "LipschitzPayoff",
    "barrier",
    "lipschitz_test",
    "make_payoff",
]


@dataclass(frozen=True)
class BarrierPayoff:
    """Up-and-in put ``(K - e^(x0+V))^+ 1{x0 + J > b}``."""

    K: float = 1.0
    b: float = 0.2
    x0: float = 0.0

    def __post_init__(self):
        if not (self.K > 0 and self.b > 0):
            raise ValueError("barrier payoff needs K > 0 and b > 0")

    def __call__(self, V, J):
        return barrier(self, V, J)

    def to_dict(self) -> dict:
        return {"kind": "barrier", "K": self.K, "b": self.b, "x0": self.x0}


def barrier(p: BarrierPayoff, V, J):
    V = np.asarray(V, dtype=float)
    J = np.asarray(J, dtype=float)
    put = np.maximum(p.K - np.exp(p.x0 + V), 0.0)
    out = np.where(p.x0 + J > p.b, put, 0.0)
    return float(out) if out.ndim == 0 else out


_LIPSCHITZ = ("V", "J", "absV+J", "minJ")


def lipschitz_test(V, J, kind: str = "J", c: float = 1.0):
    """Lipschitz-1 test functionals: ``V``, ``J``, ``|V| + J`` or ``min(J, c)``."""
    V = np.asarray(V, dtype=float)
    J = np.asarray(J, dtype=float)
    if kind == "V":
        out = V + 0.0 * J
    elif kind == "J":
        out = J + 0.0 * V
    elif kind == "absV+J":
        out = np.abs(V) + J
    elif kind == "minJ":
        out = np.minimum(J, c) + 0.0 * V
    else:
        raise ValueError(f"unknown Lipschitz functional {kind!r}; choose from {_LIPSCHITZ}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LipschitzPayoff:
    kind: str = "J"
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in _LIPSCHITZ:
            raise ValueError(f"unknown Lipschitz functional {self.kind!r}")

    def __call__(self, V, J):
        return lipschitz_test(V, J, self.kind, self.c)

    def to_dict(self) -> dict:
        return {"kind": "lipschitz", "functional": self.kind, "c": self.c}


@dataclass(frozen=True)
class ConstantPayoff:
    value: float = 1.0

    def __call__(self, V, J):
        shape = np.broadcast(np.asarray(V), np.asarray(J)).shape
        if not shape:
            return float(self.value)
        return np.full(shape, float(self.value))

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


def make_payoff(spec: dict):
    """Build a payoff from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "barrier":
            return BarrierPayoff(**{k: float(v) for k, v in spec.items()})
        if kind == "lipschitz":
            return LipschitzPayoff(str(spec.get("functional", "J")), float(spec.get("c", 1.0)))
        if kind == "constant":
            return ConstantPayoff(float(spec.get("value", 1.0)))
    except TypeError as exc:
        raise ValueError(f"bad payoff parameters: {exc}") from None
    raise ValueError(f"unknown payoff kind {kind!r}")
