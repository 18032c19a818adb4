"""Counter-based random streams.

Every stream is a Philox4x64-10 sequence whose key is a pure function of
``(experiment_seed, level, replica, purpose_tag)`` and whose counter carries
the sample index, so any sample of any level can be regenerated in isolation
and in any order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

__all__ = [
    "Purpose",
    "StreamFamily",
    "StreamKey",
    "UniformStream",
    "stream",
    "exponential",
    "philox4x64",
]

_MASK64 = (1 << 64) - 1

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_FOUR = np.uint64(4)
_TWO_M53 = 2.0 ** -53

# layout of a stream state vector
_K0, _K1, _CTR, _IDX, _POS, _BUF = 0, 1, 2, 3, 4, 5
STATE_SIZE = 9


class Purpose(enum.IntEnum):
    """Tags separating the independent random inputs of one sample."""

    SPACING = 1
    SUP = 2
    INF = 3
    COIN = 4
    NORMAL = 5
    BRIDGE = 6
    DIRECT = 7
    EXTRA_SPACING = 8
    GENERIC = 15


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class StreamKey:
    experiment_seed: int
    level: int = 0
    replica: int = 0
    sample_index: int = 0
    purpose_tag: int = Purpose.GENERIC

    def philox_key(self) -> tuple[int, int]:
        """The 128-bit Philox key; ``sample_index`` is not part of it."""
        h = _splitmix64(self.experiment_seed & _MASK64)
        for i, field in enumerate((self.level, self.replica, int(self.purpose_tag))):
            h = _splitmix64(h ^ _splitmix64(((i + 1) << 56) ^ (field & _MASK64)))
        return h, _splitmix64(h ^ 0x5851F42D4C957F2D)


def family_keys(seed: int, level: int = 0, replica: int = 0) -> np.ndarray:
    """Philox keys for every :class:`Purpose`, shaped ``(16, 2)`` (row = tag)."""
    out = np.zeros((16, 2), dtype=np.uint64)
    for tag in range(16):
        k0, k1 = StreamKey(seed, level, replica, 0, tag).philox_key()
        out[tag, 0] = k0
        out[tag, 1] = k1
    return out


@intrinsic
def _mulhilo(typingctx, a, b):
    """High and low words of the 128-bit product of two uint64 (one native multiply)."""
    sig = types.UniTuple(types.uint64, 2)(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i64, i128 = ir.IntType(64), ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        hi = builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), i64)
        lo = builder.trunc(prod, i64)
        return context.make_tuple(builder, signature.return_type, [hi, lo])

    return sig, codegen


@nb.njit(cache=True, inline="always")
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds; returns the four output words."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        # bumping after the last round is harmless and keeps the loop branch-free
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@nb.njit(cache=True)
def init_state(st, k0, k1, sample_index):
    st[_K0] = k0
    st[_K1] = k1
    st[_CTR] = np.uint64(0)
    st[_IDX] = np.uint64(sample_index)
    st[_POS] = np.uint64(4)


@nb.njit(cache=True, inline="always")
def next_u64(st):
    pos = st[_POS]
    if pos >= _FOUR:
        r0, r1, r2, r3 = philox4x64(st[_CTR], st[_IDX], _ZERO, _ZERO, st[_K0], st[_K1])
        st[_BUF] = r0
        st[_BUF + 1] = r1
        st[_BUF + 2] = r2
        st[_BUF + 3] = r3
        st[_CTR] = st[_CTR] + _ONE
        pos = _ZERO
    st[_POS] = pos + _ONE
    return st[np.int64(pos) + _BUF]


@nb.njit(cache=True, inline="always")
def next_uniform(st):
    """Uniform on the open interval (0, 1) with 53 random bits."""
    return ((next_u64(st) >> _S11) + 0.5) * _TWO_M53


@nb.njit(cache=True)
def next_exponential(st, rate):
    return -math.log(next_uniform(st)) / rate


@nb.njit(cache=True)
def next_normal(st):
    # Box-Muller, cosine branch only so one normal costs exactly two uniforms
    u1 = next_uniform(st)
    u2 = next_uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def _fill_uniform(st, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(st)


@nb.njit(cache=True)
def _fill_u64(st, out):
    for i in range(out.shape[0]):
        out[i] = next_u64(st)


class UniformStream:
    """Replayable source of i.i.d. uniforms on (0, 1) for one :class:`StreamKey`.

    Not thread-safe; give each consumer its own stream.
    """

    def __init__(self, key: StreamKey):
        self.key = key
        self.state = np.zeros(STATE_SIZE, dtype=np.uint64)
        k0, k1 = key.philox_key()
        init_state(self.state, np.uint64(k0), np.uint64(k1), np.uint64(key.sample_index & _MASK64))

    def random(self, size: int | None = None):
        if size is None:
            return float(next_uniform(self.state))
        out = np.empty(int(size), dtype=np.float64)
        _fill_uniform(self.state, out)
        return out

    def integers64(self, size: int) -> np.ndarray:
        out = np.empty(int(size), dtype=np.uint64)
        _fill_u64(self.state, out)
        return out

    def __iter__(self):
        while True:
            yield self.random()

    def __repr__(self) -> str:
        return f"UniformStream({self.key!r}, block={int(self.state[_CTR])})"


@nb.njit(cache=True, inline="always")
def next_bit(st, bits):
    """One fair coin from a 64-bit reservoir ``bits = [word, remaining]``."""
    if bits[1] == np.uint64(0):
        bits[0] = next_u64(st)
        bits[1] = np.uint64(64)
    b = bits[0] & _ONE
    bits[0] = bits[0] >> _ONE
    bits[1] = bits[1] - _ONE
    return b == _ONE


@dataclass(frozen=True)
class StreamFamily:
    """All streams of one (seed, level, replica): a key per purpose, sample index in the counter."""

    experiment_seed: int
    level: int = 0
    replica: int = 0

    @property
    def keys(self) -> np.ndarray:
        return family_keys(self.experiment_seed, self.level, self.replica)

    def key(self, purpose: int, sample_index: int = 0) -> StreamKey:
        return StreamKey(self.experiment_seed, self.level, self.replica, sample_index, int(purpose))

    def stream(self, purpose: int, sample_index: int = 0) -> UniformStream:
        return UniformStream(self.key(purpose, sample_index))


def stream(key: StreamKey) -> UniformStream:
    return UniformStream(key)


def exponential(s: UniformStream, rate: float) -> float:
    """One draw of ``-ln(U) / rate``."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return -math.log(s.random()) / rate
