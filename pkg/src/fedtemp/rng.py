"""Seedable random streams shared by every stochastic component.

Generator: xoshiro256** (Blackman & Vigna), state seeded from splitmix64.
A stream is keyed by ``(master_seed, name, round, client)``: the key string
``"{master_seed}:{name}:{round}:{client}"`` is hashed with SHA-256, the first
8 bytes (big-endian) seed splitmix64, and four successive splitmix64 outputs
form the xoshiro state.  ``round`` and ``client`` default to ``-1``.

Derived draws:

* uniform double: ``(next() >> 11) * 2**-53`` in ``[0, 1)``
* integer in ``[0, n)``: rejection of raw outputs below ``(2**64 - n) % n``,
  then ``% n``
* standard normal: Marsaglia polar method; each accepted pair yields two
  values, a trailing odd value is discarded
* gamma(a, 1): Marsaglia-Tsang, one polar pair per trial (second value
  unused); ``a < 1`` uses ``gamma(a + 1) * U**(1/a)``

Bulk kernels are compiled with numba; the scalar Python path is used nowhere,
so results do not depend on the call size except through draw order.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def stream_key(master_seed: int, name: str, round: int = -1, client: int = -1) -> int:
    text = f"{master_seed}:{name}:{round}:{client}".encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def _uniform(s):
    return np.float64(_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _below(s, n):
    n = np.uint64(n)
    limit = (np.uint64(0) - n) % n
    r = _next(s)
    while r < limit:
        r = _next(s)
    return r % n


@njit(cache=True)
def _polar_pair(s):
    while True:
        u = 2.0 * _uniform(s) - 1.0
        v = 2.0 * _uniform(s) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            f = np.sqrt(-2.0 * np.log(q) / q)
            return u * f, v * f


@njit(cache=True)
def _fill_raw(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = _uniform(s)


@njit(cache=True)
def _fill_below(s, n, out):
    for i in range(out.shape[0]):
        out[i] = np.int64(_below(s, n))


@njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        a, b = _polar_pair(s)
        out[i] = a
        if i + 1 < n:
            out[i + 1] = b
        i += 2


@njit(cache=True)
def _gamma(s, a):
    if a < 1.0:
        return _gamma(s, a + 1.0) * _uniform(s) ** (1.0 / a)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x, _ = _polar_pair(s)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(s)
        if u > 0.0 and np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
            return d * v


@njit(cache=True)
def _fill_gamma(s, a, out):
    for i in range(out.shape[0]):
        out[i] = _gamma(s, a)


@njit(cache=True)
def _partial_shuffle(s, arr, m):
    # first m slots become a uniform sample without replacement
    n = arr.shape[0]
    for i in range(m):
        j = i + np.int64(_below(s, n - i))
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


class Stream:
    """One independent xoshiro256** stream.

    Not thread-safe; every concurrent consumer gets its own stream via
    :func:`stream`.
    """

    def __init__(self, seed: int):
        x = int(seed) & _MASK64
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    def raw(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _fill_raw(self.state, out)
        return out

    def random(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        _fill_uniform(self.state, out)
        return out

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def integers(self, high: int, n: int) -> np.ndarray:
        if high < 1:
            raise ValueError("high must be >= 1")
        out = np.empty(n, dtype=np.int64)
        _fill_below(self.state, high, out)
        return out

    def normal(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        _fill_normal(self.state, out)
        return out

    def gamma(self, shape: float, n: int) -> np.ndarray:
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        out = np.empty(n, dtype=np.float64)
        _fill_gamma(self.state, float(shape), out)
        return out

    def dirichlet(self, alpha: float, k: int) -> np.ndarray:
        g = self.gamma(alpha, k)
        total = g.sum()
        if total == 0.0:
            # all draws underflowed (tiny alpha); mass goes to the largest index drawn uniformly
            out = np.zeros(k)
            out[self.integers(k, 1)[0]] = 1.0
            return out
        return g / total

    def permutation(self, n: int) -> np.ndarray:
        arr = np.arange(n, dtype=np.int64)
        _partial_shuffle(self.state, arr, n)
        return arr

    def choice(self, n: int, m: int) -> np.ndarray:
        """``m`` distinct values from ``range(n)``, in draw order."""
        if not 0 <= m <= n:
            raise ValueError(f"cannot draw {m} distinct values from {n}")
        arr = np.arange(n, dtype=np.int64)
        _partial_shuffle(self.state, arr, m)
        return arr[:m].copy()


def stream(master_seed: int, name: str, round: int = -1, client: int = -1) -> Stream:
    return Stream(stream_key(master_seed, name, round, client))
