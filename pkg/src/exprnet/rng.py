"""Seedable xoshiro256** generator with order-independent substreams.

Bulk draws go through small numba kernels so that per-pixel noise for
augmentation stays cheap while the stream remains bit-exact everywhere.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """Return (next_state, output) of one splitmix64 step."""
    x = (x + GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def substream_seed(seed: int, index: int) -> int:
    return (seed ^ ((GOLDEN * (index + 1)) & MASK64)) & MASK64


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.size):
        out[i] = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
        t = s[1] << np.uint64(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)


@njit(cache=True)
def _fill_unit(s, out):
    scale = 1.0 / 9007199254740992.0
    for i in range(out.size):
        r = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
        t = s[1] << np.uint64(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        out[i] = (r >> np.uint64(11)) * scale


class Rng:
    """xoshiro256** stream; the 256-bit state is expanded from a 64-bit seed
    by splitmix64.

    ``child(i)`` gives a generator whose stream depends only on ``(seed, i)``,
    never on how much the parent or its siblings have consumed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, z = splitmix64(x)
            words.append(z)
        self._s = np.array(words, dtype=np.uint64)

    def child(self, index: int) -> "Rng":
        return Rng(substream_seed(self.seed, index))

    def getstate(self) -> list[int]:
        return [int(v) for v in self._s]

    def setstate(self, state) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256** state has four 64-bit words")
        self._s = np.array([int(v) & MASK64 for v in state], dtype=np.uint64)

    def next_u64(self) -> int:
        out = np.empty(1, dtype=np.uint64)
        _fill_u64(self._s, out)
        return int(out[0])

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        _fill_u64(self._s, out)
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1) built from the top 53 bits."""
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        _fill_unit(self._s, out)
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high); scaled from doubles, bias below 2**-40."""
        u = self.random(size)
        span = high - low
        if size is None:
            return low + min(int(u * span), span - 1)
        return low + np.minimum((u * span).astype(np.int64), span - 1)

    def normal(self, size=None):
        """Standard normal draws by Box-Muller on paired uniforms."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u = self.random(2 * m).reshape(2, m)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def choice(self, options):
        return options[self.integers(0, len(options))]


def substream(seed: int, index: int) -> Rng:
    return Rng(substream_seed(seed, index))
