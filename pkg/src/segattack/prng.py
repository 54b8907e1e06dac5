"""Counter-based pseudorandom numbers (splitmix64).

All randomness in this package (dataset generation, weight init, training
shuffles, PGD start points, subset masks) comes from this generator rather
than platform RNGs, so that every artifact is reproducible bit-for-bit from
a 64-bit seed and could be regenerated by any other language.

The generator is the standard splitmix64: output ``i`` (1-based) of the
stream seeded with ``s`` is ``mix64(s + i * GOLDEN)`` with all arithmetic
modulo 2**64.  Because outputs depend only on ``(seed, counter)``, blocks can
be produced out of order or in bulk (see :meth:`SplitMix64.fill_u64`).

Derived streams: ``substream(seed, *tags)`` folds each tag into the seed as
``seed = mix64(seed ^ mix64(tag + GOLDEN))``.  Distinct tag tuples give
statistically independent streams.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix of a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed, one mix per tag."""
    s = seed & _MASK64
    for t in tags:
        s = mix64(s ^ mix64((t + GOLDEN) & _MASK64))
    return s


def _mix64_array(state: np.ndarray) -> np.ndarray:
    # vectorized mix64 on a uint64 array; numpy uint64 arithmetic wraps mod 2**64
    z = state.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class SplitMix64:
    """Sequential view of the counter-based stream for one seed.

    ``next_u64`` advances a counter and returns ``mix64(seed + counter*GOLDEN)``;
    the ``fill_*`` methods produce the same values in bulk via numpy.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._count = 0

    @property
    def seed(self) -> int:
        return self._seed

    def substream(self, *tags: int) -> "SplitMix64":
        """Independent stream derived from this stream's seed and tags."""
        return SplitMix64(derive_seed(self._seed, *tags))

    def next_u64(self) -> int:
        self._count += 1
        return mix64((self._seed + self._count * GOLDEN) & _MASK64)

    def next_float(self) -> float:
        """Uniform double in [0, 1), 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by 64-bit modulo (bias < n/2**64)."""
        if n <= 0:
            raise ValueError(f"next_below requires n >= 1, got {n}")
        return self.next_u64() % n

    def next_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_below(hi - lo + 1)

    def fill_u64(self, n: int) -> np.ndarray:
        """The next n raw outputs as a uint64 array (same values as n calls
        to next_u64)."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        state = np.uint64(self._seed) + idx * np.uint64(GOLDEN)
        return _mix64_array(state)

    def fill_uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform float64 array in [lo, hi) with the given shape."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        u = (self.fill_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def fill_normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian array via Box-Muller on consecutive uniform pairs.

        u1 is mapped into (0, 1] as (raw53 + 1) * 2**-53 so the log is finite.
        Odd element counts draw one extra pair member and discard it.
        """
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        pairs = (n + 1) // 2
        raw = self.fill_u64(2 * pairs) >> np.uint64(11)
        u1 = (raw[:pairs].astype(np.float64) + 1.0) * 2.0**-53
        u2 = raw[pairs:].astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (mean + std * z).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): argsort of n random keys.

        Stable sort on 64-bit keys; a key collision (probability ~ n^2/2**64)
        falls back to index order, still deterministic.
        """
        keys = self.fill_u64(n)
        return np.argsort(keys, kind="stable")
