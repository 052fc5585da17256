"""SplitMix64 pseudo random generator.

The stream is fully specified (state += golden gamma, then the standard
finalizer), so seeded configurations reproduce across implementations.
Draws are vectorised: the k-th output only depends on ``seed + k * gamma``.
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic 64-bit generator.

    >>> SplitMix64(0).next_u64()
    16294208416658607535
    """

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self):
        return int(self.u64(1)[0])

    def u64(self, n):
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + k * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def random(self, shape):
        """Uniform doubles in [0, 1) built from the top 53 bits."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def uniform(self, low, high, shape):
        return low + (high - low) * self.random(shape)

    def integers(self, low, high, size=None):
        """Integers in [low, high); modulo bias is negligible for small ranges."""
        if size is None:
            return int(self.u64(1)[0] % np.uint64(high - low)) + low
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.u64(n) % np.uint64(high - low)).astype(np.int64) + low).reshape(shape)

    def normal(self, shape):
        """Standard normals via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.random(2 * ((n + 1) // 2)).reshape(2, -1)
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        z = np.concatenate([r * np.cos(2 * np.pi * u[1]), r * np.sin(2 * np.pi * u[1])])
        return z[:n].reshape(shape)

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def permutation(self, n):
        """Fisher-Yates shuffle of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
