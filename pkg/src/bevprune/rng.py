"""Counter-based deterministic random streams (SplitMix64).

Draw number n of a stream with seed s is ``mix64(s + (n + 1) * GOLDEN)``
where ``mix64`` is the SplitMix64 finalizer.  Because every draw is a pure
function of (seed, counter) the streams vectorize cleanly, interleaving
independent streams cannot perturb each other, and the whole sequence can
be reproduced in any language from the seed alone.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a python int, mod 2^64."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _fnv1a(label: str) -> int:
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def hash_coords(seed: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Deterministic per-integer-coordinate uniforms in [0, 1)."""
    ix = np.asarray(ix, dtype=np.int64).astype(np.uint64)
    iy = np.asarray(iy, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK) + ix * np.uint64(GOLDEN) + iy * np.uint64(0xD1B54A32D192ED03)
    bits = _mix64_array(z)
    return (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53


class Stream:
    """One deterministic random stream."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._n = 0

    def derive(self, label: str) -> "Stream":
        """Independent child stream named by ``label``."""
        return Stream(mix64(self.seed ^ _fnv1a(label)))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._n + 1, self._n + n + 1, dtype=np.uint64)
        self._n += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GOLDEN)
        return _mix64_array(z)

    def uniform(self, n: int | None = None) -> np.ndarray | float:
        bits = self._raw(1 if n is None else n)
        u = (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return float(u[0]) if n is None else u

    def uniform_in(self, lo: float, hi: float, n: int | None = None):
        return lo + (hi - lo) * self.uniform(n)

    def normal(self, n: int, clip: float | None = None) -> np.ndarray:
        """Box-Muller normals; optionally clipped to +-clip."""
        u1 = np.maximum(self.uniform(n), _INV_2_53)
        u2 = self.uniform(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        if clip is not None:
            z = np.clip(z, -clip, clip)
        return z

    def randint(self, lo: int, hi: int, n: int | None = None):
        """Integers in [lo, hi)."""
        span = hi - lo
        bits = self._raw(1 if n is None else n)
        vals = lo + (bits % np.uint64(span)).astype(np.int64)
        return int(vals[0]) if n is None else vals

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        draws = self._raw(n)
        for i in range(n - 1, 0, -1):
            j = int(draws[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
