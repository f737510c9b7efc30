"""Deterministic random streams.

The core generator is Philox-4x64 (counter-based, numpy's ``Philox`` bit
generator, whose raw bit stream is stable across numpy releases). Only raw
64-bit words are taken from numpy; every transform on top of them (uniform
doubles, Box-Muller normals, bounded integers, shuffles) is done here, so the
derived streams do not move when numpy changes its ``Generator`` methods.
"""

from __future__ import annotations

import hashlib

import numpy as np

_TWO_PI = 2.0 * np.pi
_MASK64 = (1 << 64) - 1


def derive_key(seed, *stream) -> int:
    """128-bit Philox key from a seed and any number of stream labels."""
    text = "|".join(["embkit", str(int(seed))] + [str(s) for s in stream])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:16], "little")


class CounterRNG:
    """Random stream keyed by ``(seed, *stream)``.

    Two instances built from the same arguments produce identical output;
    distinct stream labels give statistically independent streams.
    """

    def __init__(self, seed, *stream):
        if int(seed) < 0 or int(seed) > _MASK64:
            raise ValueError(f"seed must be a u64, got {seed}")
        self._bits = np.random.Philox(key=derive_key(seed, *stream))

    def raw(self, size) -> np.ndarray:
        return np.asarray(self._bits.random_raw(size), dtype=np.uint64)

    def uniform(self, size) -> np.ndarray:
        """Doubles in [0, 1) with 53 random bits each."""
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, size) -> np.ndarray:
        """Standard normals by Box-Muller, generated in (cos, sin) pairs."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = _TWO_PI * u[:, 1]
        z = np.empty((m, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.ravel()[:n].reshape(shape)

    def below(self, n) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = int(self.raw(1)[0])
            if r < limit:
                return r % n

    def permutation(self, n) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice_weighted(self, weights) -> int:
        """Index drawn with probability proportional to ``weights`` (non-negative)."""
        cdf = np.cumsum(weights, dtype=np.float64)
        total = cdf[-1]
        if not total > 0:
            return self.below(len(weights))
        r = self.uniform(1)[0] * total
        idx = int(np.searchsorted(cdf, r, side="right"))
        return min(idx, len(weights) - 1)


def orthonormal_columns(rng: CounterRNG, n_rows, n_cols) -> np.ndarray:
    """``n_rows x n_cols`` matrix with orthonormal columns, Haar-distributed.

    QR of a Gaussian matrix with the diagonal of R forced positive, which makes
    the factorisation unique and therefore the output a pure function of the stream.
    """
    G = rng.normal((n_rows, n_cols))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs
