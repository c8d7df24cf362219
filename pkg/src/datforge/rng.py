"""SplitMix64 streams, seed derivation and FNV-1a hashing.

Everything stochastic in the package draws from here so that every
result is a pure function of an integer seed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """SplitMix64 output finalizer applied to a single 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, *keys) -> int:
    """Derive an independent 64-bit stream seed from ``seed`` and a key path.

    Keys may be ints or strings; the result depends only on their values,
    never on call order elsewhere in the program.
    """
    h = mix64(seed & MASK64)
    for key in keys:
        if isinstance(key, int):
            h = mix64(h ^ mix64((key & MASK64) ^ 0x5851F42D4C957F2D))
        else:
            h = mix64(h ^ fnv1a64(str(key).encode("utf-8")))
    return h


class SplitMix64:
    """Counter-based SplitMix64 generator.

    State advances by the golden-ratio increment; output ``i`` is
    ``mix64(seed + (i + 1) * GOLDEN)``, which lets blocks be produced with
    vectorised numpy arithmetic while matching the scalar sequence exactly.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.next_float() * n)

    def u64_block(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_block(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1), identical to ``n`` calls of next_float."""
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal_block(self, n: int, std: float = 1.0) -> np.ndarray:
        """Box-Muller normals; consumes 2 * ceil(n / 2) uniforms."""
        m = (n + 1) // 2
        u = self.uniform_block(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n] * std

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
