"""Deterministic random streams for reproducible simulations.

xoshiro256** (Blackman & Vigna) seeded through splitmix64.  The generator,
its seeding, and the replica-split rule are frozen: identical seed and draw
position reproduce the identical sequence on every platform, which is part
of the output-file contract.  The compiled Monte Carlo kernel replicates
this exact sequence with uint64 arithmetic.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def seed_to_state(seed: int) -> tuple[int, int, int, int]:
    """Expand a 64-bit seed into the four xoshiro256** state words."""
    sm = seed & MASK64
    words = []
    for _ in range(4):
        sm, out = _splitmix64(sm)
        words.append(out)
    if not any(words):
        words[0] = 1
    return tuple(words)


def derive_child_seed(seed: int, index: int) -> int:
    """Replica seed derivation, fixed forever: one splitmix64 output of
    (mix(seed) + (index+1) * gamma)."""
    _, mixed = _splitmix64(seed & MASK64)
    base = (mixed + (index + 1) * _SPLITMIX_GAMMA) & MASK64
    _, child = _splitmix64(base)
    return child


class RngStream:
    """A seeded xoshiro256** stream with a draw counter."""

    __slots__ = ("seed", "position", "_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.position = 0
        self._s0, self._s1, self._s2, self._s3 = seed_to_state(self.seed)

    def state_words(self) -> tuple[int, int, int, int]:
        return self._s0, self._s1, self._s2, self._s3

    def set_state(self, words, position: int):
        self._s0, self._s1, self._s2, self._s3 = (int(w) & MASK64 for w in words)
        self.position = position

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        self.position += 1
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_eps(self) -> float:
        """Uniform double in (0, 1): exact zeros are rejected and redrawn."""
        x = self.random()
        while x == 0.0:
            x = self.random()
        return x

    def below(self, n: int) -> int:
        """Unbiased uniform integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        x = self.next_u64()
        while x >= limit:
            x = self.next_u64()
        return x % n

    def split(self, index: int) -> "RngStream":
        """Independent child stream for replica `index`."""
        return RngStream(derive_child_seed(self.seed, index))
