import numpy as np
import pytest

from kinex.rng import MASK64, RngStream, derive_child_seed, seed_to_state


def reference_stream(seed, count):
    """Independent transcription of splitmix64-seeded xoshiro256** from the
    published constants, kept separate from the implementation on purpose."""
    def sm(x):
        x = (x + 0x9E3779B97F4A7C15) & MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return x, z ^ (z >> 31)

    s = []
    x = seed & MASK64
    for _ in range(4):
        x, out = sm(x)
        s.append(out)

    def rotl(v, k):
        return ((v << k) | (v >> (64 - k))) & MASK64

    outs = []
    for _ in range(count):
        outs.append((rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64)
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return outs


class TestRngStream:
    def test_matches_reference_generator(self):
        for seed in (0, 1, 42, 2**64 - 1):
            rng = RngStream(seed)
            got = [rng.next_u64() for _ in range(1000)]
            assert got == reference_stream(seed, 1000)

    def test_same_seed_same_sequence(self):
        a, b = RngStream(123), RngStream(123)
        assert [a.next_u64() for _ in range(100)] == \
               [b.next_u64() for _ in range(100)]

    def test_position_counts_draws(self):
        rng = RngStream(5)
        for _ in range(17):
            rng.random()
        assert rng.position == 17

    def test_state_roundtrip(self):
        rng = RngStream(9)
        for _ in range(50):
            rng.next_u64()
        words, pos = rng.state_words(), rng.position
        tail = [rng.next_u64() for _ in range(20)]
        rng2 = RngStream(9)
        rng2.set_state(words, pos)
        assert [rng2.next_u64() for _ in range(20)] == tail

    def test_random_in_unit_interval(self):
        rng = RngStream(7)
        draws = [rng.random() for _ in range(10000)]
        assert all(0.0 <= x < 1.0 for x in draws)
        assert abs(np.mean(draws) - 0.5) < 0.02

    def test_uniform_eps_never_zero(self):
        rng = RngStream(7)
        assert all(0.0 < rng.uniform_eps() < 1.0 for _ in range(10000))

    def test_below_bounds_and_mean(self):
        rng = RngStream(1)
        draws = [rng.below(10) for _ in range(20000)]
        assert min(draws) == 0 and max(draws) == 9
        assert abs(np.mean(draws) - 4.5) < 0.1
        with pytest.raises(ValueError):
            rng.below(0)

    def test_split_children_independent_and_stable(self):
        master = RngStream(77)
        c0, c1 = master.split(0), master.split(1)
        seq0 = [c0.next_u64() for _ in range(10)]
        seq1 = [c1.next_u64() for _ in range(10)]
        assert seq0 != seq1
        again = RngStream(77).split(0)
        assert [again.next_u64() for _ in range(10)] == seq0
        assert derive_child_seed(77, 0) != derive_child_seed(77, 1)

    def test_seed_state_never_all_zero(self):
        assert any(seed_to_state(0))
