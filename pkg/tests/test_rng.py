import math

import numpy as np
from scipy import stats

from binned_ssa.rng import RngStream, sample_exponential, split_seed


def test_sample_exponential_inverse_cdf():
    assert math.isclose(sample_exponential(2.0, math.exp(-2.0)), 1.0)
    assert sample_exponential(1.0, 1.0) == 0.0
    assert sample_exponential(0.0, 0.5) == math.inf
    assert sample_exponential(-1.0, 0.5) == math.inf


def test_exponential_mean():
    rng = RngStream(7)
    n = 200_000
    draws = np.array([rng.exponential(3.0) for _ in range(n)])
    # sd of Exp(3) is 1/3
    assert abs(draws.mean() - 1 / 3) < 3 * (1 / 3) / math.sqrt(n)
    assert stats.kstest(draws[:20_000], stats.expon(scale=1 / 3).cdf).pvalue > 0.001


def test_stream_is_deterministic():
    a = RngStream(99, block=16)
    b = RngStream(99, block=1024)
    assert [a.random() for _ in range(100)] == [b.random() for _ in range(100)]
    c, d = RngStream(100), RngStream(99)
    assert [d.random() for _ in range(3)] != [c.random() for _ in range(3)]


def test_uniform_ranges():
    rng = RngStream(3)
    for _ in range(10_000):
        assert 0.0 <= rng.random() < 1.0
        assert 0.0 < rng.uniform() <= 1.0
        assert 0 <= rng.integer(7) < 7


def test_integer_is_uniform():
    rng = RngStream(11)
    counts = np.bincount([rng.integer(5) for _ in range(50_000)], minlength=5)
    assert stats.chisquare(counts).pvalue > 0.001


def test_split_seed():
    seeds = [split_seed(1, k) for k in range(1000)]
    assert len(set(seeds)) == 1000
    assert split_seed(1, 5) == split_seed(1, 5)
    assert all(0 <= s < 2**64 for s in seeds)
    # SplitMix64 of 0
    assert split_seed(0, 0) == 0xE220A8397B1DCDAF
    # the realization index is folded in by xor before mixing
    assert split_seed(6, 3) == split_seed(5, 0) == split_seed(0, 5)
