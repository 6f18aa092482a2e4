import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def sample_exponential(rate: float, u: float) -> float:
    """
    Inverse-transform exponential variate.

    :param rate: Positive rate in 1/s
    :param u: Uniform variate in (0, 1]
    :return: Waiting time ``-ln(u)/rate`` in seconds, or ``inf`` when ``rate <= 0`` (the event never happens)
    """
    if rate <= 0.0:
        return math.inf
    return -math.log(u) / rate


def split_seed(seed: int, k: int) -> int:
    """
    Seed of realization ``k`` of an ensemble rooted at ``seed``.

    The rule is one SplitMix64 output step applied to ``(seed XOR k) mod 2**64``::

        z = (x + 0x9E3779B97F4A7C15) mod 2**64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
        return z ^ (z >> 31)

    :param seed: Ensemble seed
    :param k: Realization index
    :return: 64-bit seed
    """
    z = ((seed ^ k) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """
    Deterministic uniform stream backed by numpy's PCG64. Draws are generated in blocks and served one at a time;
    the same seed always produces the same sequence.

    :param seed: 64-bit seed. Negative values are reduced modulo 2**64
    :param block: Number of variates generated per refill
    """

    def __init__(self, seed: int, block: int = 4096):
        self.seed = seed & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self._block = block
        self._buf = []
        self._pos = 0

    def _refill(self):
        self._buf = self._gen.random(self._block).tolist()
        self._pos = 0

    def random(self) -> float:
        """Uniform variate in [0, 1)"""
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniform(self) -> float:
        """Uniform variate in (0, 1], safe to pass to ``log``"""
        return 1.0 - self.random()

    def exponential(self, rate: float) -> float:
        """Exponential waiting time with the given rate, ``inf`` for a zero rate"""
        if rate <= 0.0:
            return math.inf
        return -math.log(self.uniform()) / rate

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)"""
        i = int(self.random() * n)
        return i if i < n else n - 1
