"""
    Seeded random streams for simulations.

    Every stream is a numpy ``PCG64DXSM`` bit generator seeded by
    ``SeedSequence(base_seed, spawn_key=(cell, replication))``, so that sweep
    cells and replications get independent, reproducible streams. Draws are
    exact: integers below ``k`` are unbiased (rejection sampling on raw
    64-bit words) and rational distributions are sampled by inverse CDF
    over integer numerators.
"""

from __future__ import annotations

from bisect import bisect_right
from fractions import Fraction
import math
import sys
import typing

if sys.version_info[1] >= 9:
    from collections.abc import Sequence
else:
    from typing import Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np

_WORD_BITS = 64


class RandomStream:
    """
    A stream of random draws, reproducible from ``(seed, cell, replication)``.
    """

    _seed: int
    _cell: int
    _replication: int
    _bit_generator: np.random.PCG64DXSM
    _batch: int
    _buffer: typing.List[int]
    _pos: int

    __slots__ = (
        "_seed",
        "_cell",
        "_replication",
        "_bit_generator",
        "_batch",
        "_buffer",
        "_pos",
    )

    def __new__(
        cls, seed: int = 0, *, cell: int = 0, replication: int = 0, batch: int = 4096
    ) -> Self:
        if seed < 0 or cell < 0 or replication < 0:
            raise ValueError("Seeds and stream indices must be nonnegative.")
        if batch < 1:
            raise ValueError("Batch size must be positive.")
        instance = super().__new__(cls)
        instance._seed = seed
        instance._cell = cell
        instance._replication = replication
        sequence = np.random.SeedSequence(seed, spawn_key=(cell, replication))
        instance._bit_generator = np.random.PCG64DXSM(sequence)
        instance._batch = batch
        instance._buffer = []
        instance._pos = 0
        return instance

    @property
    def seed(self) -> int:
        """Base seed of the stream."""
        return self._seed

    @property
    def cell(self) -> int:
        """Sweep cell index of the stream."""
        return self._cell

    @property
    def replication(self) -> int:
        """Replication index of the stream."""
        return self._replication

    def next_word(self) -> int:
        """Next raw 64-bit word, as a Python integer."""
        if self._pos >= len(self._buffer):
            self._buffer = self._bit_generator.random_raw(self._batch).tolist()
            self._pos = 0
        word: int = self._buffer[self._pos]
        self._pos += 1
        return word

    def below(self, k: int) -> int:
        """
        Uniform integer in ``range(k)``, without modulo bias.
        """
        if k <= 0:
            raise ValueError(f"Cannot draw below {k}.")
        if k == 1:
            return 0
        n_words = (k.bit_length() + _WORD_BITS - 1) // _WORD_BITS
        span = 1 << (_WORD_BITS * n_words)
        limit = span - span % k
        while True:
            r = 0
            for _ in range(n_words):
                r = (r << _WORD_BITS) | self.next_word()
            if r < limit:
                return r % k

    def random(self) -> float:
        """Uniform float in ``[0, 1)`` with 53 random bits."""
        return (self.next_word() >> 11) * (1.0 / (1 << 53))

    def spawn(self, replication: int) -> RandomStream:
        """An independent stream for another replication of the same cell."""
        return RandomStream(self._seed, cell=self._cell, replication=replication)


class DiscreteSampler:
    """
    Exact sampler for a finite distribution with rational probabilities:
    probabilities are put over a common denominator ``Q`` and an outcome is
    chosen by bisecting the cumulative numerators with a uniform draw
    below ``Q``.
    """

    _denominator: int
    _cumulative: typing.List[int]

    __slots__ = ("_denominator", "_cumulative")

    def __new__(cls, probabilities: Sequence[Fraction]) -> Self:
        if not probabilities:
            raise ValueError("Empty distribution.")
        if any(p < 0 for p in probabilities) or sum(probabilities) != 1:
            raise ValueError("Probabilities must be nonnegative and sum to 1.")
        denominator = 1
        for p in probabilities:
            denominator = denominator * p.denominator // math.gcd(denominator, p.denominator)
        cumulative: typing.List[int] = []
        acc = 0
        for p in probabilities:
            acc += p.numerator * (denominator // p.denominator)
            cumulative.append(acc)
        assert acc == denominator
        instance = super().__new__(cls)
        instance._denominator = denominator
        instance._cumulative = cumulative
        return instance

    @property
    def denominator(self) -> int:
        """The common denominator ``Q``."""
        return self._denominator

    def sample(self, stream: RandomStream) -> int:
        """Index of the sampled outcome."""
        return bisect_right(self._cumulative, stream.below(self._denominator))


def weighted_index(stream: RandomStream, weights: Sequence[int]) -> int:
    """Index drawn with probability proportional to nonnegative integer weights."""
    total = sum(weights)
    r = stream.below(total)
    for k, w in enumerate(weights):
        if r < w:
            return k
        r -= w
    raise AssertionError("Weights changed during sampling.")
