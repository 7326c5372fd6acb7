"""
    Monte-Carlo simulation of the buffer chain under a matching policy.
"""

from __future__ import annotations

import logging
import sys
import typing
from typing import Any, Optional

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from . import config
from .errors import BufferOverflowError, MatchstabError, ZeroFacetError
from .chains import is_nn_structure, ms_counterexample_statistic
from .facets import Facet, FacetKey, state_key
from .model import ArrivalMeasure, MatchingStructure
from .policies import CommutativeState, PolicySpec, Runner
from .rng import DiscreteSampler, RandomStream

_log = logging.getLogger(__name__)

TraceRow = typing.Tuple[int, int, FacetKey]
"""
    Row ``(step, buffer, facet_key)`` of a simulation trace.
"""


class ArrivalSampler:
    """
    Exact sampler of arrival pairs, as class indices, by inverse CDF over
    the support of the measure in canonical order.
    """

    _pairs: typing.Tuple[typing.Tuple[int, int], ...]
    _sampler: DiscreteSampler

    __slots__ = ("_pairs", "_sampler")

    def __new__(cls, measure: ArrivalMeasure) -> Self:
        structure = measure.structure
        instance = super().__new__(cls)
        instance._pairs = tuple(
            (structure.customer_index(c), structure.server_index(s)) for c, s in measure.table
        )
        instance._sampler = DiscreteSampler(list(measure.table.values()))
        return instance

    @property
    def pairs(self) -> typing.Tuple[typing.Tuple[int, int], ...]:
        """Index pairs in sampling order."""
        return self._pairs

    def sample(self, stream: RandomStream) -> typing.Tuple[int, int]:
        """Next arrival ``(customer index, server index)``."""
        return self._pairs[self._sampler.sample(stream)]


class SimulationReport:
    """
    Summary of a simulation run. Time averages are taken over the states
    after each of the ``horizon`` steps. ``empty_visits`` counts returns to
    the empty state: steps from a nonempty buffer to the empty one.
    """

    # pylint: disable = too-many-instance-attributes

    horizon: int
    seed: int
    policy: str
    avg_buffer: float
    max_buffer: int
    final_buffer: int
    empty_visits: int
    facet_occupancy: typing.Dict[str, float]
    ms_statistic_final: Optional[int]
    trace: Optional[typing.List[TraceRow]]

    __slots__ = (
        "horizon",
        "seed",
        "policy",
        "avg_buffer",
        "max_buffer",
        "final_buffer",
        "empty_visits",
        "facet_occupancy",
        "ms_statistic_final",
        "trace",
    )

    def __new__(cls, **fields: Any) -> Self:
        instance = super().__new__(cls)
        for name in cls.__slots__:
            setattr(instance, name, fields[name])
        return instance

    def summary(self) -> str:
        """One-line summary."""
        line = (
            f"policy={self.policy} seed={self.seed} horizon={self.horizon} "
            f"avg_buffer={self.avg_buffer:.6g} max_buffer={self.max_buffer} "
            f"final_buffer={self.final_buffer} empty_visits={self.empty_visits}"
        )
        if self.ms_statistic_final is not None:
            line += f" ms_statistic={self.ms_statistic_final}"
        return line

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, SimulationReport):
            return NotImplemented
        return all(getattr(self, n) == getattr(other, n) for n in self.__slots__)

    def __repr__(self) -> str:
        return f"SimulationReport({self.summary()})"


def _facet_label(structure: MatchingStructure, key: FacetKey) -> str:
    u, v = key
    return (
        "({" + ",".join(structure.customers_of(u)) + "},{"
        + ",".join(structure.servers_of(v)) + "})"
    )


def simulate(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    policy: PolicySpec,
    horizon: int,
    seed: int,
    *,
    replication: int = 0,
    cell: int = 0,
    trace: bool = False,
    initial: Optional[CommutativeState] = None,
) -> SimulationReport:
    """
    Runs the buffer chain for ``horizon`` steps from the empty state (or
    ``initial``), arrivals drawn i.i.d. from ``measure`` with the stream of
    ``(seed, cell, replication)``. Identical arguments give identical
    reports.

    Raises :class:`~matchstab.errors.BufferOverflowError` if the buffer size
    exceeds the ``max_word_length`` limit.
    """
    # pylint: disable = too-many-arguments, too-many-locals
    if horizon < 1:
        raise MatchstabError(f"Horizon must be at least 1, found {horizon}.")
    stream = RandomStream(seed, cell=cell, replication=replication)
    sampler = ArrivalSampler(measure)
    runner = Runner(structure, policy, initial, stream)
    x, y = runner.x, runner.y
    max_length = config.limit("max_word_length")
    total = sum(x)
    acc = 0
    max_buffer = total
    empty_visits = 0
    occupancy: typing.Dict[FacetKey, int] = {}
    rows: Optional[typing.List[TraceRow]] = [] if trace else None
    step = runner.step
    sample = sampler.sample
    for n in range(1, horizon + 1):
        i, j = sample(stream)
        before = total
        total += step(i, j)
        if total > max_length:
            raise BufferOverflowError(f"Buffer size exceeded {max_length} at step {n}.")
        acc += total
        if total > max_buffer:
            max_buffer = total
        if total == 0:
            if before > 0:
                empty_visits += 1
            key: FacetKey = (0, 0)
        else:
            key = state_key(x, y)
        occupancy[key] = occupancy.get(key, 0) + 1
        if rows is not None:
            rows.append((n, total, key))
    report = SimulationReport(
        horizon=horizon,
        seed=seed,
        policy=policy.kind,
        avg_buffer=acc / horizon,
        max_buffer=max_buffer,
        final_buffer=total,
        empty_visits=empty_visits,
        facet_occupancy={
            _facet_label(structure, k): c / horizon for k, c in sorted(occupancy.items())
        },
        ms_statistic_final=(
            ms_counterexample_statistic(runner.counts()) if is_nn_structure(structure) else None
        ),
        trace=rows,
    )
    _log.info("Simulation finished: %s", report.summary())
    return report


def deep_state(facet: Facet, depth: int = 2) -> CommutativeState:
    """
    A state of the facet with every bullet coordinate at least ``depth``:
    each class in ``C•`` holds ``depth |S•|`` customers and each class in
    ``S•`` holds ``depth |C•|`` servers.
    """
    structure = facet.structure
    u, v = facet.key
    n_u = bin(u).count("1")
    n_v = bin(v).count("1")
    x = [depth * n_v if u >> i & 1 else 0 for i in range(structure.num_customers)]
    y = [depth * n_u if v >> j & 1 else 0 for j in range(structure.num_servers)]
    return CommutativeState(x, y)


def estimate_facet_drift(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    policy: PolicySpec,
    facet: Facet,
    samples: int,
    seed: int,
) -> float:
    """
    Monte-Carlo mean of the one-step change of buffer size from
    :func:`deep_state` of a nonzero facet. Each change is -1, 0 or +1, so
    the standard error is at most ``1/sqrt(samples)``.

    Raises :class:`~matchstab.errors.ZeroFacetError` on the zero facet.
    """
    # pylint: disable = too-many-arguments
    if facet.is_zero:
        raise ZeroFacetError("Drift estimation needs a nonzero facet.")
    if samples < 1:
        raise MatchstabError("At least one sample is needed.")
    start = deep_state(facet)
    stream = RandomStream(seed)
    sampler = ArrivalSampler(measure)
    s1 = 0
    for _ in range(samples):
        runner = Runner(structure, policy, start, stream)
        d = runner.step(*sampler.sample(stream))
        s1 += d
    return s1 / samples
