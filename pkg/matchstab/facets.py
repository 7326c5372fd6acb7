"""
    Facets: the decomposition of the state space by which classes are
    buffered.
"""

from __future__ import annotations

import logging
import sys
import typing
from typing import Any

if sys.version_info[1] >= 9:
    from collections.abc import Iterable, Sequence
else:
    from typing import Iterable, Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from . import config
from .certificates import InvariantCertificate, StateCertificate
from .errors import (
    InvalidStateError,
    MixedEmptinessError,
    NotAFacetError,
    TooLargeError,
    _certified_error,
)
from .model import MatchingStructure

_log = logging.getLogger(__name__)

FacetKey = typing.Tuple[int, int]
"""
    Bitmask pair ``(C•, S•)`` identifying a facet of a given structure.
"""


def _bits(mask: int) -> typing.Iterator[int]:
    k = 0
    while mask:
        if mask & 1:
            yield k
        mask >>= 1
        k += 1


class Facet:
    r"""
    A facet of a matching structure, determined by its sets of buffered
    classes ``C•`` and ``S•``. The forced-zero sets ``C◎ = C(S•)`` and
    ``S◎ = S(C•)`` and the free-zero sets ``C∘``, ``S∘`` (the remaining
    classes) are derived.

    Sets are stored as bitmasks over the canonical class orders; the label
    properties return them as tuples of labels.
    """

    _structure: MatchingStructure
    _c_bullet: int
    _s_bullet: int
    _c_forced: int
    _s_forced: int
    _c_free: int
    _s_free: int

    __slots__ = (
        "_structure",
        "_c_bullet",
        "_s_bullet",
        "_c_forced",
        "_s_forced",
        "_c_free",
        "_s_free",
    )

    def __new__(cls, structure: MatchingStructure, c_bullet: int, s_bullet: int) -> Self:
        assert bool(c_bullet) == bool(s_bullet), "Mixed emptiness."
        assert structure.server_mask(c_bullet) & s_bullet == 0, "Not a facet."
        instance = super().__new__(cls)
        instance._structure = structure
        instance._c_bullet = c_bullet
        instance._s_bullet = s_bullet
        all_c = (1 << structure.num_customers) - 1
        all_s = (1 << structure.num_servers) - 1
        instance._c_forced = structure.customer_mask(s_bullet)
        instance._s_forced = structure.server_mask(c_bullet)
        instance._c_free = all_c & ~c_bullet & ~instance._c_forced
        instance._s_free = all_s & ~s_bullet & ~instance._s_forced
        return instance

    @property
    def structure(self) -> MatchingStructure:
        """The structure this facet belongs to."""
        return self._structure

    @property
    def key(self) -> FacetKey:
        """The bitmask pair ``(C•, S•)``."""
        return (self._c_bullet, self._s_bullet)

    @property
    def masks(self) -> typing.Tuple[int, int, int, int, int, int]:
        """Bitmasks of ``(C•, S•, C◎, S◎, C∘, S∘)``."""
        return (
            self._c_bullet,
            self._s_bullet,
            self._c_forced,
            self._s_forced,
            self._c_free,
            self._s_free,
        )

    @property
    def bullet_customers(self) -> typing.Tuple[str, ...]:
        """``C•``: buffered customer classes."""
        return self._structure.customers_of(self._c_bullet)

    @property
    def bullet_servers(self) -> typing.Tuple[str, ...]:
        """``S•``: buffered server classes."""
        return self._structure.servers_of(self._s_bullet)

    @property
    def forced_zero_customers(self) -> typing.Tuple[str, ...]:
        """``C◎ = C(S•)``."""
        return self._structure.customers_of(self._c_forced)

    @property
    def forced_zero_servers(self) -> typing.Tuple[str, ...]:
        """``S◎ = S(C•)``."""
        return self._structure.servers_of(self._s_forced)

    @property
    def free_zero_customers(self) -> typing.Tuple[str, ...]:
        """``C∘ = C - C• - C◎``."""
        return self._structure.customers_of(self._c_free)

    @property
    def free_zero_servers(self) -> typing.Tuple[str, ...]:
        """``S∘ = S - S• - S◎``."""
        return self._structure.servers_of(self._s_free)

    @property
    def is_zero(self) -> bool:
        """Whether this is the zero facet (empty buffers)."""
        return self._c_bullet == 0

    def is_saturated(self) -> bool:
        """See :func:`is_saturated`."""
        return self._c_free == 0 or self._s_free == 0

    def label(self) -> str:
        """
        Short label ``({3},{3'})``; the zero facet is labelled ``({},{})``.
        """
        return (
            "({" + ",".join(self.bullet_customers) + "},{"
            + ",".join(self.bullet_servers) + "})"
        )

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Facet):
            return NotImplemented
        return self._structure == other._structure and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __lt__(self, other: Facet) -> bool:
        return self.key < other.key

    def __repr__(self) -> str:
        return f"Facet{self.label()}"


def classify_facet(
    structure: MatchingStructure, customers: Iterable[str], servers: Iterable[str]
) -> Facet:
    """
    The facet with buffered customer classes ``customers`` and buffered
    server classes ``servers``.

    Raises :class:`~matchstab.errors.NotAFacetError` if some pair of the two
    sets is a matching edge, and :class:`~matchstab.errors.MixedEmptinessError`
    if exactly one of the two sets is empty.
    """
    u = structure.customer_bits(customers)
    v = structure.server_bits(servers)
    return _classify_masks(structure, u, v)


def _classify_masks(structure: MatchingStructure, u: int, v: int) -> Facet:
    if bool(u) != bool(v):
        raise _certified_error(
            MixedEmptinessError,
            InvariantCertificate(
                (structure.customers_of(u), structure.servers_of(v)),
                "equal emptiness",
                "C• and S• must be both empty or both nonempty",
            ),
        )
    clash = structure.server_mask(u) & v
    if clash:
        j = next(_bits(clash))
        i = next(_bits(structure.customer_mask(1 << j) & u))
        c, s = structure.customers[i], structure.servers[j]
        raise _certified_error(
            NotAFacetError,
            InvariantCertificate((c, s), "C• x S• avoids E", f"({c},{s}) is a matching edge"),
        )
    return Facet(structure, u, v)


def is_saturated(facet: Facet) -> bool:
    """
    Whether the facet is saturated, i.e. ``C∘`` or ``S∘`` is empty.
    The zero facet is never saturated.
    """
    return facet.is_saturated()


def _check_size(structure: MatchingStructure) -> None:
    max_classes = config.limit("max_classes")
    if structure.num_customers > max_classes or structure.num_servers > max_classes:
        raise TooLargeError(
            f"Facet enumeration is limited to {max_classes} classes per side, "
            f"found {structure.num_customers} customers and {structure.num_servers} servers."
        )


def enumerate_facets(structure: MatchingStructure) -> typing.List[Facet]:
    """
    All facets of a structure, zero facet included, sorted by bitmask key.

    Starts from the singleton facets ``({i}, {j})`` for ``(i, j)`` not in
    ``E`` and repeatedly merges pairs of facets sharing ``C•`` or ``S•``
    until no new facet appears.

    Raises :class:`~matchstab.errors.TooLargeError` beyond the
    ``max_classes`` limit of :mod:`~matchstab.config`.
    """
    _check_size(structure)
    found: typing.Set[FacetKey] = set()
    by_customers: typing.Dict[int, typing.Set[int]] = {}
    by_servers: typing.Dict[int, typing.Set[int]] = {}
    queue: typing.List[FacetKey] = []

    def _add(u: int, v: int) -> None:
        if (u, v) in found:
            return
        found.add((u, v))
        by_customers.setdefault(u, set()).add(v)
        by_servers.setdefault(v, set()).add(u)
        queue.append((u, v))

    for i in range(structure.num_customers):
        for j in range(structure.num_servers):
            if j not in structure.server_neighbors_of(i):
                _add(1 << i, 1 << j)
    while queue:
        u, v = queue.pop()
        for v2 in list(by_customers[u]):
            _add(u, v | v2)
        for u2 in list(by_servers[v]):
            _add(u | u2, v)
    found.add((0, 0))
    _log.debug("Enumerated %d facets.", len(found))
    return [Facet(structure, u, v) for u, v in sorted(found)]


def enumerate_facets_bruteforce(structure: MatchingStructure) -> typing.List[Facet]:
    """
    All facets by direct enumeration of pairs of nonempty subsets avoiding
    ``E``, plus the zero facet. Exponential: an oracle for
    :func:`enumerate_facets`.
    """
    _check_size(structure)
    keys = [(0, 0)]
    all_s = (1 << structure.num_servers) - 1
    for u in range(1, 1 << structure.num_customers):
        allowed = all_s & ~structure.server_mask(u)
        v = allowed
        while v:
            keys.append((u, v))
            v = (v - 1) & allowed
    return [Facet(structure, u, v) for u, v in sorted(keys)]


def all_nonzero_facets_saturated(structure: MatchingStructure) -> bool:
    """
    Whether every nonzero facet is saturated. When this holds, the
    sufficient conditions reduce to the necessary ones for every measure,
    and every admissible policy has a maximal stability region.
    """
    return all(f.is_saturated() for f in enumerate_facets(structure) if not f.is_zero)


def _state_error(
    x: Sequence[int], y: Sequence[int], detail: str, **kwargs: Any
) -> InvalidStateError:
    return _certified_error(
        InvalidStateError, StateCertificate((tuple(x), tuple(y)), detail, **kwargs)
    )


def check_state(structure: MatchingStructure, x: Sequence[int], y: Sequence[int]) -> None:
    """
    Checks that ``(x, y)`` is a valid commutative buffer state: equal totals,
    nonnegative counts and ``x_c y_s = 0`` for every matching edge.

    Raises :class:`~matchstab.errors.InvalidStateError` otherwise.
    """
    if len(x) != structure.num_customers or len(y) != structure.num_servers:
        raise _state_error(x, y, "count vectors do not match the classes")
    if any(k < 0 for k in x) or any(k < 0 for k in y):
        raise _state_error(x, y, "negative count")
    if sum(x) != sum(y):
        raise _state_error(x, y, f"totals differ: {sum(x)} customers, {sum(y)} servers")
    for c, s in structure.matching_edges:
        i, j = structure.customer_index(c), structure.server_index(s)
        if x[i] > 0 and y[j] > 0:
            raise _state_error(
                x, y, f"matching edge ({c},{s}) has both ends buffered", pair=(c, s)
            )


def state_key(x: Sequence[int], y: Sequence[int]) -> FacetKey:
    """Bitmask pair of the supports of ``x`` and ``y``."""
    u = 0
    for i, k in enumerate(x):
        if k:
            u |= 1 << i
    v = 0
    for j, k in enumerate(y):
        if k:
            v |= 1 << j
    return (u, v)


def facet_of_state(structure: MatchingStructure, x: Sequence[int], y: Sequence[int]) -> Facet:
    """
    The facet containing the commutative state ``(x, y)``.

    Raises :class:`~matchstab.errors.InvalidStateError` on invalid states.
    """
    check_state(structure, x, y)
    u, v = state_key(x, y)
    return Facet(structure, u, v)
