"""
    Matching structures, arrival measures and the exact rational arithmetic
    they are built on.
"""

from __future__ import annotations

from fractions import Fraction
import itertools
import sys
import typing
from typing import Any, Optional, Union

if sys.version_info[1] >= 9:
    from collections.abc import Iterable, Mapping, Sequence
else:
    from typing import Iterable, Mapping, Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from typing import Literal

from .certificates import InvariantCertificate
from .errors import (
    DanglingEdgeError,
    DisconnectedMatchingGraphError,
    IsolatedArrivalVertexError,
    MatchstabError,
    NotADistributionError,
    UnknownClassError,
    _certified_error,
)

Rational = Fraction
"""
    Exact rational numbers, used for every probability and capacity.
"""

Pair = typing.Tuple[str, str]
"""
    A (customer class, server class) pair.
"""

Side = Literal["customer", "server"]

RationalLike = Union[Fraction, int, str]


def parse_rational(text: RationalLike) -> Fraction:
    """
    Parses a rational from a ``"p/q"`` or ``"p"`` string (an :obj:`int` or
    :class:`~fractions.Fraction` is returned as a fraction unchanged).

    >>> parse_rational("34/75")
    Fraction(34, 75)

    Floats are rejected, since they cannot be represented exactly.
    """
    if isinstance(text, bool) or isinstance(text, float):
        raise MatchstabError(f"Expected a rational string, found {text!r}.")
    if isinstance(text, (Fraction, int)):
        return Fraction(text)
    if not isinstance(text, str):
        raise MatchstabError(f"Expected a rational string, found {text!r}.")
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise MatchstabError(f"Invalid rational {text!r}.") from None


def format_rational(r: Fraction) -> str:
    """
    Formats a rational as ``"p/q"``, or as ``"p"`` when it is an integer.
    Inverse of :func:`parse_rational`.
    """
    if r.denominator == 1:
        return str(r.numerator)
    return f"{r.numerator}/{r.denominator}"


def _structure_error(
    cls: typing.Type[MatchstabError], subject: Any, invariant: str, detail: str
) -> MatchstabError:
    return _certified_error(cls, InvariantCertificate(subject, invariant, detail))


class MatchingStructure:
    r"""
    A bipartite matching structure ``(C, S, E, F)``: customer classes,
    server classes, matching edges and arrival edges.

    The order in which classes are given is their canonical order, used for
    all deterministic tie-breaking. Edges are stored in canonical order
    (by customer, then by server).

    Instances are validated on construction (see :func:`validate_structure`)
    and immutable afterwards.
    """

    _customers: typing.Tuple[str, ...]
    _servers: typing.Tuple[str, ...]
    _matching_edges: typing.Tuple[Pair, ...]
    _arrival_edges: typing.Tuple[Pair, ...]
    _customer_index: typing.Dict[str, int]
    _server_index: typing.Dict[str, int]
    _server_nbrs: typing.Tuple[typing.Tuple[int, ...], ...]
    _customer_nbrs: typing.Tuple[typing.Tuple[int, ...], ...]
    _server_masks: typing.Tuple[int, ...]
    _customer_masks: typing.Tuple[int, ...]
    _hash: int

    __slots__ = (
        "_customers",
        "_servers",
        "_matching_edges",
        "_arrival_edges",
        "_customer_index",
        "_server_index",
        "_server_nbrs",
        "_customer_nbrs",
        "_server_masks",
        "_customer_masks",
        "_hash",
    )

    def __new__(
        cls,
        customers: Sequence[str],
        servers: Sequence[str],
        matching_edges: Iterable[Sequence[str]],
        arrival_edges: Optional[Iterable[Sequence[str]]] = None,
    ) -> Self:
        customers = tuple(customers)
        servers = tuple(servers)
        if not customers or not servers:
            raise _structure_error(
                MatchstabError,
                (customers, servers),
                "nonempty sides",
                "both C and S must contain at least one class",
            )
        for side, labels in (("customer", customers), ("server", servers)):
            if len(set(labels)) != len(labels):
                raise _structure_error(
                    MatchstabError, labels, "distinct labels", f"repeated {side} label"
                )
            for label in labels:
                if not isinstance(label, str):
                    raise _structure_error(
                        MatchstabError,
                        label,
                        "string labels",
                        f"{side} label {label!r} is not a string",
                    )
        customer_index = {c: i for i, c in enumerate(customers)}
        server_index = {s: j for j, s in enumerate(servers)}

        def _edges(raw: Iterable[Sequence[str]], name: str) -> typing.Tuple[Pair, ...]:
            pairs: typing.Set[typing.Tuple[int, int]] = set()
            for edge in raw:
                if len(edge) != 2:
                    raise _structure_error(
                        DanglingEdgeError, edge, name, f"{edge!r} is not a pair"
                    )
                c, s = edge
                if c not in customer_index or s not in server_index:
                    raise _structure_error(
                        DanglingEdgeError,
                        tuple(edge),
                        name,
                        f"edge ({c}, {s}) references an unknown class",
                    )
                pairs.add((customer_index[c], server_index[s]))
            return tuple((customers[i], servers[j]) for i, j in sorted(pairs))

        e = _edges(matching_edges, "matching edges")
        if arrival_edges is None:
            f = tuple(itertools.product(customers, servers))
        else:
            f = _edges(arrival_edges, "arrival edges")
        instance = super().__new__(cls)
        instance._customers = customers
        instance._servers = servers
        instance._matching_edges = e
        instance._arrival_edges = f
        instance._customer_index = customer_index
        instance._server_index = server_index
        server_nbrs: typing.List[typing.List[int]] = [[] for _ in customers]
        customer_nbrs: typing.List[typing.List[int]] = [[] for _ in servers]
        for c, s in e:
            i, j = customer_index[c], server_index[s]
            server_nbrs[i].append(j)
            customer_nbrs[j].append(i)
        instance._server_nbrs = tuple(tuple(sorted(n)) for n in server_nbrs)
        instance._customer_nbrs = tuple(tuple(sorted(n)) for n in customer_nbrs)
        instance._server_masks = tuple(
            sum(1 << j for j in n) for n in instance._server_nbrs
        )
        instance._customer_masks = tuple(
            sum(1 << i for i in n) for n in instance._customer_nbrs
        )
        instance._hash = hash((customers, servers, e, f))
        instance._check_connected()
        instance._check_arrival_cover()
        return instance

    def _check_connected(self) -> None:
        n_c = len(self._customers)
        seen_c = {0}
        seen_s: typing.Set[int] = set()
        frontier: typing.List[typing.Tuple[str, int]] = [("customer", 0)]
        while frontier:
            side, k = frontier.pop()
            if side == "customer":
                for j in self._server_nbrs[k]:
                    if j not in seen_s:
                        seen_s.add(j)
                        frontier.append(("server", j))
            else:
                for i in self._customer_nbrs[k]:
                    if i not in seen_c:
                        seen_c.add(i)
                        frontier.append(("customer", i))
        if len(seen_c) < n_c or len(seen_s) < len(self._servers):
            missing = [c for i, c in enumerate(self._customers) if i not in seen_c]
            missing += [s for j, s in enumerate(self._servers) if j not in seen_s]
            raise _structure_error(
                DisconnectedMatchingGraphError,
                tuple(missing),
                "connected matching graph",
                f"classes {{{','.join(missing)}}} cannot be reached from "
                f"{self._customers[0]} through matching edges",
            )

    def _check_arrival_cover(self) -> None:
        covered = {c for c, _ in self._arrival_edges} | {
            s for _, s in self._arrival_edges
        }
        isolated = [
            label for label in self._customers + self._servers if label not in covered
        ]
        if isolated:
            raise _structure_error(
                IsolatedArrivalVertexError,
                tuple(isolated),
                "no isolated arrival vertex",
                f"classes {{{','.join(isolated)}}} have no arrival edge",
            )

    @property
    def customers(self) -> typing.Tuple[str, ...]:
        """Customer classes ``C``, in canonical order."""
        return self._customers

    @property
    def servers(self) -> typing.Tuple[str, ...]:
        """Server classes ``S``, in canonical order."""
        return self._servers

    @property
    def matching_edges(self) -> typing.Tuple[Pair, ...]:
        """Matching edges ``E``, in canonical order."""
        return self._matching_edges

    @property
    def arrival_edges(self) -> typing.Tuple[Pair, ...]:
        """Arrival edges ``F``, in canonical order."""
        return self._arrival_edges

    @property
    def num_customers(self) -> int:
        """Number of customer classes."""
        return len(self._customers)

    @property
    def num_servers(self) -> int:
        """Number of server classes."""
        return len(self._servers)

    def customer_index(self, c: str) -> int:
        """Position of customer class ``c`` in canonical order."""
        try:
            return self._customer_index[c]
        except KeyError:
            raise UnknownClassError(f"Unknown customer class {c!r}.") from None

    def server_index(self, s: str) -> int:
        """Position of server class ``s`` in canonical order."""
        try:
            return self._server_index[s]
        except KeyError:
            raise UnknownClassError(f"Unknown server class {s!r}.") from None

    def server_neighbors_of(self, i: int) -> typing.Tuple[int, ...]:
        """Indices of the servers matchable with the customer of index ``i``."""
        return self._server_nbrs[i]

    def customer_neighbors_of(self, j: int) -> typing.Tuple[int, ...]:
        """Indices of the customers matchable with the server of index ``j``."""
        return self._customer_nbrs[j]

    def server_mask(self, customer_mask: int) -> int:
        """Bitmask of ``S(U)`` for the customer bitmask ``U``."""
        mask = 0
        i = 0
        while customer_mask:
            if customer_mask & 1:
                mask |= self._server_masks[i]
            customer_mask >>= 1
            i += 1
        return mask

    def customer_mask(self, server_mask: int) -> int:
        """Bitmask of ``C(V)`` for the server bitmask ``V``."""
        mask = 0
        j = 0
        while server_mask:
            if server_mask & 1:
                mask |= self._customer_masks[j]
            server_mask >>= 1
            j += 1
        return mask

    def customers_of(self, mask: int) -> typing.Tuple[str, ...]:
        """Customer labels in a bitmask, in canonical order."""
        return tuple(c for i, c in enumerate(self._customers) if mask >> i & 1)

    def servers_of(self, mask: int) -> typing.Tuple[str, ...]:
        """Server labels in a bitmask, in canonical order."""
        return tuple(s for j, s in enumerate(self._servers) if mask >> j & 1)

    def customer_bits(self, labels: Iterable[str]) -> int:
        """Bitmask of a set of customer labels."""
        mask = 0
        for c in labels:
            mask |= 1 << self.customer_index(c)
        return mask

    def server_bits(self, labels: Iterable[str]) -> int:
        """Bitmask of a set of server labels."""
        mask = 0
        for s in labels:
            mask |= 1 << self.server_index(s)
        return mask

    def is_edge(self, c: str, s: str) -> bool:
        """Whether ``(c, s)`` is a matching edge."""
        return bool(self._server_masks[self.customer_index(c)] >> self.server_index(s) & 1)

    def neighbors(self, side: Side, subset: Iterable[str]) -> typing.FrozenSet[str]:
        """See :func:`neighbors`."""
        if side == "customer":
            return frozenset(self.servers_of(self.server_mask(self.customer_bits(subset))))
        if side == "server":
            return frozenset(self.customers_of(self.customer_mask(self.server_bits(subset))))
        raise ValueError(f"Invalid side {side!r}.")

    def with_arrival_edges(self, arrival_edges: Iterable[Sequence[str]]) -> MatchingStructure:
        """Same classes and matching edges, different arrival edges."""
        return MatchingStructure(
            self._customers, self._servers, self._matching_edges, arrival_edges
        )

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, MatchingStructure):
            return NotImplemented
        return (
            self._customers == other._customers
            and self._servers == other._servers
            and self._matching_edges == other._matching_edges
            and self._arrival_edges == other._arrival_edges
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return (
            f"MatchingStructure({list(self._customers)!r}, {list(self._servers)!r}, "
            f"{[list(e) for e in self._matching_edges]!r}, "
            f"{[list(f) for f in self._arrival_edges]!r})"
        )


def validate_structure(
    customers: Sequence[str],
    servers: Sequence[str],
    matching_edges: Iterable[Sequence[str]],
    arrival_edges: Optional[Iterable[Sequence[str]]] = None,
) -> MatchingStructure:
    """
    Validates a candidate structure, returning it as a :class:`MatchingStructure`.
    Arrival edges default to all of ``C x S``.

    Raises:

    - :class:`~matchstab.errors.DanglingEdgeError` if an edge names an unknown class
    - :class:`~matchstab.errors.DisconnectedMatchingGraphError` if ``(C, S, E)`` is not connected
    - :class:`~matchstab.errors.IsolatedArrivalVertexError` if some class has no arrival edge

    Each error carries an :class:`~matchstab.certificates.InvariantCertificate`
    naming the violated invariant.
    """
    return MatchingStructure(customers, servers, matching_edges, arrival_edges)


def neighbors(
    structure: MatchingStructure, side: Side, subset: Iterable[str]
) -> typing.FrozenSet[str]:
    """
    Neighbourhood ``S(U)`` of a set ``U`` of customer classes
    (``side="customer"``), or ``C(V)`` of a set ``V`` of server classes
    (``side="server"``), in the matching graph.

    Raises :class:`~matchstab.errors.UnknownClassError` on unknown labels.
    """
    return structure.neighbors(side, subset)


class ArrivalMeasure:
    r"""
    An arrival measure ``mu`` on ``C x S``, together with its structure.
    Zero entries are dropped, so that :meth:`support` is exactly the set of
    arrival edges of :attr:`structure`.
    """

    _structure: MatchingStructure
    _table: typing.Dict[Pair, Fraction]
    _customer_marginal: typing.Dict[str, Fraction]
    _server_marginal: typing.Dict[str, Fraction]

    __slots__ = ("_structure", "_table", "_customer_marginal", "_server_marginal")

    def __new__(
        cls,
        structure: MatchingStructure,
        table: Mapping[Pair, RationalLike],
    ) -> Self:
        parsed: typing.Dict[Pair, Fraction] = {}
        for (c, s), p in table.items():
            structure.customer_index(c)
            structure.server_index(s)
            r = parse_rational(p)
            if r < 0:
                raise _structure_error(
                    NotADistributionError,
                    (c, s),
                    "nonnegative entries",
                    f"mu({c},{s}) = {format_rational(r)} < 0",
                )
            if r > 0:
                parsed[(c, s)] = r
        total = sum(parsed.values(), Fraction(0))
        if total != 1:
            raise _structure_error(
                NotADistributionError,
                total,
                "unit mass",
                f"entries sum to {format_rational(total)}",
            )
        support = set(parsed)
        if support != set(structure.arrival_edges):
            extra = sorted(support - set(structure.arrival_edges))
            missing = sorted(set(structure.arrival_edges) - support)
            raise _structure_error(
                NotADistributionError,
                (tuple(extra), tuple(missing)),
                "supp(mu) = F",
                f"pairs outside F: {extra}, arrival edges with zero mass: {missing}",
            )
        instance = super().__new__(cls)
        instance._structure = structure
        order = {pair: k for k, pair in enumerate(structure.arrival_edges)}
        instance._table = dict(sorted(parsed.items(), key=lambda kv: order[kv[0]]))
        mu_c = {c: Fraction(0) for c in structure.customers}
        mu_s = {s: Fraction(0) for s in structure.servers}
        for (c, s), r in instance._table.items():
            mu_c[c] += r
            mu_s[s] += r
        instance._customer_marginal = mu_c
        instance._server_marginal = mu_s
        return instance

    @staticmethod
    def from_table(
        structure: MatchingStructure,
        table: Mapping[Pair, RationalLike],
        *,
        arrival_edges_from_support: bool = False,
    ) -> ArrivalMeasure:
        """
        Builds a measure from a table of probabilities. If
        ``arrival_edges_from_support`` is set, the arrival edges of the
        structure are replaced by the support of the table.
        """
        if arrival_edges_from_support:
            support = [pair for pair, p in table.items() if parse_rational(p) != 0]
            structure = structure.with_arrival_edges(support)
        return ArrivalMeasure(structure, table)

    @property
    def structure(self) -> MatchingStructure:
        """The structure this measure is defined on."""
        return self._structure

    @property
    def table(self) -> Mapping[Pair, Fraction]:
        """Nonzero entries, in canonical pair order."""
        return self._table

    @property
    def customer_marginal(self) -> Mapping[str, Fraction]:
        """Marginal ``mu_C``."""
        return self._customer_marginal

    @property
    def server_marginal(self) -> Mapping[str, Fraction]:
        """Marginal ``mu_S``."""
        return self._server_marginal

    def __getitem__(self, pair: Pair) -> Fraction:
        return self._table.get(pair, Fraction(0))

    def support(self) -> typing.Tuple[Pair, ...]:
        """Pairs with positive probability, in canonical order."""
        return tuple(self._table)

    def mass(self, pairs: Iterable[Pair]) -> Fraction:
        """Total probability of a set of pairs."""
        return sum((self[pair] for pair in set(pairs)), Fraction(0))

    def max_denominator(self) -> int:
        """Largest denominator among the entries."""
        return max(r.denominator for r in self._table.values())

    def with_structure(self, structure: MatchingStructure) -> ArrivalMeasure:
        """The same table on another structure (e.g. with different matching edges)."""
        return ArrivalMeasure(structure, self._table)

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ArrivalMeasure):
            return NotImplemented
        return self._structure == other._structure and self._table == other._table

    def __hash__(self) -> int:
        return hash((self._structure, tuple(self._table.items())))

    def __repr__(self) -> str:
        entries = ", ".join(
            f"{c}|{s}: {format_rational(r)}" for (c, s), r in self._table.items()
        )
        return f"ArrivalMeasure({{{entries}}})"


def marginals(
    measure: ArrivalMeasure,
) -> typing.Tuple[Mapping[str, Fraction], Mapping[str, Fraction]]:
    """
    The marginals ``(mu_C, mu_S)`` of a measure, each summing exactly to 1.
    """
    return measure.customer_marginal, measure.server_marginal


def _distribution(
    labels: Sequence[str], values: Union[Mapping[str, RationalLike], Sequence[RationalLike]], side: str
) -> typing.Dict[str, Fraction]:
    if isinstance(values, Mapping):
        unknown = set(values) - set(labels)
        if unknown:
            raise UnknownClassError(f"Unknown {side} classes {sorted(unknown)!r}.")
        dist = {label: parse_rational(values.get(label, 0)) for label in labels}
    else:
        if len(values) != len(labels):
            raise _structure_error(
                NotADistributionError,
                tuple(values),
                "one entry per class",
                f"expected {len(labels)} {side} probabilities, found {len(values)}",
            )
        dist = {label: parse_rational(v) for label, v in zip(labels, values)}
    total = sum(dist.values(), Fraction(0))
    if any(p <= 0 for p in dist.values()) or total != 1:
        raise _structure_error(
            NotADistributionError,
            tuple(dist.values()),
            "positive probability vector",
            f"{side} probabilities must be positive and sum to 1, "
            f"found sum {format_rational(total)}",
        )
    return dist


def product_measure(
    structure: MatchingStructure,
    mu_c: Union[Mapping[str, RationalLike], Sequence[RationalLike]],
    mu_s: Union[Mapping[str, RationalLike], Sequence[RationalLike]],
) -> ArrivalMeasure:
    """
    The product measure ``mu(c, s) = mu_C(c) mu_S(s)`` on a structure,
    whose arrival edges become all of ``C x S``.
    Marginals may be given as mappings or as sequences in canonical order.

    Raises :class:`~matchstab.errors.NotADistributionError` unless both
    marginals are positive and sum to 1.
    """
    dist_c = _distribution(structure.customers, mu_c, "customer")
    dist_s = _distribution(structure.servers, mu_s, "server")
    full = list(itertools.product(structure.customers, structure.servers))
    if set(structure.arrival_edges) != set(full):
        structure = structure.with_arrival_edges(full)
    table = {(c, s): dist_c[c] * dist_s[s] for c, s in full}
    return ArrivalMeasure(structure, table)


def uniform_measure(structure: MatchingStructure) -> ArrivalMeasure:
    """Uniform measure over the arrival edges."""
    p = Fraction(1, len(structure.arrival_edges))
    return ArrivalMeasure(structure, {pair: p for pair in structure.arrival_edges})


_NN_C = ("1", "2", "3")
_NN_S = ("1'", "2'", "3'")
_NN_E = (("1", "2'"), ("1", "3'"), ("2", "1'"), ("2", "2'"), ("3", "1'"))

NN = MatchingStructure(_NN_C, _NN_S, _NN_E)
"""
    The three-class NN model, with every arrival pair possible.
"""

NN_FDIAG = NN.with_arrival_edges((("1", "1'"), ("2", "2'"), ("3", "3'")))
"""
    The NN matching graph with diagonal arrival edges, a stable structure
    whose chains are not irreducible.
"""

NN_FANTI = NN.with_arrival_edges((("1", "3'"), ("2", "2'"), ("3", "1'")))
"""
    The NN matching graph with anti-diagonal arrival edges, an unstable structure.
"""

NNN = MatchingStructure(
    ("1", "2", "3", "4"),
    ("1'", "2'", "3'", "4'"),
    (
        ("1", "1'"),
        ("1", "2'"),
        ("2", "2'"),
        ("2", "3'"),
        ("3", "3'"),
        ("3", "4'"),
        ("4", "4'"),
    ),
)
"""
    The four-class NNN model, with every arrival pair possible.
"""

NN_PRIORITIES: typing.Tuple[
    typing.Tuple[typing.Tuple[int, ...], ...], typing.Tuple[typing.Tuple[int, ...], ...]
] = (
    ((0, 2, 1), (2, 1, 0), (1, 0, 0)),
    ((0, 2, 1), (2, 1, 0), (1, 0, 0)),
)
"""
    Priority matrices ``(A, B)`` for the NN model under which the priority
    policy is unstable for some measures satisfying the necessary conditions.
    Row ``c`` of ``A`` ranks the servers of ``S(c)``, row ``s`` of ``B`` ranks
    the customers of ``C(s)``; the greatest value wins.
"""


def complete_structure(k: int, l: int) -> MatchingStructure:
    """Complete bipartite structure on ``k`` customers and ``l`` servers."""
    customers = tuple(str(i + 1) for i in range(k))
    servers = tuple(f"{j + 1}'" for j in range(l))
    return MatchingStructure(customers, servers, itertools.product(customers, servers))


def almost_complete_structure(k: int) -> MatchingStructure:
    """
    Structure on ``k >= 3`` customers and servers whose matching edges are
    all pairs except the diagonal ones. Every nonzero facet is saturated.
    """
    if k < 3:
        raise MatchstabError("Almost complete structures need at least 3 classes per side.")
    customers = tuple(str(i + 1) for i in range(k))
    servers = tuple(f"{j + 1}'" for j in range(k))
    edges = [
        (c, s)
        for i, c in enumerate(customers)
        for j, s in enumerate(servers)
        if i != j
    ]
    return MatchingStructure(customers, servers, edges)


def symmetric_nn_measure(x: RationalLike, y: RationalLike) -> ArrivalMeasure:
    """
    The product measure on :data:`NN` with
    ``mu_C = mu_S = (x, y, 1 - x - y)``.
    """
    x, y = parse_rational(x), parse_rational(y)
    marginal = (x, y, 1 - x - y)
    return product_measure(NN, marginal, marginal)
