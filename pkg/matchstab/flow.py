"""
    Maximum flows over exact values, and the feasibility questions they
    answer: Hall matchings of buffer contents, and the necessary stability
    conditions on arrival marginals.

    The strict conditions are decided with a single max-flow computation
    over :class:`EtaValue` capacities ``x + y*eta``, where ``eta`` is a
    formal positive infinitesimal.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
import itertools
import logging
import sys
import typing
from typing import Any, Generic, Optional, TypeVar, Union

if sys.version_info[1] >= 9:
    from collections.abc import Mapping, Sequence
else:
    from typing import Mapping, Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from .certificates import SubsetCertificate
from .errors import (
    NCondViolatedError,
    NotADistributionError,
    TooLargeError,
    UnequalTotalsError,
    _certified_error,
)
from .model import MatchingStructure, Pair, RationalLike, format_rational, parse_rational

_log = logging.getLogger(__name__)


class EtaValue:
    r"""
    A value ``x + y*eta`` with rational ``x`` (:attr:`base`) and ``y``
    (:attr:`eta_coeff`), for a formal positive infinitesimal ``eta``.
    Values are compared lexicographically:

    >>> EtaValue(1, -5) < EtaValue(1, -4) < EtaValue(1)
    True

    Addition and subtraction are componentwise; multiplication is by
    rationals only.
    """

    _base: Fraction
    _eta_coeff: Fraction

    __slots__ = ("_base", "_eta_coeff")

    def __new__(cls, base: RationalLike = 0, eta_coeff: RationalLike = 0) -> Self:
        instance = super().__new__(cls)
        instance._base = Fraction(base)
        instance._eta_coeff = Fraction(eta_coeff)
        return instance

    @property
    def base(self) -> Fraction:
        """The standard part ``x``."""
        return self._base

    @property
    def eta_coeff(self) -> Fraction:
        """The coefficient ``y`` of ``eta``."""
        return self._eta_coeff

    def substitute(self, eta: Fraction) -> Fraction:
        """The rational obtained by substituting a concrete value for ``eta``."""
        return self._base + self._eta_coeff * eta

    def scale(self, r: RationalLike) -> EtaValue:
        """Multiplication by a rational."""
        r = Fraction(r)
        return EtaValue(self._base * r, self._eta_coeff * r)

    def _key(self) -> typing.Tuple[Fraction, Fraction]:
        return (self._base, self._eta_coeff)

    def __add__(self, other: EtaValue) -> EtaValue:
        return EtaValue(self._base + other._base, self._eta_coeff + other._eta_coeff)

    def __sub__(self, other: EtaValue) -> EtaValue:
        return EtaValue(self._base - other._base, self._eta_coeff - other._eta_coeff)

    def __neg__(self) -> EtaValue:
        return EtaValue(-self._base, -self._eta_coeff)

    def __lt__(self, other: EtaValue) -> bool:
        return self._key() < other._key()

    def __le__(self, other: EtaValue) -> bool:
        return self._key() <= other._key()

    def __gt__(self, other: EtaValue) -> bool:
        return self._key() > other._key()

    def __ge__(self, other: EtaValue) -> bool:
        return self._key() >= other._key()

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, EtaValue):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return f"EtaValue({format_rational(self._base)!r}, {format_rational(self._eta_coeff)!r})"

    def __str__(self) -> str:
        if self._eta_coeff == 0:
            return format_rational(self._base)
        sign = "-" if self._eta_coeff < 0 else "+"
        return f"{format_rational(self._base)} {sign} {format_rational(abs(self._eta_coeff))}η"


V = TypeVar("V", Fraction, EtaValue, int)
"""
    Type of flow values: exact rationals, eta-augmented rationals or integers.
"""


class FlowResult(Generic[V]):
    """
    A maximum flow, together with the source side of a minimum cut read
    off the final residual network.
    """

    _value: V
    _flow: typing.Tuple[V, ...]
    _cut: typing.FrozenSet[int]
    _cut_capacity: V

    __slots__ = ("_value", "_flow", "_cut", "_cut_capacity")

    def __new__(
        cls, value: V, flow: Sequence[V], cut: typing.FrozenSet[int], cut_capacity: V
    ) -> Self:
        instance = super().__new__(cls)
        instance._value = value
        instance._flow = tuple(flow)
        instance._cut = cut
        instance._cut_capacity = cut_capacity
        return instance

    @property
    def value(self) -> V:
        """Value of the flow."""
        return self._value

    @property
    def flow(self) -> typing.Tuple[V, ...]:
        """Flow on each arc, indexed as the arcs of the network."""
        return self._flow

    @property
    def cut(self) -> typing.FrozenSet[int]:
        """Nodes on the source side of a minimum cut."""
        return self._cut

    @property
    def cut_capacity(self) -> V:
        """Capacity of the cut, equal to :attr:`value`."""
        return self._cut_capacity


class FlowNetwork(Generic[V]):
    """
    A flow network with a source ``i``, a sink ``f``, one node per
    customer class and one node per server class.

    Arcs are numbered in insertion order, which is also the order in which
    augmenting-path search visits them.
    """

    _labels: typing.List[str]
    _tails: typing.List[int]
    _heads: typing.List[int]
    _caps: typing.List[V]
    _zero: V

    SOURCE = 0
    SINK = 1

    def __new__(cls, zero: V, labels: Sequence[str] = ()) -> Self:
        instance = super().__new__(cls)
        instance._labels = ["i", "f", *labels]
        instance._tails = []
        instance._heads = []
        instance._caps = []
        instance._zero = zero
        return instance

    @staticmethod
    def bipartite(
        structure: MatchingStructure,
        customer_caps: Sequence[V],
        server_caps: Sequence[V],
        unbounded: V,
        *,
        zero: V,
        customer_mask: int = -1,
        server_mask: int = -1,
    ) -> FlowNetwork[V]:
        """
        The network with arcs ``(i, c)``, then ``(c, s)`` for ``(c, s)`` in
        ``E``, then ``(s, f)``, restricted to the classes in the masks.
        Node ``2 + k`` is the ``k``-th customer and node ``2 + |C| + l``
        the ``l``-th server.
        """
        network = FlowNetwork(
            zero,
            [f"c:{c}" for c in structure.customers] + [f"s:{s}" for s in structure.servers],
        )
        n_c = structure.num_customers
        for i in range(n_c):
            if customer_mask >> i & 1:
                network.add_arc(FlowNetwork.SOURCE, 2 + i, customer_caps[i])
        for i in range(n_c):
            if customer_mask >> i & 1:
                for j in structure.server_neighbors_of(i):
                    if server_mask >> j & 1:
                        network.add_arc(2 + i, 2 + n_c + j, unbounded)
        for j in range(structure.num_servers):
            if server_mask >> j & 1:
                network.add_arc(2 + n_c + j, FlowNetwork.SINK, server_caps[j])
        return network

    def add_arc(self, tail: int, head: int, capacity: V) -> int:
        """Adds an arc, returning its index."""
        assert 0 <= tail < len(self._labels) and 0 <= head < len(self._labels)
        assert not capacity < self._zero, f"Negative capacity {capacity}."
        self._tails.append(tail)
        self._heads.append(head)
        self._caps.append(capacity)
        return len(self._caps) - 1

    @property
    def num_nodes(self) -> int:
        """Number of nodes."""
        return len(self._labels)

    @property
    def labels(self) -> typing.Tuple[str, ...]:
        """Node labels."""
        return tuple(self._labels)

    @property
    def arcs(self) -> typing.Tuple[typing.Tuple[int, int, V], ...]:
        """Arcs as ``(tail, head, capacity)`` triples."""
        return tuple(zip(self._tails, self._heads, self._caps))

    @property
    def zero(self) -> V:
        """The zero value for this network."""
        return self._zero


def max_flow(network: FlowNetwork[V]) -> FlowResult[V]:
    """
    Maximum flow from ``i`` to ``f``, by breadth-first augmenting paths
    with arcs visited in index order. The returned cut is the set of nodes
    reachable from the source in the final residual network.
    """
    # pylint: disable = too-many-locals
    zero = network.zero
    arcs = network.arcs
    n = network.num_nodes
    flow: typing.List[V] = [zero] * len(arcs)
    adj: typing.List[typing.List[typing.Tuple[int, bool]]] = [[] for _ in range(n)]
    for k, (tail, head, _) in enumerate(arcs):
        adj[tail].append((k, True))
        adj[head].append((k, False))
    value = zero
    source, sink = FlowNetwork.SOURCE, FlowNetwork.SINK
    while True:
        parent: typing.List[Optional[typing.Tuple[int, bool]]] = [None] * n
        reached = [False] * n
        reached[source] = True
        queue = deque([source])
        while queue and not reached[sink]:
            node = queue.popleft()
            for k, forward in adj[node]:
                tail, head, cap = arcs[k]
                other = head if forward else tail
                if reached[other]:
                    continue
                residual = cap - flow[k] if forward else flow[k]
                if zero < residual:
                    reached[other] = True
                    parent[other] = (k, forward)
                    queue.append(other)
        if not reached[sink]:
            break
        path: typing.List[typing.Tuple[int, bool]] = []
        node = sink
        while node != source:
            step = parent[node]
            assert step is not None
            path.append(step)
            k, forward = step
            node = arcs[k][0] if forward else arcs[k][1]
        bottleneck = min(
            (arcs[k][2] - flow[k] if forward else flow[k]) for k, forward in path
        )
        for k, forward in path:
            flow[k] = flow[k] + bottleneck if forward else flow[k] - bottleneck
        value = value + bottleneck
    cut = frozenset(node for node in range(n) if reached[node])
    cut_capacity = zero
    for tail, head, cap in arcs:
        if tail in cut and head not in cut:
            cut_capacity = cut_capacity + cap
    assert cut_capacity == value, f"Cut capacity {cut_capacity} differs from flow value {value}."
    return FlowResult(value, flow, cut, cut_capacity)


def min_cut(network: FlowNetwork[V]) -> typing.FrozenSet[int]:
    """Source side of a minimum cut, read from the residual graph of :func:`max_flow`."""
    return max_flow(network).cut


Marginal = Union[Mapping[str, RationalLike], Sequence[RationalLike]]
"""
    A marginal, as a mapping from labels or a sequence in canonical order.
"""


def _vector(labels: Sequence[str], values: Marginal, side: str) -> typing.List[Fraction]:
    if isinstance(values, Mapping):
        vec = [parse_rational(values.get(label, 0)) for label in labels]
    else:
        if len(values) != len(labels):
            raise NotADistributionError(
                f"Expected {len(labels)} {side} probabilities, found {len(values)}."
            )
        vec = [parse_rational(v) for v in values]
    if any(p < 0 for p in vec) or sum(vec) != 1:
        raise NotADistributionError(
            f"The {side} marginal must be nonnegative and sum to 1."
        )
    return vec


def _unbounded(structure: MatchingStructure) -> int:
    return structure.num_customers + structure.num_servers + 1


def ncond_network(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> FlowNetwork[EtaValue]:
    """
    The network with capacities ``mu_C(c) - |S(c)| eta`` on ``(i, c)``,
    ``mu_S(s) - |C(s)| eta`` on ``(s, f)`` and unbounded matching edges.
    """
    mu_c = _vector(structure.customers, mu_c, "customer")
    mu_s = _vector(structure.servers, mu_s, "server")
    customer_caps = [
        EtaValue(mu_c[i], -len(structure.server_neighbors_of(i)))
        for i in range(structure.num_customers)
    ]
    server_caps = [
        EtaValue(mu_s[j], -len(structure.customer_neighbors_of(j)))
        for j in range(structure.num_servers)
    ]
    return FlowNetwork.bipartite(
        structure,
        customer_caps,
        server_caps,
        EtaValue(_unbounded(structure)),
        zero=EtaValue(0),
    )


def plain_network(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> FlowNetwork[Fraction]:
    """
    The network with capacities ``mu_C(c)`` on ``(i, c)``, ``mu_S(s)`` on
    ``(s, f)`` and unbounded matching edges.
    """
    mu_c = _vector(structure.customers, mu_c, "customer")
    mu_s = _vector(structure.servers, mu_s, "server")
    return FlowNetwork.bipartite(
        structure, mu_c, mu_s, Fraction(_unbounded(structure)), zero=Fraction(0)
    )


def check_ncond_leq(structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal) -> bool:
    """
    Whether the large inequalities ``mu_C(U) <= mu_S(S(U))`` hold for all
    ``U``, decided by a max flow of value 1 on the network with plain
    capacities ``mu_C(c)`` on ``(i, c)`` and ``mu_S(s)`` on ``(s, f)``.
    """
    vec_c = _vector(structure.customers, mu_c, "customer")
    vec_s = _vector(structure.servers, mu_s, "server")
    result = max_flow(plain_network(structure, vec_c, vec_s))
    _log.debug("Plain network flow value: %s", result.value)
    return result.value == 1


def _check_full_support(
    structure: MatchingStructure, vec_c: Sequence[Fraction], vec_s: Sequence[Fraction]
) -> None:
    missing = [c for c, p in zip(structure.customers, vec_c) if p == 0]
    missing += [s for s, p in zip(structure.servers, vec_s) if p == 0]
    if missing:
        raise NotADistributionError(
            f"The strict conditions need every class to have positive probability, "
            f"found zero for {', '.join(missing)}."
        )


def _ncond_flow(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> typing.Tuple[bool, FlowResult[EtaValue], typing.List[Fraction], typing.List[Fraction]]:
    vec_c = _vector(structure.customers, mu_c, "customer")
    vec_s = _vector(structure.servers, mu_s, "server")
    _check_full_support(structure, vec_c, vec_s)
    result = max_flow(ncond_network(structure, vec_c, vec_s))
    target = EtaValue(1, -len(structure.matching_edges))
    _log.debug("Eta network flow value: %s (target %s)", result.value, target)
    return result.value == target, result, vec_c, vec_s


def check_ncond(structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal) -> bool:
    """
    Whether the strict necessary conditions hold: ``mu_C(U) < mu_S(S(U))``
    for every nonempty ``U`` strictly contained in ``C``, and
    ``mu_S(V) < mu_C(C(V))`` for every nonempty ``V`` strictly contained
    in ``S``.

    Runs a single max flow with capacities ``mu_C(c) - |S(c)| eta`` on
    ``(i, c)`` and ``mu_S(s) - |C(s)| eta`` on ``(s, f)``: the conditions
    hold iff the flow value is ``1 - |E| eta``.

    Raises :class:`~matchstab.errors.NotADistributionError` if some class
    has zero probability, including classes left out of a mapping.
    """
    ok, _, _, _ = _ncond_flow(structure, mu_c, mu_s)
    return ok


def ncond_certificate(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> Optional[SubsetCertificate]:
    """
    A violated inequality ``mu_C(U) >= mu_S(S(U))`` read off the minimum
    cut of the eta network, or :obj:`None` if the strict conditions hold.
    """
    ok, result, vec_c, vec_s = _ncond_flow(structure, mu_c, mu_s)
    if ok:
        return None
    u = 0
    for i in range(structure.num_customers):
        if 2 + i in result.cut:
            u |= 1 << i
    image = structure.server_mask(u)
    lhs = sum((vec_c[i] for i in range(structure.num_customers) if u >> i & 1), Fraction(0))
    rhs = sum((vec_s[j] for j in range(structure.num_servers) if image >> j & 1), Fraction(0))
    return SubsetCertificate(
        "customer", structure.customers_of(u), structure.servers_of(image), lhs, rhs
    )


def _check_oracle_size(structure: MatchingStructure) -> None:
    if structure.num_customers + structure.num_servers > 24:
        raise TooLargeError(
            "Brute-force checks are limited to 24 classes in total, "
            f"found {structure.num_customers + structure.num_servers}."
        )


def _subset_inequalities(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> typing.Iterator[typing.Tuple[Fraction, Fraction]]:
    _check_oracle_size(structure)
    vec_c = _vector(structure.customers, mu_c, "customer")
    vec_s = _vector(structure.servers, mu_s, "server")
    n_c, n_s = structure.num_customers, structure.num_servers

    def _mass(vec: typing.List[Fraction], mask: int) -> Fraction:
        return sum((p for k, p in enumerate(vec) if mask >> k & 1), Fraction(0))

    for u in range(1, (1 << n_c) - 1):
        yield _mass(vec_c, u), _mass(vec_s, structure.server_mask(u))
    for v in range(1, (1 << n_s) - 1):
        yield _mass(vec_s, v), _mass(vec_c, structure.customer_mask(v))


def ncond_bruteforce(structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal) -> bool:
    """
    The strict necessary conditions by direct evaluation of all subset
    inequalities. Exponential: an oracle for :func:`check_ncond`.

    Raises :class:`~matchstab.errors.TooLargeError` beyond 24 classes.
    """
    return all(lhs < rhs for lhs, rhs in _subset_inequalities(structure, mu_c, mu_s))


def ncond_leq_bruteforce(structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal) -> bool:
    """
    The large inequalities by direct evaluation. Exponential: an oracle for
    :func:`check_ncond_leq`.
    """
    return all(lhs <= rhs for lhs, rhs in _subset_inequalities(structure, mu_c, mu_s))


def _uniform_edge_flow(
    structure: MatchingStructure,
    eta: Fraction,
) -> typing.Tuple[typing.List[Fraction], typing.List[Fraction]]:
    eta_c = [len(structure.server_neighbors_of(i)) * eta for i in range(structure.num_customers)]
    eta_s = [len(structure.customer_neighbors_of(j)) * eta for j in range(structure.num_servers)]
    return eta_c, eta_s


def positive_flow(
    structure: MatchingStructure, mu_c: Marginal, mu_s: Marginal
) -> typing.Dict[Pair, Fraction]:
    """
    A flow of value 1 on the plain network, with every matching edge
    carrying strictly positive flow. Returns the flow on each matching edge.

    Starts from ``eta = 1/(2 |E| D)``, with ``D`` the largest denominator in
    the marginals, and halves it until the reduced marginals
    ``(mu_C(c) - |S(c)| eta)/(1 - |E| eta)`` (and likewise for servers)
    still satisfy the strict conditions. The result is the uniform flow
    ``eta`` on every edge plus ``1 - |E| eta`` times a max flow for the
    reduced marginals.

    Raises :class:`~matchstab.errors.NCondViolatedError` if the strict
    conditions fail for ``(mu_C, mu_S)``.
    """
    # pylint: disable = too-many-locals
    vec_c = _vector(structure.customers, mu_c, "customer")
    vec_s = _vector(structure.servers, mu_s, "server")
    certificate = ncond_certificate(structure, vec_c, vec_s)
    if certificate is not None:
        raise _certified_error(NCondViolatedError, certificate)
    n_e = len(structure.matching_edges)
    denominator = max(p.denominator for p in itertools.chain(vec_c, vec_s))
    eta = Fraction(1, 2 * n_e * denominator)
    while True:
        eta_c, eta_s = _uniform_edge_flow(structure, eta)
        scale = 1 - n_e * eta
        tilde_c = [(p - q) / scale for p, q in zip(vec_c, eta_c)]
        tilde_s = [(p - q) / scale for p, q in zip(vec_s, eta_s)]
        if all(p > 0 for p in tilde_c + tilde_s) and check_ncond(structure, tilde_c, tilde_s):
            break
        eta /= 2
        _log.debug("Halving eta to %s.", eta)
    network = plain_network(structure, tilde_c, tilde_s)
    result = max_flow(network)
    assert result.value == 1, f"Reduced network flow value {result.value} != 1."
    n_c = structure.num_customers
    edge_flow: typing.Dict[Pair, Fraction] = {}
    for k, (tail, head, _) in enumerate(network.arcs):
        if tail >= 2 and head >= 2:
            c = structure.customers[tail - 2]
            s = structure.servers[head - 2 - n_c]
            edge_flow[(c, s)] = eta + scale * result.flow[k]
    return {pair: edge_flow[pair] for pair in structure.matching_edges}


def perfect_matching(
    structure: MatchingStructure, x: Sequence[int], y: Sequence[int]
) -> typing.Tuple[Optional[typing.Dict[Pair, int]], Optional[SubsetCertificate]]:
    """
    A perfect matching of the buffered customers ``x`` with the buffered
    servers ``y`` along matching edges, as a map from edges to the number
    of matched pairs (zero entries omitted), or :obj:`None` together with a
    certificate ``x(U) > y(S(U))`` when the Hall condition fails.

    Raises :class:`~matchstab.errors.UnequalTotalsError` if the totals differ.
    """
    if sum(x) != sum(y):
        raise UnequalTotalsError(f"Buffer totals differ: {sum(x)} != {sum(y)}.")
    total = sum(x)
    network = FlowNetwork.bipartite(
        structure, list(x), list(y), total + 1, zero=0
    )
    result = max_flow(network)
    if result.value == total:
        n_c = structure.num_customers
        matching: typing.Dict[Pair, int] = {}
        for k, (tail, head, _) in enumerate(network.arcs):
            if tail >= 2 and head >= 2 and result.flow[k] > 0:
                matching[(structure.customers[tail - 2], structure.servers[head - 2 - n_c])] = (
                    result.flow[k]
                )
        return matching, None
    u = 0
    for i in range(structure.num_customers):
        if 2 + i in result.cut:
            u |= 1 << i
    image = structure.server_mask(u)
    lhs = sum(x[i] for i in range(structure.num_customers) if u >> i & 1)
    rhs = sum(y[j] for j in range(structure.num_servers) if image >> j & 1)
    certificate = SubsetCertificate(
        "customer",
        structure.customers_of(u),
        structure.servers_of(image),
        Fraction(lhs),
        Fraction(rhs),
        names=("x", "y"),
        strict=True,
    )
    return None, certificate
