"""
    Structure-level stability analysis: the pairing digraph and stable
    structures, the Perron-Frobenius stable measure, exact linear drifts
    per facet, and arrival sequences driving any state to the empty buffer.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
import itertools
import logging
import sys
import typing
from typing import Optional

if sys.version_info[1] >= 9:
    from collections.abc import Iterable, Sequence
else:
    from typing import Iterable, Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from . import config
from .certificates import InvariantCertificate, UnreachablePairCertificate
from .errors import (
    DrainFailedError,
    NotStronglyConnectedError,
    UnstableStructureError,
    ZeroFacetError,
    _certified_error,
)
from .facets import Facet, enumerate_facets, state_key
from .flow import check_ncond
from .model import ArrivalMeasure, MatchingStructure, Pair
from .policies import (
    BufferState,
    CommutativeState,
    Dynamics,
    PolicySpec,
    Runner,
)
from .rng import RandomStream

_log = logging.getLogger(__name__)


class PairingDigraph:
    """
    Directed graph on ``C ∪ S`` with an arc ``c -> s`` for every matching
    edge and an arc ``s -> c`` for every arrival edge. Nodes are numbered
    with customers first, then servers, in canonical order.
    """

    _structure: MatchingStructure
    _successors: typing.Tuple[typing.Tuple[int, ...], ...]

    __slots__ = ("_structure", "_successors")

    def __new__(cls, structure: MatchingStructure) -> Self:
        n_c = structure.num_customers
        succ: typing.List[typing.List[int]] = [
            [n_c + j for j in structure.server_neighbors_of(i)] for i in range(n_c)
        ]
        succ.extend([] for _ in structure.servers)
        for c, s in structure.arrival_edges:
            succ[n_c + structure.server_index(s)].append(structure.customer_index(c))
        instance = super().__new__(cls)
        instance._structure = structure
        instance._successors = tuple(tuple(sorted(nodes)) for nodes in succ)
        return instance

    @property
    def structure(self) -> MatchingStructure:
        """The structure."""
        return self._structure

    @property
    def num_nodes(self) -> int:
        """``|C| + |S|``."""
        return len(self._successors)

    @property
    def num_arcs(self) -> int:
        """``|E| + |F|``."""
        return sum(len(s) for s in self._successors)

    def label(self, node: int) -> str:
        """Class label of a node."""
        n_c = self._structure.num_customers
        if node < n_c:
            return self._structure.customers[node]
        return self._structure.servers[node - n_c]

    def successors(self, node: int) -> typing.Tuple[int, ...]:
        """Heads of the arcs leaving ``node``, in increasing order."""
        return self._successors[node]

    def reachable(self, node: int) -> typing.FrozenSet[int]:
        """Nodes reachable from ``node`` (itself included)."""
        seen = {node}
        queue = deque([node])
        while queue:
            for w in self._successors[queue.popleft()]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return frozenset(seen)

    def __repr__(self) -> str:
        return f"PairingDigraph({self._structure!r})"


def pairing_digraph(structure: MatchingStructure) -> PairingDigraph:
    """The pairing digraph ``(C ∪ S, E ∪ F~)`` of a structure."""
    return PairingDigraph(structure)


def strong_components(digraph: PairingDigraph) -> typing.List[typing.Tuple[int, ...]]:
    """
    Strongly connected components, each as a sorted tuple of nodes, in the
    order Tarjan's algorithm completes them (reverse topological order).
    """
    index: typing.Dict[int, int] = {}
    lowlink: typing.Dict[int, int] = {}
    on_stack: typing.Set[int] = set()
    stack: typing.List[int] = []
    components: typing.List[typing.Tuple[int, ...]] = []
    counter = itertools.count()
    for root in range(digraph.num_nodes):
        if root in index:
            continue
        index[root] = lowlink[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        work: typing.List[typing.Tuple[int, typing.Iterator[int]]] = [
            (root, iter(digraph.successors(root)))
        ]
        while work:
            v, it = work[-1]
            w = next(it, None)
            if w is not None:
                if w not in index:
                    index[w] = lowlink[w] = next(counter)
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(digraph.successors(w))))
                elif w in on_stack:
                    lowlink[v] = min(lowlink[v], index[w])
                continue
            work.pop()
            if work:
                u = work[-1][0]
                lowlink[u] = min(lowlink[u], lowlink[v])
            if lowlink[v] == index[v]:
                component = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    component.append(w)
                    if w == v:
                        break
                components.append(tuple(sorted(component)))
    return components


def is_stable_structure(structure: MatchingStructure) -> bool:
    """
    Whether some measure with support ``F`` satisfies the strict necessary
    conditions, i.e. whether the pairing digraph is strongly connected.
    """
    return len(strong_components(PairingDigraph(structure))) == 1


def stable_structure_certificate(
    structure: MatchingStructure,
) -> Optional[UnreachablePairCertificate]:
    """
    :obj:`None` for stable structures, otherwise the first customer-server
    pair (in canonical order) with no directed path from the customer to
    the server.
    """
    digraph = PairingDigraph(structure)
    n_c = structure.num_customers
    for i, c in enumerate(structure.customers):
        reached = digraph.reachable(i)
        for j, s in enumerate(structure.servers):
            if n_c + j not in reached:
                return UnreachablePairCertificate(c, s)
    return None


def _solve_exact(
    matrix: typing.List[typing.List[Fraction]], rhs: typing.List[Fraction]
) -> typing.List[Fraction]:
    """
    Gauss-Jordan elimination over the rationals for a consistent system
    with a unique solution (possibly with redundant equations).
    """
    rows = [row[:] + [b] for row, b in zip(matrix, rhs)]
    n = len(matrix[0])
    pivot_row = 0
    for col in range(n):
        pivot = next((r for r in range(pivot_row, len(rows)) if rows[r][col] != 0), None)
        assert pivot is not None, "Singular system."
        rows[pivot_row], rows[pivot] = rows[pivot], rows[pivot_row]
        p = rows[pivot_row][col]
        rows[pivot_row] = [a / p for a in rows[pivot_row]]
        for r, row in enumerate(rows):
            if r != pivot_row and row[col] != 0:
                f = row[col]
                rows[r] = [a - f * b for a, b in zip(row, rows[pivot_row])]
        pivot_row += 1
    assert all(row[n] == 0 for row in rows[n:]), "Inconsistent system."
    return [rows[k][n] for k in range(n)]


def construct_stable_measure(structure: MatchingStructure) -> ArrivalMeasure:
    """
    A measure with support ``F`` satisfying the strict necessary
    conditions, for a stable structure.

    With ``M_E`` the row-stochastic matrix uniform over ``S(c)`` on row
    ``c`` and ``M_F`` uniform over ``{c : (c, s) in F}`` on row ``s``, the
    stationary vector ``x = x M_E M_F`` is solved exactly; with
    ``y = x M_E``, the measure is ``mu(c, s) = y_s M_F[s][c]``.

    Raises :class:`~matchstab.errors.NotStronglyConnectedError` otherwise.
    """
    certificate = stable_structure_certificate(structure)
    if certificate is not None:
        raise _certified_error(NotStronglyConnectedError, certificate)
    n_c, n_s = structure.num_customers, structure.num_servers
    m_e = [[Fraction(0)] * n_s for _ in range(n_c)]
    for i in range(n_c):
        nbrs = structure.server_neighbors_of(i)
        for j in nbrs:
            m_e[i][j] = Fraction(1, len(nbrs))
    arrivals: typing.List[typing.List[int]] = [[] for _ in range(n_s)]
    for c, s in structure.arrival_edges:
        arrivals[structure.server_index(s)].append(structure.customer_index(c))
    m_f = [[Fraction(0)] * n_c for _ in range(n_s)]
    for j, cs in enumerate(arrivals):
        for i in cs:
            m_f[j][i] = Fraction(1, len(cs))
    p = [
        [sum((m_e[i][j] * m_f[j][k] for j in range(n_s)), Fraction(0)) for k in range(n_c)]
        for i in range(n_c)
    ]
    # x (P - I) = 0 transposed, plus normalisation
    matrix = [[p[i][k] - (1 if i == k else 0) for i in range(n_c)] for k in range(n_c)]
    matrix.append([Fraction(1)] * n_c)
    x = _solve_exact(matrix, [Fraction(0)] * n_c + [Fraction(1)])
    y = [sum((x[i] * m_e[i][j] for i in range(n_c)), Fraction(0)) for j in range(n_s)]
    table = {
        (c, s): y[structure.server_index(s)] * m_f[structure.server_index(s)][structure.customer_index(c)]
        for c, s in structure.arrival_edges
    }
    measure = ArrivalMeasure(structure, table)
    assert check_ncond(structure, measure.customer_marginal, measure.server_marginal)
    _log.debug("Constructed stable measure %r.", measure)
    return measure


class DriftReport:
    """
    Linear drift of a nonzero facet, and whether it is strictly negative.
    """

    _facet: Facet
    _linear_drift: Fraction

    __slots__ = ("_facet", "_linear_drift")

    def __new__(cls, facet: Facet, drift: Fraction) -> Self:
        instance = super().__new__(cls)
        instance._facet = facet
        instance._linear_drift = drift
        return instance

    @property
    def facet(self) -> Facet:
        """The facet."""
        return self._facet

    @property
    def linear_drift(self) -> Fraction:
        """Exact one-step expected change of the buffer size in the facet."""
        return self._linear_drift

    @property
    def scond_satisfied(self) -> bool:
        """Whether the drift is strictly negative."""
        return self._linear_drift < 0

    def __repr__(self) -> str:
        return f"DriftReport({self._facet.label()}, {self._linear_drift})"


def linear_drift(structure: MatchingStructure, measure: ArrivalMeasure, facet: Facet) -> Fraction:
    """
    The exact one-step expected change of the buffer size from any state
    deep inside a nonzero facet, under any admissible policy:
    ``1 - mu_C(C◎) - mu_S(S◎) - mu(E ∩ C∘ x S∘)``.

    Raises :class:`~matchstab.errors.ZeroFacetError` on the zero facet.
    """
    if facet.is_zero:
        raise ZeroFacetError("Linear drift is not defined on the zero facet.")
    mu_c = measure.customer_marginal
    mu_s = measure.server_marginal
    free_c = set(facet.free_zero_customers)
    free_s = set(facet.free_zero_servers)
    drift = (
        1
        - sum((mu_c[c] for c in facet.forced_zero_customers), Fraction(0))
        - sum((mu_s[s] for s in facet.forced_zero_servers), Fraction(0))
        - measure.mass(
            (c, s) for c, s in structure.matching_edges if c in free_c and s in free_s
        )
    )
    return Fraction(drift)


def check_scond(
    structure: MatchingStructure, measure: ArrivalMeasure
) -> typing.Tuple[bool, typing.List[DriftReport]]:
    """
    Whether every nonzero facet has strictly negative linear drift, with
    one report per nonzero facet in facet-key order.
    """
    reports = [
        DriftReport(facet, linear_drift(structure, measure, facet))
        for facet in enumerate_facets(structure)
        if not facet.is_zero
    ]
    ok = all(r.scond_satisfied for r in reports)
    _log.debug("SCond %s over %d facets.", "holds" if ok else "fails", len(reports))
    return ok, reports


def _drain_block(
    structure: MatchingStructure,
    digraph: PairingDigraph,
    support: Sequence[Pair],
    x: Sequence[int],
    y: Sequence[int],
) -> typing.List[Pair]:
    """
    Arrivals lowering the buffer size by one from a nonempty state: a
    supported pair in ``C◎ x S◎`` if any, otherwise the pairs along a
    shortest path ``s1 -> c1 -> s2 -> ... -> ck`` of the pairing digraph
    from ``S◎`` to ``C◎``.
    """
    u, v = state_key(x, y)
    c_forced = structure.customer_mask(v)
    s_forced = structure.server_mask(u)
    for c, s in support:
        if c_forced >> structure.customer_index(c) & 1 and s_forced >> structure.server_index(s) & 1:
            return [(c, s)]
    n_c = structure.num_customers
    parent: typing.Dict[int, int] = {}
    queue: typing.Deque[int] = deque()
    for j in range(structure.num_servers):
        if s_forced >> j & 1:
            parent[n_c + j] = -1
            queue.append(n_c + j)
    target = None
    while queue and target is None:
        node = queue.popleft()
        for w in digraph.successors(node):
            if w in parent:
                continue
            parent[w] = node
            if w < n_c and c_forced >> w & 1:
                target = w
                break
            queue.append(w)
    if target is None:
        raise UnstableStructureError("No path from the forced servers to the forced customers.")
    path = [target]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    path.reverse()
    # path alternates server, customer, ..., customer
    return [
        (digraph.label(path[k + 1]), digraph.label(path[k])) for k in range(0, len(path), 2)
    ]


def _check_drainable(structure: MatchingStructure, state: CommutativeState) -> None:
    state.validate(structure)
    certificate = stable_structure_certificate(structure)
    if certificate is not None:
        raise _certified_error(UnstableStructureError, certificate)


def drain_to_empty(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    state: CommutativeState,
    policy: Optional[PolicySpec] = None,
    seed: Optional[int] = None,
) -> typing.List[Pair]:
    """
    A finite sequence of arrival pairs, all in the support of ``measure``,
    taking ``state`` to the empty buffer.

    Each block of the sequence lowers the buffer size by one. Without a
    policy, the sequence works for every admissible policy: blocks are
    chosen against the set of all states reachable under every admissible
    choice, and :class:`~matchstab.errors.DrainFailedError` is raised when
    no block works for the whole set within the ``drain_max_blocks`` and
    ``drain_max_branches`` limits. With a policy, blocks follow that
    policy's own trajectory, random choices drawn from a stream seeded by
    ``seed``; :func:`apply_arrivals` with the same policy and a stream
    built from the same seed replays it.

    Raises :class:`~matchstab.errors.UnstableStructureError` if the
    structure is not stable and :class:`~matchstab.errors.InvalidStateError`
    on invalid states.
    """
    _check_drainable(structure, state)
    digraph = PairingDigraph(structure)
    support = measure.support()
    if policy is not None:
        return _drain_with_policy(structure, digraph, support, state, policy, seed)
    return _drain_robust(structure, digraph, support, state)


def _drain_with_policy(
    structure: MatchingStructure,
    digraph: PairingDigraph,
    support: Sequence[Pair],
    state: CommutativeState,
    policy: PolicySpec,
    seed: Optional[int],
) -> typing.List[Pair]:
    # pylint: disable = too-many-arguments
    runner = Runner(structure, policy, state, RandomStream(seed or 0))
    sequence: typing.List[Pair] = []
    max_blocks = config.limit("drain_max_blocks")
    blocks = 0
    while any(runner.x):
        if blocks >= max_blocks:
            raise DrainFailedError(f"Buffer not empty after {max_blocks} blocks.")
        before = sum(runner.x)
        block = _drain_block(structure, digraph, support, runner.x, runner.y)
        for c, s in block:
            runner.step(structure.customer_index(c), structure.server_index(s))
        assert sum(runner.x) == before - 1, "Drain block did not lower the buffer."
        sequence.extend(block)
        blocks += 1
    return sequence


def _drain_robust(
    structure: MatchingStructure,
    digraph: PairingDigraph,
    support: Sequence[Pair],
    state: CommutativeState,
) -> typing.List[Pair]:
    # pylint: disable = too-many-locals
    dynamics = Dynamics(structure, PolicySpec.ms())
    max_blocks = config.limit("drain_max_blocks")
    max_branches = config.limit("drain_max_branches")
    states: typing.FrozenSet[CommutativeState] = frozenset([state])
    sequence: typing.List[Pair] = []
    blocks = 0
    while not state.is_empty:
        if blocks >= max_blocks:
            raise DrainFailedError(f"Buffer not empty after {max_blocks} blocks.")
        total = state.total
        candidates: typing.List[typing.List[Pair]] = []
        for origin in sorted(states):
            block = _drain_block(structure, digraph, support, origin.x, origin.y)
            if block not in candidates:
                candidates.append(block)
        best: Optional[typing.Tuple[typing.List[Pair], typing.FrozenSet[CommutativeState]]] = None
        for block in candidates:
            reached = _apply_block(structure, dynamics, states, block, max_branches)
            if reached is None or any(s.total != total - 1 for s in reached):
                continue
            if best is None or len(reached) < len(best[1]):
                best = (block, reached)
        if best is None:
            raise _certified_error(
                DrainFailedError,
                InvariantCertificate(
                    state,
                    "drain",
                    f"no block lowers all {len(states)} reachable states by one",
                ),
            )
        block, states = best
        sequence.extend(block)
        state = min(states)
        blocks += 1
        _log.debug("Drain block %d: %s, %d branches.", blocks, block, len(states))
    return sequence


def _apply_block(
    structure: MatchingStructure,
    dynamics: Dynamics,
    states: Iterable[CommutativeState],
    block: Sequence[Pair],
    max_branches: int,
) -> Optional[typing.FrozenSet[CommutativeState]]:
    current = frozenset(states)
    for c, s in block:
        i, j = structure.customer_index(c), structure.server_index(s)
        current = frozenset(nxt for st in current for nxt in dynamics.successors(st, i, j))
        if len(current) > max_branches:
            return None
    return current


def apply_arrivals(
    structure: MatchingStructure,
    state: BufferState,
    arrivals: Iterable[Pair],
    policy: PolicySpec,
    rng: Optional[RandomStream] = None,
) -> BufferState:
    """
    Replays a sequence of arrival pairs from ``state`` under ``policy``.
    Random choices draw from ``rng``; FIFO and LIFO return word states.
    """
    runner = Runner(structure, policy, state, rng)
    for c, s in arrivals:
        runner.step(structure.customer_index(c), structure.server_index(s))
    return runner.state()
