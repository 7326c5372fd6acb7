"""
    Buffer states and admissible matching policies: the one-step transition
    of the buffer when a customer and a server arrive.

    A step follows the buffer-first rule: an arriving server is matched with
    a buffered customer whenever one is compatible (the policy choosing
    which class), and likewise for an arriving customer; the arriving pair
    is matched together only when neither has a buffered partner.

    FIFO and LIFO act on word states, which record arrival order; the other
    policies only depend on the commutative image of the buffer.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
import itertools
import logging
import sys
import typing
from typing import Any, Callable, Optional, Union

if sys.version_info[1] >= 9:
    from collections.abc import Iterable, Mapping, Sequence
else:
    from typing import Iterable, Mapping, Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from typing import Literal

from . import config
from .certificates import InvariantCertificate
from .errors import (
    BufferOverflowError,
    InvalidStateError,
    MatchstabError,
    MissingPrioritiesError,
    NCondViolatedError,
    _certified_error,
)
from .facets import Facet, FacetKey, check_state, enumerate_facets, state_key
from .flow import FlowNetwork, max_flow, ncond_certificate
from .model import ArrivalMeasure, MatchingStructure, Pair
from .rng import DiscreteSampler, RandomStream, weighted_index

_log = logging.getLogger(__name__)

PolicyKind = Literal["fifo", "lifo", "pr", "random", "ml", "ms", "flow"]

POLICY_NAMES: typing.Tuple[PolicyKind, ...] = (
    "fifo",
    "lifo",
    "pr",
    "random",
    "ml",
    "ms",
    "flow",
)
"""
    Names of all supported policies.
"""

WORD_POLICIES: typing.Tuple[PolicyKind, ...] = ("fifo", "lifo")
"""
    Policies acting on word states.
"""

PriorityMatrix = typing.Tuple[typing.Tuple[int, ...], ...]

ChoiceRow = typing.Tuple[typing.Tuple[int, ...], typing.Tuple[Fraction, ...]]
"""
    Candidate class indices and their choice probabilities.
"""


class CommutativeState:
    """
    Commutative buffer state: the number ``x[c]`` of buffered customers of
    each class and the number ``y[s]`` of buffered servers of each class,
    in canonical class order.
    """

    _x: typing.Tuple[int, ...]
    _y: typing.Tuple[int, ...]

    __slots__ = ("_x", "_y")

    def __new__(cls, x: Iterable[int], y: Iterable[int]) -> Self:
        instance = super().__new__(cls)
        instance._x = tuple(x)
        instance._y = tuple(y)
        return instance

    @staticmethod
    def empty(structure: MatchingStructure) -> CommutativeState:
        """The empty buffer."""
        return CommutativeState((0,) * structure.num_customers, (0,) * structure.num_servers)

    @property
    def x(self) -> typing.Tuple[int, ...]:
        """Buffered customer counts."""
        return self._x

    @property
    def y(self) -> typing.Tuple[int, ...]:
        """Buffered server counts."""
        return self._y

    @property
    def total(self) -> int:
        """Number of buffered customers (equal to the number of buffered servers)."""
        return sum(self._x)

    @property
    def is_empty(self) -> bool:
        """Whether the buffer is empty."""
        return not any(self._x)

    @property
    def key(self) -> FacetKey:
        """Key of the facet containing this state."""
        return state_key(self._x, self._y)

    def validate(self, structure: MatchingStructure) -> CommutativeState:
        """
        Returns the state itself after checking it against the state-space
        constraints of ``structure``.

        Raises :class:`~matchstab.errors.InvalidStateError` otherwise.
        """
        check_state(structure, self._x, self._y)
        return self

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, CommutativeState):
            return NotImplemented
        return self._x == other._x and self._y == other._y

    def __hash__(self) -> int:
        return hash((self._x, self._y))

    def __lt__(self, other: CommutativeState) -> bool:
        return (self._x, self._y) < (other._x, other._y)

    def __repr__(self) -> str:
        return f"CommutativeState({self._x!r}, {self._y!r})"


class WordState:
    """
    Word buffer state: buffered customer classes ``u`` and buffered server
    classes ``v``, each oldest first.
    """

    _u: typing.Tuple[str, ...]
    _v: typing.Tuple[str, ...]

    __slots__ = ("_u", "_v")

    def __new__(cls, u: Iterable[str], v: Iterable[str]) -> Self:
        instance = super().__new__(cls)
        instance._u = tuple(u)
        instance._v = tuple(v)
        return instance

    @staticmethod
    def from_counts(structure: MatchingStructure, state: CommutativeState) -> WordState:
        """Word state with the given counts, classes in canonical order."""
        u = [c for c, k in zip(structure.customers, state.x) for _ in range(k)]
        v = [s for s, k in zip(structure.servers, state.y) for _ in range(k)]
        return WordState(u, v)

    @property
    def u(self) -> typing.Tuple[str, ...]:
        """Buffered customer classes, oldest first."""
        return self._u

    @property
    def v(self) -> typing.Tuple[str, ...]:
        """Buffered server classes, oldest first."""
        return self._v

    @property
    def total(self) -> int:
        """Length of the customer word."""
        return len(self._u)

    @property
    def is_empty(self) -> bool:
        """Whether the buffer is empty."""
        return not self._u

    def commutative(self, structure: MatchingStructure) -> CommutativeState:
        """The commutative image ``([u], [v])``."""
        x = [0] * structure.num_customers
        y = [0] * structure.num_servers
        for c in self._u:
            x[structure.customer_index(c)] += 1
        for s in self._v:
            y[structure.server_index(s)] += 1
        return CommutativeState(x, y)

    def validate(self, structure: MatchingStructure) -> WordState:
        """
        Returns the state itself after checking that its commutative image
        is a valid state of ``structure``.
        """
        self.commutative(structure).validate(structure)
        return self

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, WordState):
            return NotImplemented
        return self._u == other._u and self._v == other._v

    def __hash__(self) -> int:
        return hash((self._u, self._v))

    def __repr__(self) -> str:
        return f"WordState({''.join(self._u)!r}, {''.join(self._v)!r})"


BufferState = Union[CommutativeState, WordState]


class FlowTables:
    """
    Per-facet choice probabilities of the facet-dependent flow policy.

    For a nonzero facet, an arriving server ``s`` in ``S◎`` picks the class
    of its buffered partner in ``C• ∩ C(s)`` with probability ``P[s][c]``;
    an arriving customer ``c`` in ``C◎`` picks in ``S• ∩ S(c)`` with
    probability ``P[c][s]``. Slacks ``eps`` measure by how much each bullet
    class is served faster than it arrives.
    """

    _structure: MatchingStructure
    _server_side: typing.Dict[FacetKey, typing.Dict[int, ChoiceRow]]
    _customer_side: typing.Dict[FacetKey, typing.Dict[int, ChoiceRow]]
    _customer_slack: typing.Dict[FacetKey, typing.Dict[int, Fraction]]
    _server_slack: typing.Dict[FacetKey, typing.Dict[int, Fraction]]
    _samplers: typing.Dict[typing.Tuple[FacetKey, str, int], DiscreteSampler]

    __slots__ = (
        "_structure",
        "_server_side",
        "_customer_side",
        "_customer_slack",
        "_server_slack",
        "_samplers",
    )

    def __new__(
        cls,
        structure: MatchingStructure,
        server_side: Mapping[FacetKey, Mapping[int, ChoiceRow]],
        customer_side: Mapping[FacetKey, Mapping[int, ChoiceRow]],
        customer_slack: Mapping[FacetKey, Mapping[int, Fraction]],
        server_slack: Mapping[FacetKey, Mapping[int, Fraction]],
    ) -> Self:
        # pylint: disable = too-many-arguments
        instance = super().__new__(cls)
        instance._structure = structure
        instance._server_side = {k: dict(v) for k, v in server_side.items()}
        instance._customer_side = {k: dict(v) for k, v in customer_side.items()}
        instance._customer_slack = {k: dict(v) for k, v in customer_slack.items()}
        instance._server_slack = {k: dict(v) for k, v in server_slack.items()}
        instance._samplers = {}
        return instance

    @property
    def structure(self) -> MatchingStructure:
        """The structure the tables were computed for."""
        return self._structure

    @property
    def facet_keys(self) -> typing.Tuple[FacetKey, ...]:
        """Keys of the nonzero facets covered by the tables."""
        return tuple(sorted(self._server_side))

    def server_table(self, facet: Facet) -> typing.Dict[str, typing.Dict[str, Fraction]]:
        """``P[s][c]`` for ``s`` in ``S◎`` and ``c`` in ``C• ∩ C(s)``."""
        st = self._structure
        return {
            st.servers[j]: {st.customers[i]: p for i, p in zip(*row)}
            for j, row in self._server_side[facet.key].items()
        }

    def customer_table(self, facet: Facet) -> typing.Dict[str, typing.Dict[str, Fraction]]:
        """``P[c][s]`` for ``c`` in ``C◎`` and ``s`` in ``S• ∩ S(c)``."""
        st = self._structure
        return {
            st.customers[i]: {st.servers[j]: p for j, p in zip(*row)}
            for i, row in self._customer_side[facet.key].items()
        }

    def customer_slack(self, facet: Facet) -> typing.Dict[str, Fraction]:
        """``eps_c`` for ``c`` in ``C•``."""
        st = self._structure
        return {st.customers[i]: e for i, e in self._customer_slack[facet.key].items()}

    def server_slack(self, facet: Facet) -> typing.Dict[str, Fraction]:
        """``eps_s`` for ``s`` in ``S•``."""
        st = self._structure
        return {st.servers[j]: e for j, e in self._server_slack[facet.key].items()}

    def _row(self, key: FacetKey, side: str, k: int) -> ChoiceRow:
        table = self._server_side if side == "server" else self._customer_side
        try:
            return table[key][k]
        except KeyError:
            raise InvalidStateError(
                f"No flow-policy probabilities for facet {key} and {side} index {k}."
            ) from None

    def _sampler(self, key: FacetKey, side: str, k: int) -> DiscreteSampler:
        sampler = self._samplers.get((key, side, k))
        if sampler is None:
            sampler = DiscreteSampler(self._row(key, side, k)[1])
            self._samplers[(key, side, k)] = sampler
        return sampler


class PolicySpec:
    """
    A matching policy: its kind, plus priority matrices for ``pr`` and
    per-facet tables for ``flow``. Use the constructors :meth:`fifo`,
    :meth:`lifo`, :meth:`random`, :meth:`ml`, :meth:`ms`,
    :meth:`priorities`, :meth:`flow` or :meth:`from_name`.
    """

    _kind: PolicyKind
    _priorities: Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]]
    _tables: Optional[FlowTables]

    __slots__ = ("_kind", "_priorities", "_tables")

    def __new__(
        cls,
        kind: PolicyKind,
        *,
        priorities: Optional[typing.Tuple[Sequence[Sequence[int]], Sequence[Sequence[int]]]] = None,
        tables: Optional[FlowTables] = None,
    ) -> Self:
        if kind not in POLICY_NAMES:
            raise MatchstabError(f"Unknown policy {kind!r}, expected one of {POLICY_NAMES}.")
        if kind == "pr" and priorities is None:
            raise MissingPrioritiesError("The priority policy needs matrices A and B.")
        if kind == "flow" and tables is None:
            raise MatchstabError("The flow policy needs per-facet tables.")
        instance = super().__new__(cls)
        instance._kind = kind
        instance._priorities = None
        if priorities is not None:
            a, b = priorities
            instance._priorities = (
                tuple(tuple(row) for row in a),
                tuple(tuple(row) for row in b),
            )
        instance._tables = tables
        return instance

    @staticmethod
    def fifo() -> PolicySpec:
        """First In, First Out."""
        return PolicySpec("fifo")

    @staticmethod
    def lifo() -> PolicySpec:
        """Last In, First Out."""
        return PolicySpec("lifo")

    @staticmethod
    def random() -> PolicySpec:
        """Buffered partner chosen uniformly among all buffered items (proportional to counts)."""
        return PolicySpec("random")

    @staticmethod
    def ml() -> PolicySpec:
        """Match the Longest: class with the largest buffered count, ties uniform."""
        return PolicySpec("ml")

    @staticmethod
    def ms() -> PolicySpec:
        """Match the Shortest: class with the smallest positive count, ties uniform."""
        return PolicySpec("ms")

    @staticmethod
    def priorities(a: Sequence[Sequence[int]], b: Sequence[Sequence[int]]) -> PolicySpec:
        """Priority policy with customer-side matrix ``A`` and server-side matrix ``B``."""
        return PolicySpec("pr", priorities=(a, b))

    @staticmethod
    def flow(tables: FlowTables) -> PolicySpec:
        """Facet-dependent randomized policy with the given tables."""
        return PolicySpec("flow", tables=tables)

    @staticmethod
    def from_name(
        name: str,
        *,
        priorities: Optional[typing.Tuple[Sequence[Sequence[int]], Sequence[Sequence[int]]]] = None,
        tables: Optional[FlowTables] = None,
    ) -> PolicySpec:
        """
        Policy from its (case-insensitive) name. Raises
        :class:`~matchstab.errors.MissingPrioritiesError` for ``pr`` without
        matrices.
        """
        kind = name.lower()
        if kind not in POLICY_NAMES:
            raise MatchstabError(f"Unknown policy {name!r}, expected one of {POLICY_NAMES}.")
        return PolicySpec(
            typing.cast(PolicyKind, kind),
            priorities=priorities if kind == "pr" else None,
            tables=tables if kind == "flow" else None,
        )

    @property
    def kind(self) -> PolicyKind:
        """Policy name."""
        return self._kind

    @property
    def priority_matrices(self) -> Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]]:
        """Matrices ``(A, B)`` of the priority policy."""
        return self._priorities

    @property
    def tables(self) -> Optional[FlowTables]:
        """Tables of the flow policy."""
        return self._tables

    @property
    def is_word_based(self) -> bool:
        """Whether the policy acts on word states."""
        return self._kind in WORD_POLICIES

    def __repr__(self) -> str:
        return f"PolicySpec({self._kind!r})"

    def __str__(self) -> str:
        return self._kind


def _check_priorities(
    structure: MatchingStructure, priorities: typing.Tuple[PriorityMatrix, PriorityMatrix]
) -> None:
    a, b = priorities
    checks = (
        ("A", a, structure.num_customers, structure.num_servers, structure.server_neighbors_of),
        ("B", b, structure.num_servers, structure.num_customers, structure.customer_neighbors_of),
    )
    for name, matrix, rows, cols, nbrs in checks:
        if len(matrix) != rows or any(len(row) != cols for row in matrix):
            raise _certified_error(
                MatchstabError,
                InvariantCertificate(matrix, f"shape of {name}", f"expected {rows}x{cols}"),
            )
        for r, row in enumerate(matrix):
            support = nbrs(r)
            ranks = sorted(row[k] for k in support)
            off = [row[k] for k in range(cols) if k not in support]
            if ranks != list(range(1, len(support) + 1)) or any(off):
                raise _certified_error(
                    MatchstabError,
                    InvariantCertificate(
                        row,
                        f"row {r} of {name}",
                        "must rank the neighbours 1..n and be zero elsewhere",
                    ),
                )


class Dynamics:
    """
    Index-level implementation of a policy on a structure, shared by the
    public step functions and by the simulator. Counts are mutated in place.
    """

    # pylint: disable = too-many-instance-attributes

    _structure: MatchingStructure
    _policy: PolicySpec
    _server_nbrs: typing.Tuple[typing.Tuple[int, ...], ...]
    _customer_nbrs: typing.Tuple[typing.Tuple[int, ...], ...]
    _server_masks: typing.Tuple[int, ...]

    def __new__(cls, structure: MatchingStructure, policy: PolicySpec) -> Self:
        instance = super().__new__(cls)
        instance._structure = structure
        instance._policy = policy
        instance._server_nbrs = tuple(
            structure.server_neighbors_of(i) for i in range(structure.num_customers)
        )
        instance._customer_nbrs = tuple(
            structure.customer_neighbors_of(j) for j in range(structure.num_servers)
        )
        instance._server_masks = tuple(
            sum(1 << j for j in n) for n in instance._server_nbrs
        )
        if policy.kind == "pr":
            priorities = policy.priority_matrices
            assert priorities is not None
            _check_priorities(structure, priorities)
        if policy.kind == "flow":
            tables = policy.tables
            assert tables is not None
            if tables.structure != structure:
                raise MatchstabError("Flow-policy tables were computed for another structure.")
        return instance

    @property
    def structure(self) -> MatchingStructure:
        """The structure."""
        return self._structure

    @property
    def policy(self) -> PolicySpec:
        """The policy."""
        return self._policy

    def is_edge(self, i: int, j: int) -> bool:
        """Whether customer ``i`` and server ``j`` are matchable."""
        return bool(self._server_masks[i] >> j & 1)

    def buffered_customers(self, x: Sequence[int], j: int) -> typing.List[int]:
        """Buffered customer classes matchable with server ``j``."""
        return [i for i in self._customer_nbrs[j] if x[i]]

    def buffered_servers(self, y: Sequence[int], i: int) -> typing.List[int]:
        """Buffered server classes matchable with customer ``i``."""
        return [j for j in self._server_nbrs[i] if y[j]]

    def _choose(
        self,
        side: str,
        arriving: int,
        candidates: typing.List[int],
        counts: Sequence[int],
        x: Sequence[int],
        y: Sequence[int],
        rng: Optional[RandomStream],
    ) -> int:
        # pylint: disable = too-many-arguments, too-many-return-statements
        if len(candidates) == 1:
            return candidates[0]
        kind = self._policy.kind
        if kind == "pr":
            priorities = self._policy.priority_matrices
            assert priorities is not None
            row = priorities[1][arriving] if side == "server" else priorities[0][arriving]
            return max(candidates, key=lambda k: row[k])
        if rng is None:
            raise MatchstabError(f"Policy {kind} needs a random stream to break choices.")
        if kind == "ml" or kind == "ms":
            best = max(counts[k] for k in candidates) if kind == "ml" else min(
                counts[k] for k in candidates
            )
            ties = [k for k in candidates if counts[k] == best]
            return ties[rng.below(len(ties))] if len(ties) > 1 else ties[0]
        if kind == "random":
            return candidates[weighted_index(rng, [counts[k] for k in candidates])]
        if kind == "flow":
            tables = self._policy.tables
            assert tables is not None
            key = state_key(x, y)
            ordered, _ = tables._row(key, side, arriving)
            assert sorted(ordered) == sorted(candidates), (ordered, candidates)
            return ordered[tables._sampler(key, side, arriving).sample(rng)]
        raise MatchstabError(f"Policy {kind} does not act on commutative states.")

    def _branches(
        self,
        side: str,
        arriving: int,
        candidates: typing.List[int],
        counts: Sequence[int],
        x: Sequence[int],
        y: Sequence[int],
    ) -> typing.List[typing.Tuple[Fraction, int]]:
        # pylint: disable = too-many-arguments
        if len(candidates) == 1:
            return [(Fraction(1), candidates[0])]
        kind = self._policy.kind
        if kind == "pr":
            return [(Fraction(1), self._choose(side, arriving, candidates, counts, x, y, None))]
        if kind == "ml" or kind == "ms":
            best = max(counts[k] for k in candidates) if kind == "ml" else min(
                counts[k] for k in candidates
            )
            ties = [k for k in candidates if counts[k] == best]
            return [(Fraction(1, len(ties)), k) for k in ties]
        if kind == "random":
            total = sum(counts[k] for k in candidates)
            return [(Fraction(counts[k], total), k) for k in candidates]
        if kind == "flow":
            tables = self._policy.tables
            assert tables is not None
            ordered, probs = tables._row(state_key(x, y), side, arriving)
            return list(zip(probs, ordered))
        raise MatchstabError(f"Policy {kind} does not act on commutative states.")

    def step(
        self, x: typing.List[int], y: typing.List[int], i: int, j: int, rng: Optional[RandomStream]
    ) -> int:
        """
        Applies the arrival of customer ``i`` and server ``j`` to the counts
        in place, returning the change in buffer size.
        """
        # pylint: disable = too-many-arguments
        cand_c = [k for k in self._customer_nbrs[j] if x[k]]
        cand_s = [k for k in self._server_nbrs[i] if y[k]]
        if cand_c:
            kc = self._choose("server", j, cand_c, x, x, y, rng)
            if cand_s:
                ks = self._choose("customer", i, cand_s, y, x, y, rng)
                x[kc] -= 1
                y[ks] -= 1
                return -1
            x[kc] -= 1
            x[i] += 1
            return 0
        if cand_s:
            ks = self._choose("customer", i, cand_s, y, x, y, rng)
            y[ks] -= 1
            y[j] += 1
            return 0
        if self._server_masks[i] >> j & 1:
            return 0
        x[i] += 1
        y[j] += 1
        return 1

    def distribution(
        self, state: CommutativeState, i: int, j: int
    ) -> typing.List[typing.Tuple[Fraction, CommutativeState]]:
        """Exact distribution of the next state, one entry per branch."""
        x, y = state.x, state.y
        cand_c = [k for k in self._customer_nbrs[j] if x[k]]
        cand_s = [k for k in self._server_nbrs[i] if y[k]]
        if not cand_c and not cand_s:
            if self._server_masks[i] >> j & 1:
                return [(Fraction(1), state)]
            return [(Fraction(1), _moved(state, add_x=i, add_y=j))]
        c_branches: typing.List[typing.Tuple[Fraction, Optional[int]]] = [(Fraction(1), None)]
        s_branches: typing.List[typing.Tuple[Fraction, Optional[int]]] = [(Fraction(1), None)]
        if cand_c:
            c_branches = list(self._branches("server", j, cand_c, x, x, y))
        if cand_s:
            s_branches = list(self._branches("customer", i, cand_s, y, x, y))
        result: typing.Dict[CommutativeState, Fraction] = {}
        for (pc, kc), (ps, ks) in itertools.product(c_branches, s_branches):
            nxt = _moved(
                state,
                sub_x=kc,
                sub_y=ks,
                add_x=i if kc is not None and ks is None else None,
                add_y=j if ks is not None and kc is None else None,
            )
            result[nxt] = result.get(nxt, Fraction(0)) + pc * ps
        return [(p, s) for s, p in result.items()]

    def successors(self, state: CommutativeState, i: int, j: int) -> typing.FrozenSet[CommutativeState]:
        """All states reachable in one step under any admissible choice."""
        x, y = state.x, state.y
        cand_c = [k for k in self._customer_nbrs[j] if x[k]]
        cand_s = [k for k in self._server_nbrs[i] if y[k]]
        if not cand_c and not cand_s:
            if self._server_masks[i] >> j & 1:
                return frozenset([state])
            return frozenset([_moved(state, add_x=i, add_y=j)])
        options_c: typing.List[Optional[int]] = list(cand_c) if cand_c else [None]
        options_s: typing.List[Optional[int]] = list(cand_s) if cand_s else [None]
        return frozenset(
            _moved(
                state,
                sub_x=kc,
                sub_y=ks,
                add_x=i if kc is not None and ks is None else None,
                add_y=j if ks is not None and kc is None else None,
            )
            for kc in options_c
            for ks in options_s
        )


def _moved(
    state: CommutativeState,
    *,
    sub_x: Optional[int] = None,
    sub_y: Optional[int] = None,
    add_x: Optional[int] = None,
    add_y: Optional[int] = None,
) -> CommutativeState:
    x = list(state.x)
    y = list(state.y)
    if sub_x is not None:
        x[sub_x] -= 1
    if sub_y is not None:
        y[sub_y] -= 1
    if add_x is not None:
        x[add_x] += 1
    if add_y is not None:
        y[add_y] += 1
    return CommutativeState(x, y)


class WordBuffers:
    """
    Word state held as one queue of arrival times per class, so that the
    oldest and youngest eligible items are found in time proportional to
    the number of neighbouring classes. Counts are maintained alongside.
    """

    _dynamics: Dynamics
    _fifo: bool
    _customers: typing.List[typing.Deque[int]]
    _servers: typing.List[typing.Deque[int]]
    _clock: int
    _max_length: int
    x: typing.List[int]
    y: typing.List[int]

    def __new__(cls, dynamics: Dynamics, state: Optional[WordState] = None) -> Self:
        kind = dynamics.policy.kind
        if kind not in WORD_POLICIES:
            raise MatchstabError(f"Policy {kind} does not act on word states.")
        structure = dynamics.structure
        instance = super().__new__(cls)
        instance._dynamics = dynamics
        instance._fifo = kind == "fifo"
        instance._customers = [deque() for _ in structure.customers]
        instance._servers = [deque() for _ in structure.servers]
        instance._clock = 0
        instance._max_length = config.limit("max_word_length")
        instance.x = [0] * structure.num_customers
        instance.y = [0] * structure.num_servers
        if state is not None:
            for c in state.u:
                i = structure.customer_index(c)
                instance._customers[i].append(instance._clock)
                instance.x[i] += 1
                instance._clock += 1
            for s in state.v:
                j = structure.server_index(s)
                instance._servers[j].append(instance._clock)
                instance.y[j] += 1
                instance._clock += 1
        return instance

    def _pop(self, queues: typing.List[typing.Deque[int]], candidates: typing.List[int]) -> int:
        if self._fifo:
            k = min(candidates, key=lambda c: queues[c][0])
            queues[k].popleft()
        else:
            k = max(candidates, key=lambda c: queues[c][-1])
            queues[k].pop()
        return k

    def step(self, i: int, j: int) -> int:
        """Applies the arrival of customer ``i`` and server ``j``, returning the size change."""
        dyn = self._dynamics
        x, y = self.x, self.y
        cand_c = dyn.buffered_customers(x, j)
        cand_s = dyn.buffered_servers(y, i)
        self._clock += 1
        if cand_c:
            kc = self._pop(self._customers, cand_c)
            x[kc] -= 1
            if cand_s:
                ks = self._pop(self._servers, cand_s)
                y[ks] -= 1
                return -1
            self._customers[i].append(self._clock)
            x[i] += 1
            return 0
        if cand_s:
            ks = self._pop(self._servers, cand_s)
            y[ks] -= 1
            self._servers[j].append(self._clock)
            y[j] += 1
            return 0
        if dyn.is_edge(i, j):
            return 0
        total = sum(x)
        if total >= self._max_length:
            raise BufferOverflowError(
                f"Word length would exceed the limit of {self._max_length}."
            )
        self._customers[i].append(self._clock)
        self._servers[j].append(self._clock)
        x[i] += 1
        y[j] += 1
        return 1

    def state(self) -> WordState:
        """The current word state."""
        structure = self._dynamics.structure
        u = sorted(
            (t, structure.customers[i]) for i, q in enumerate(self._customers) for t in q
        )
        v = sorted((t, structure.servers[j]) for j, q in enumerate(self._servers) for t in q)
        return WordState([c for _, c in u], [s for _, s in v])


class Runner:
    """
    A mutable buffer driven by a policy: counts plus, for FIFO and LIFO,
    the per-class arrival queues. Replaying the same arrivals with a stream
    built from the same seed reproduces the same trajectory.
    """

    _dynamics: Dynamics
    _rng: Optional[RandomStream]
    _words: Optional[WordBuffers]
    _x: typing.List[int]
    _y: typing.List[int]

    __slots__ = ("_dynamics", "_rng", "_words", "_x", "_y")

    def __new__(
        cls,
        structure: MatchingStructure,
        policy: PolicySpec,
        state: Optional[BufferState] = None,
        rng: Optional[RandomStream] = None,
    ) -> Self:
        instance = super().__new__(cls)
        instance._dynamics = Dynamics(structure, policy)
        instance._rng = rng
        if state is not None:
            state.validate(structure)
        if policy.is_word_based:
            if isinstance(state, CommutativeState):
                state = WordState.from_counts(structure, state)
            words = WordBuffers(instance._dynamics, state)
            instance._words = words
            instance._x, instance._y = words.x, words.y
        else:
            if isinstance(state, WordState):
                state = state.commutative(structure)
            if state is None:
                state = CommutativeState.empty(structure)
            instance._words = None
            instance._x, instance._y = list(state.x), list(state.y)
        return instance

    @property
    def dynamics(self) -> Dynamics:
        """The underlying policy implementation."""
        return self._dynamics

    @property
    def x(self) -> typing.List[int]:
        """Live customer counts (do not mutate)."""
        return self._x

    @property
    def y(self) -> typing.List[int]:
        """Live server counts (do not mutate)."""
        return self._y

    def step(self, i: int, j: int) -> int:
        """Arrival of customer ``i`` and server ``j``; returns the size change."""
        if self._words is not None:
            return self._words.step(i, j)
        return self._dynamics.step(self._x, self._y, i, j, self._rng)

    def state(self) -> BufferState:
        """Snapshot of the current state (a word state for FIFO and LIFO)."""
        if self._words is not None:
            return self._words.state()
        return CommutativeState(self._x, self._y)

    def counts(self) -> CommutativeState:
        """Snapshot of the current commutative state."""
        return CommutativeState(self._x, self._y)


def _arrival_indices(structure: MatchingStructure, arrival: Pair) -> typing.Tuple[int, int]:
    c, s = arrival
    return structure.customer_index(c), structure.server_index(s)


def step_commutative(
    structure: MatchingStructure,
    state: CommutativeState,
    arrival: Pair,
    policy: PolicySpec,
    rng: Optional[RandomStream] = None,
) -> CommutativeState:
    """
    The state after the arrival of the pair ``arrival = (c, s)`` under a
    policy acting on commutative states (``pr``, ``random``, ``ml``,
    ``ms``, ``flow``). Randomized choices draw from ``rng``.

    Raises :class:`~matchstab.errors.InvalidStateError` on invalid states,
    and :class:`~matchstab.errors.MatchstabError` for word-based policies.
    """
    if policy.is_word_based:
        raise MatchstabError(
            f"Policy {policy.kind} acts on word states, use step_word instead."
        )
    state.validate(structure)
    dynamics = Dynamics(structure, policy)
    i, j = _arrival_indices(structure, arrival)
    x, y = list(state.x), list(state.y)
    dynamics.step(x, y, i, j, rng)
    return CommutativeState(x, y)


def step_word(
    structure: MatchingStructure,
    state: WordState,
    arrival: Pair,
    policy: PolicySpec,
) -> WordState:
    """
    The word state after the arrival of ``arrival = (c, s)`` under FIFO
    (oldest eligible item matched) or LIFO (youngest eligible item matched).

    Raises :class:`~matchstab.errors.InvalidStateError` on invalid states.
    """
    state.validate(structure)
    buffers = WordBuffers(Dynamics(structure, policy), state)
    buffers.step(*_arrival_indices(structure, arrival))
    return buffers.state()


def apply_step(
    structure: MatchingStructure,
    state: BufferState,
    arrival: Pair,
    policy: PolicySpec,
    rng: Optional[RandomStream] = None,
) -> BufferState:
    """
    One step on a commutative or word state, dispatching on the policy.
    Commutative states given to word-based policies are first turned into
    words with classes in canonical order.
    """
    if policy.is_word_based:
        if isinstance(state, CommutativeState):
            state = WordState.from_counts(structure, state)
        return step_word(structure, state, arrival, policy)
    if isinstance(state, WordState):
        state = state.commutative(structure)
    return step_commutative(structure, state, arrival, policy, rng)


def transition_distribution(
    structure: MatchingStructure,
    state: BufferState,
    arrival: Pair,
    policy: PolicySpec,
) -> typing.List[typing.Tuple[Fraction, BufferState]]:
    """
    Exact distribution of the state after one arrival, as
    ``(probability, state)`` branches. Randomized choices of ``ml``, ``ms``
    (ties), ``random`` and ``flow`` are expanded into weighted branches;
    deterministic policies give a single branch.
    """
    if policy.is_word_based:
        if isinstance(state, CommutativeState):
            state = WordState.from_counts(structure, state)
        return [(Fraction(1), step_word(structure, state, arrival, policy))]
    if isinstance(state, WordState):
        state = state.commutative(structure)
    state.validate(structure)
    dynamics = Dynamics(structure, policy)
    i, j = _arrival_indices(structure, arrival)
    return list(dynamics.distribution(state, i, j))


def admissible_successors(
    structure: MatchingStructure, state: CommutativeState, arrival: Pair
) -> typing.FrozenSet[CommutativeState]:
    """
    All states that some admissible policy can produce from ``state`` on
    the arrival ``(c, s)``.
    """
    state.validate(structure)
    dynamics = Dynamics(structure, PolicySpec.ms())
    i, j = _arrival_indices(structure, arrival)
    return dynamics.successors(state, i, j)


def linear_lyapunov(state: BufferState) -> int:
    """Buffer size ``|u|``."""
    return state.total


def quadratic_lyapunov(state: CommutativeState) -> int:
    """Sum of squares of all buffered counts."""
    return sum(k * k for k in state.x) + sum(k * k for k in state.y)


def expected_increment(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    state: BufferState,
    policy: PolicySpec,
    lyapunov: Union[Literal["linear", "quadratic"], Callable[[CommutativeState], int]] = "linear",
) -> Fraction:
    """
    Exact one-step expected change of a Lyapunov function (buffer size,
    sum of squares, or any function of the commutative state).
    """
    fun: Callable[[CommutativeState], int]
    if lyapunov == "linear":
        fun = linear_lyapunov
    elif lyapunov == "quadratic":
        fun = quadratic_lyapunov
    elif callable(lyapunov):
        fun = lyapunov
    else:
        raise ValueError(f"Unknown Lyapunov function {lyapunov!r}.")

    def _value(s: BufferState) -> int:
        return fun(s if isinstance(s, CommutativeState) else s.commutative(structure))

    current = _value(state)
    total = Fraction(0)
    for pair, p in measure.table.items():
        for q, nxt in transition_distribution(structure, state, pair, policy):
            total += p * q * (_value(nxt) - current)
    return total


def _side_tables(
    left: typing.List[int],
    right: typing.List[int],
    left_mu: typing.Callable[[int], Fraction],
    right_mu: typing.Callable[[int], Fraction],
    left_nbrs: typing.Callable[[int], typing.Tuple[int, ...]],
    eta: Fraction,
) -> typing.Tuple[
    typing.Dict[int, ChoiceRow],
    typing.Dict[int, Fraction],
]:
    """
    Choice probabilities of the ``right`` classes (forced-zero side) among
    their ``left`` neighbours (bullet side), from a max flow saturating the
    ``left`` capacities with ``right`` capacities reduced by ``eta``.
    """
    # pylint: disable = too-many-arguments, too-many-locals
    left_set = set(left)
    right_pos = {r: 2 + len(left) + k for k, r in enumerate(right)}
    target = sum((left_mu(l) for l in left), Fraction(0))
    while True:
        if all(right_mu(r) > eta for r in right):
            network = FlowNetwork(Fraction(0), [f"l{l}" for l in left] + [f"r{r}" for r in right])
            for k, l in enumerate(left):
                network.add_arc(FlowNetwork.SOURCE, 2 + k, left_mu(l))
            edge_arcs: typing.Dict[typing.Tuple[int, int], int] = {}
            for k, l in enumerate(left):
                for r in left_nbrs(l):
                    edge_arcs[(l, r)] = network.add_arc(2 + k, right_pos[r], Fraction(2))
            sink_arcs = {
                r: network.add_arc(right_pos[r], FlowNetwork.SINK, right_mu(r) - eta)
                for r in right
            }
            result = max_flow(network)
            if result.value == target:
                break
        eta /= 2
        _log.debug("Halving flow-policy eta to %s.", eta)
    rows: typing.Dict[int, ChoiceRow] = {}
    spare: typing.Dict[int, Fraction] = {}
    for r in right:
        nbrs = tuple(l for l in left if (l, r) in edge_arcs)
        mu_r = right_mu(r)
        through = result.flow[sink_arcs[r]]
        share = (mu_r - through) / len(nbrs)
        spare[r] = share
        rows[r] = (nbrs, tuple((result.flow[edge_arcs[(l, r)]] + share) / mu_r for l in nbrs))
    slack = {
        l: sum((spare[r] for r in left_nbrs(l)), Fraction(0)) for l in left
    }
    assert all(r in right_pos for l in left_set for r in left_nbrs(l))
    return rows, slack


def flow_policy_table(structure: MatchingStructure, measure: ArrivalMeasure) -> FlowTables:
    """
    Per-facet probabilities of the facet-dependent flow policy.

    For each nonzero facet, a max flow from ``C•`` (capacities ``mu_C(c)``)
    to ``S◎`` (capacities ``mu_S(s) - eta``, ``eta`` halved until the
    ``C•`` capacities are saturated) gives flows ``T``; a server ``s`` in
    ``S◎`` then picks ``c`` in ``C• ∩ C(s)`` with probability
    ``(T(c,s) + (mu_S(s) - T(s,f)) / |C• ∩ C(s)|) / mu_S(s)``. The customer
    side is symmetric. With these probabilities every ``c`` in ``C•``
    leaves at rate ``mu_C(c) + eps_c`` with ``eps_c > 0``.

    Raises :class:`~matchstab.errors.NCondViolatedError` if the measure
    does not satisfy the strict necessary conditions.
    """
    # pylint: disable = too-many-locals
    mu_c = measure.customer_marginal
    mu_s = measure.server_marginal
    certificate = ncond_certificate(structure, mu_c, mu_s)
    if certificate is not None:
        raise _certified_error(NCondViolatedError, certificate)
    vec_c = [mu_c[c] for c in structure.customers]
    vec_s = [mu_s[s] for s in structure.servers]
    n_e = len(structure.matching_edges)
    eta0 = Fraction(1, 2 * n_e * measure.max_denominator())
    server_side: typing.Dict[FacetKey, typing.Dict[int, ChoiceRow]] = {}
    customer_side: typing.Dict[FacetKey, typing.Dict[int, ChoiceRow]] = {}
    customer_slack: typing.Dict[FacetKey, typing.Dict[int, Fraction]] = {}
    server_slack: typing.Dict[FacetKey, typing.Dict[int, Fraction]] = {}
    for facet in enumerate_facets(structure):
        if facet.is_zero:
            continue
        c_bullet, s_bullet, c_forced, s_forced, _, _ = facet.masks
        bullets_c = [i for i in range(structure.num_customers) if c_bullet >> i & 1]
        forced_s = [j for j in range(structure.num_servers) if s_forced >> j & 1]
        rows_s, slack_c = _side_tables(
            bullets_c,
            forced_s,
            lambda i: vec_c[i],
            lambda j: vec_s[j],
            structure.server_neighbors_of,
            eta0,
        )
        bullets_s = [j for j in range(structure.num_servers) if s_bullet >> j & 1]
        forced_c = [i for i in range(structure.num_customers) if c_forced >> i & 1]
        rows_c, slack_s = _side_tables(
            bullets_s,
            forced_c,
            lambda j: vec_s[j],
            lambda i: vec_c[i],
            structure.customer_neighbors_of,
            eta0,
        )
        server_side[facet.key] = rows_s
        customer_side[facet.key] = rows_c
        customer_slack[facet.key] = slack_c
        server_slack[facet.key] = slack_s
    _log.info("Computed flow-policy tables for %d facets.", len(server_side))
    return FlowTables(structure, server_side, customer_side, customer_slack, server_slack)
