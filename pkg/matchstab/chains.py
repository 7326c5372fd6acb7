"""
    Markov-chain analytics: the auxiliary birth-death chain on the integers
    that tracks customers of class 2 minus servers of class 2' on deep NN
    facets, the resulting drift of the NN priority counterexample, and
    exact or truncated stationary distributions of buffer chains.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
import logging
import sys
import typing
from typing import Any, NamedTuple, Optional, Union

if sys.version_info[1] >= 9:
    from collections.abc import Sequence
else:
    from typing import Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
import numpy.typing as npt
import scipy.sparse
import scipy.sparse.linalg

from . import config
from .certificates import InvariantCertificate
from .errors import (
    MatchstabError,
    NotNNModelError,
    NotPositiveRecurrentError,
    StateSpaceTooLargeError,
    _certified_error,
)
from .model import NN, ArrivalMeasure, MatchingStructure, format_rational, parse_rational, RationalLike
from .policies import (
    BufferState,
    CommutativeState,
    Dynamics,
    PolicySpec,
    WordBuffers,
    WordState,
)

_log = logging.getLogger(__name__)

Triple = typing.Tuple[Fraction, Fraction, Fraction]


class ZChainParams:
    """
    Transition probabilities of the auxiliary chain on the integers:
    ``a`` below zero, ``b`` at zero and ``c`` above zero, each triple
    giving the probabilities of moving by ``-1``, ``0`` and ``+1``.
    """

    _a: Triple
    _b: Triple
    _c: Triple

    __slots__ = ("_a", "_b", "_c")

    def __new__(
        cls,
        a: Sequence[RationalLike],
        b: Sequence[RationalLike],
        c: Sequence[RationalLike],
    ) -> Self:
        triples = []
        for name, raw in (("a", a), ("b", b), ("c", c)):
            if len(raw) != 3:
                raise MatchstabError(f"Parameter {name} must have 3 entries.")
            triple = typing.cast(Triple, tuple(parse_rational(p) for p in raw))
            if sum(triple) != 1 or any(p < 0 for p in triple):
                raise _certified_error(
                    MatchstabError,
                    InvariantCertificate(
                        triple, f"{name} is a distribution", "entries must be nonnegative and sum to 1"
                    ),
                )
            if triple[0] == 0 or triple[2] == 0:
                raise _certified_error(
                    MatchstabError,
                    InvariantCertificate(
                        triple, f"{name} moves both ways", "jump probabilities must be positive"
                    ),
                )
            triples.append(triple)
        instance = super().__new__(cls)
        instance._a, instance._b, instance._c = triples
        return instance

    @property
    def a(self) -> Triple:
        """``(a_-1, a_0, a_1)``, transitions from negative states."""
        return self._a

    @property
    def b(self) -> Triple:
        """``(b_-1, b_0, b_1)``, transitions from zero."""
        return self._b

    @property
    def c(self) -> Triple:
        """``(c_-1, c_0, c_1)``, transitions from positive states."""
        return self._c

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ZChainParams):
            return NotImplemented
        return (self._a, self._b, self._c) == (other._a, other._b, other._c)

    def __hash__(self) -> int:
        return hash((self._a, self._b, self._c))

    def __repr__(self) -> str:
        def _t(t: Triple) -> str:
            return "(" + ", ".join(format_rational(p) for p in t) + ")"

        return f"ZChainParams(a={_t(self._a)}, b={_t(self._b)}, c={_t(self._c)})"


class ZChainStationary(NamedTuple):
    """Closed-form stationary distribution of the auxiliary chain."""

    pi_zero: Fraction
    pi_pos: Fraction
    pi_neg: Fraction
    pos_ratio: Fraction
    neg_ratio: Fraction


class CounterexampleDrift(NamedTuple):
    """
    Expected change of ``X_2 + X_3`` below, at and above zero, and their
    average under the stationary distribution of the auxiliary chain.
    """

    alpha: Fraction
    beta: Fraction
    gamma: Fraction
    composite: Fraction


def is_nn_structure(structure: MatchingStructure) -> bool:
    """Whether ``structure`` has the classes and matching edges of :data:`NN`."""
    return (
        structure.customers == NN.customers
        and structure.servers == NN.servers
        and structure.matching_edges == NN.matching_edges
    )


def _check_nn_full_support(measure: ArrivalMeasure) -> None:
    structure = measure.structure
    if not is_nn_structure(structure):
        raise NotNNModelError("Expected the NN structure with classes 1,2,3 and 1',2',3'.")
    if len(measure.support()) != structure.num_customers * structure.num_servers:
        raise NotNNModelError("Expected a measure with full support C x S.")


def z_chain_params_nn(measure: ArrivalMeasure) -> ZChainParams:
    """
    Parameters of the auxiliary chain followed by ``X_2 - Y_2`` on the NN
    model under the priority policy, while ``X_2 + X_3 > 0``.

    Raises :class:`~matchstab.errors.NotNNModelError` unless ``measure`` is
    a full-support measure on :data:`NN`.
    """
    _check_nn_full_support(measure)

    def mu(*pairs: str) -> Fraction:
        return sum((measure[(p[0], p[1:])] for p in pairs), Fraction(0))

    a = (mu("32'"), mu("12'", "22'", "31'", "33'"), mu("11'", "13'", "21'", "23'"))
    b = (mu("12'", "32'"), mu("11'", "13'", "22'", "31'", "33'"), mu("21'", "23'"))
    c = (mu("11'", "12'", "31'", "32'"), mu("13'", "21'", "22'", "33'"), mu("23'"))
    return ZChainParams(a, b, c)


def z_chain_is_positive_recurrent(params: ZChainParams) -> bool:
    """Whether ``a_-1 < a_1`` and ``c_1 < c_-1``."""
    return params.a[0] < params.a[2] and params.c[2] < params.c[0]


def _check_recurrent(params: ZChainParams) -> None:
    if not z_chain_is_positive_recurrent(params):
        raise _certified_error(
            NotPositiveRecurrentError,
            InvariantCertificate(
                params,
                "positive recurrence",
                f"needs a_-1 < a_1 and c_1 < c_-1, found a={params.a[0]},{params.a[2]} "
                f"c={params.c[2]},{params.c[0]}",
            ),
        )


def z_chain_stationary(params: ZChainParams) -> ZChainStationary:
    """
    Stationary masses of zero, of the positive and of the negative
    integers, with the geometric tail ratios ``c_1/c_-1`` and ``a_-1/a_1``.

    Raises :class:`~matchstab.errors.NotPositiveRecurrentError` if the
    chain is not positive recurrent.
    """
    _check_recurrent(params)
    (a_m, _, a_p), (b_m, _, b_p), (c_m, _, c_p) = params.a, params.b, params.c
    pi_zero = 1 / (1 + b_m / (a_p - a_m) + b_p / (c_m - c_p))
    return ZChainStationary(
        pi_zero=pi_zero,
        pi_pos=pi_zero * b_p / (c_m - c_p),
        pi_neg=pi_zero * b_m / (a_p - a_m),
        pos_ratio=c_p / c_m,
        neg_ratio=a_m / a_p,
    )


def z_chain_probability(params: ZChainParams, x: int) -> Fraction:
    """Exact stationary probability of the integer ``x``."""
    st = z_chain_stationary(params)
    if x == 0:
        return st.pi_zero
    if x > 0:
        return st.pi_zero * params.b[2] / params.c[2] * st.pos_ratio**x
    return st.pi_zero * params.b[0] / params.a[0] * st.neg_ratio ** (-x)


def z_chain_kernel(params: ZChainParams, cap: int) -> typing.Tuple[typing.List[int], scipy.sparse.csr_matrix]:
    """
    States ``-cap..cap`` and the transition matrix of the auxiliary chain
    restricted to them, jumps beyond the boundary redirected to zero.
    """
    if cap < 1:
        raise ValueError("Cap must be positive.")
    states = list(range(-cap, cap + 1))
    rows: typing.List[int] = []
    cols: typing.List[int] = []
    vals: typing.List[float] = []
    for k, x in enumerate(states):
        triple = params.a if x < 0 else params.b if x == 0 else params.c
        for step, p in zip((-1, 0, 1), triple):
            target = x + step
            if abs(target) > cap:
                target = 0
            rows.append(k)
            cols.append(target + cap)
            vals.append(float(p))
    n = len(states)
    kernel = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return states, kernel


def nn_counterexample_drift(measure: ArrivalMeasure) -> CounterexampleDrift:
    """
    Expected one-step change of ``X_2 + X_3`` on the NN model under the
    priority policy when ``X_2 - Y_2`` is negative (``alpha``), zero
    (``beta``) or positive (``gamma``), and the composite drift
    ``pi(Z-) alpha + pi(0) beta + pi(Z+) gamma``. A positive composite
    drift means the buffer chain is transient.

    Raises :class:`~matchstab.errors.NotPositiveRecurrentError` if the
    auxiliary chain is not positive recurrent.
    """
    params = z_chain_params_nn(measure)
    st = z_chain_stationary(params)

    def mu(c: str, s: str) -> Fraction:
        return measure[(c, s)]

    alpha = mu("3", "2'") + mu("3", "3'") - mu("1", "1'") - mu("2", "1'")
    beta = mu("2", "3'") + mu("3", "2'") + mu("3", "3'") - mu("1", "1'")
    gamma = mu("2", "3'") + mu("3", "3'") - mu("1", "1'") - mu("1", "2'")
    composite = st.pi_neg * alpha + st.pi_zero * beta + st.pi_pos * gamma
    _log.debug("Composite drift %s.", composite)
    return CounterexampleDrift(alpha, beta, gamma, composite)


def ms_counterexample_statistic(state: CommutativeState) -> int:
    """``min(X_3 - X_2, Y_3 - Y_2)`` for a state of the NN model."""
    x, y = state.x, state.y
    return min(x[2] - x[1], y[2] - y[1])


def solve_stationary(kernel: Union[scipy.sparse.spmatrix, npt.NDArray[np.float64]]) -> npt.NDArray[np.float64]:
    """
    Stationary vector of a row-stochastic matrix with a single recurrent
    class: a sparse direct solve of ``pi (P - I) = 0``, ``sum(pi) = 1`` up to
    the ``dense_solve_limit`` number of states, power iteration with
    tolerance ``power_iteration_tol`` beyond.
    """
    p = scipy.sparse.csr_matrix(kernel)
    n = p.shape[0]
    if n <= config.limit("dense_solve_limit"):
        a = (p.T - scipy.sparse.identity(n, format="csr")).tolil()
        a[n - 1, :] = np.ones(n)
        rhs = np.zeros(n)
        rhs[n - 1] = 1.0
        pi = scipy.sparse.linalg.spsolve(a.tocsc(), rhs)
    else:
        tol = config.limit("power_iteration_tol")
        pi = np.full(n, 1.0 / n)
        pt = p.T.tocsr()
        it = 0
        for it in range(config.limit("power_iteration_max_iter")):
            new = pt @ pi
            if np.abs(new - pi).sum() < tol:
                pi = new
                break
            pi = new
        else:
            raise MatchstabError("Power iteration did not converge.")
        _log.debug("Power iteration converged after %d iterations.", it)
    pi = np.clip(np.atleast_1d(np.asarray(pi, dtype=np.float64)), 0.0, None)
    return typing.cast(npt.NDArray[np.float64], pi / pi.sum())


def _word_successors(
    dynamics: Dynamics, state: WordState, i: int, j: int
) -> WordState:
    buffers = WordBuffers(dynamics, state)
    buffers.step(i, j)
    return buffers.state()


def _transitions(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    dynamics: Dynamics,
    state: BufferState,
) -> typing.List[typing.Tuple[Fraction, BufferState]]:
    out: typing.List[typing.Tuple[Fraction, BufferState]] = []
    for (c, s), p in measure.table.items():
        i, j = structure.customer_index(c), structure.server_index(s)
        if isinstance(state, WordState):
            out.append((p, _word_successors(dynamics, state, i, j)))
        else:
            out.extend((p * q, nxt) for q, nxt in dynamics.distribution(state, i, j))
    return out


def _empty_state(structure: MatchingStructure, policy: PolicySpec) -> BufferState:
    if policy.is_word_based:
        return WordState((), ())
    return CommutativeState.empty(structure)


def truncated_stationary(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    policy: PolicySpec,
    cap: int,
) -> typing.Dict[BufferState, float]:
    """
    Stationary distribution of the buffer chain truncated at total buffer
    ``cap``: transitions that would exceed the cap go to the empty state
    instead. Randomized choices are expanded into weighted kernel branches;
    FIFO and LIFO are solved exactly on word states.

    Raises :class:`~matchstab.errors.StateSpaceTooLargeError` beyond the
    ``max_states`` limit.
    """
    if cap < 1:
        raise ValueError("Cap must be positive.")
    dynamics = Dynamics(structure, policy)
    max_states = config.limit("max_states")
    empty = _empty_state(structure, policy)
    index: typing.Dict[BufferState, int] = {empty: 0}
    order: typing.List[BufferState] = [empty]
    rows: typing.List[int] = []
    cols: typing.List[int] = []
    vals: typing.List[float] = []
    queue: typing.Deque[BufferState] = deque([empty])
    while queue:
        state = queue.popleft()
        k = index[state]
        for p, nxt in _transitions(structure, measure, dynamics, state):
            if nxt.total > cap:
                nxt = empty
            target = index.get(nxt)
            if target is None:
                if len(order) >= max_states:
                    raise StateSpaceTooLargeError(
                        f"Truncated chain exceeds {max_states} states at cap {cap}."
                    )
                target = index[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            rows.append(k)
            cols.append(target)
            vals.append(float(p))
    n = len(order)
    _log.info("Truncated kernel at cap %d has %d states.", cap, n)
    kernel = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    pi = solve_stationary(kernel)
    return {state: float(pi[k]) for k, state in enumerate(order)}


def mean_buffer(distribution: typing.Mapping[BufferState, float]) -> float:
    """Expected total buffer size under a distribution over states."""
    return sum(p * s.total for s, p in distribution.items())


def reach_set(
    structure: MatchingStructure,
    measure: ArrivalMeasure,
    policy: Optional[PolicySpec],
    cap: int,
) -> typing.FrozenSet[CommutativeState]:
    """
    Commutative states reachable from the empty state through
    positive-probability transitions without exceeding total buffer
    ``cap``. With no policy, every admissible choice is followed.

    Raises :class:`~matchstab.errors.StateSpaceTooLargeError` beyond the
    ``max_states`` limit.
    """
    max_states = config.limit("max_states")
    dynamics = Dynamics(structure, policy if policy is not None else PolicySpec.ms())
    empty = _empty_state(structure, policy) if policy is not None else CommutativeState.empty(structure)
    seen: typing.Set[BufferState] = {empty}
    queue: typing.Deque[BufferState] = deque([empty])
    while queue:
        state = queue.popleft()
        if policy is None:
            assert isinstance(state, CommutativeState)
            succ: typing.List[BufferState] = []
            for c, s in measure.support():
                i, j = structure.customer_index(c), structure.server_index(s)
                succ.extend(dynamics.successors(state, i, j))
        else:
            succ = [nxt for _, nxt in _transitions(structure, measure, dynamics, state)]
        for nxt in succ:
            if nxt.total > cap or nxt in seen:
                continue
            if len(seen) >= max_states:
                raise StateSpaceTooLargeError(f"Reach set exceeds {max_states} states.")
            seen.add(nxt)
            queue.append(nxt)
    return frozenset(
        s if isinstance(s, CommutativeState) else s.commutative(structure) for s in seen
    )
