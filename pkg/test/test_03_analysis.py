# pylint: disable = missing-docstring

from fractions import Fraction
import itertools
import typing

import numpy as np
import pytest

from matchstab.analysis import (
    apply_arrivals,
    check_scond,
    construct_stable_measure,
    drain_to_empty,
    is_stable_structure,
    linear_drift,
    pairing_digraph,
    stable_structure_certificate,
    strong_components,
)
from matchstab.certificates import InvariantCertificate, UnreachablePairCertificate, get_certificate
from matchstab.chains import reach_set
from matchstab.config import limits
from matchstab.errors import (
    DrainFailedError,
    InvalidStateError,
    MatchstabError,
    NotStronglyConnectedError,
    UnstableStructureError,
    ZeroFacetError,
)
from matchstab.facets import classify_facet, enumerate_facets
from matchstab.flow import check_ncond
from matchstab.model import (
    NN,
    NN_FANTI,
    NN_FDIAG,
    NN_PRIORITIES,
    NNN,
    ArrivalMeasure,
    MatchingStructure,
    complete_structure,
    product_measure,
    symmetric_nn_measure,
    uniform_measure,
)
from matchstab.policies import CommutativeState, PolicySpec, flow_policy_table
from matchstab.rng import RandomStream

_f = Fraction


def test_pairing_digraph_nn() -> None:
    digraph = pairing_digraph(NN)
    assert digraph.num_nodes == 6
    assert digraph.num_arcs == 5 + 9
    # customer 3 -> server 1'
    assert digraph.successors(2) == (3,)
    assert digraph.label(3) == "1'"


_stable_cases = [
    (NN, True),
    (NN_FDIAG, True),
    (NN_FANTI, False),
    (NNN, True),
    (complete_structure(1, 1), True),
]


@pytest.mark.parametrize("structure, stable", _stable_cases)
def test_is_stable_structure(structure: MatchingStructure, stable: bool) -> None:
    assert is_stable_structure(structure) is stable
    assert (stable_structure_certificate(structure) is None) is stable
    assert (len(strong_components(pairing_digraph(structure))) == 1) is stable


def test_unstable_certificate() -> None:
    certificate = stable_structure_certificate(NN_FANTI)
    assert isinstance(certificate, UnreachablePairCertificate)
    digraph = pairing_digraph(NN_FANTI)
    source = NN_FANTI.customer_index(certificate.source)
    target = NN_FANTI.num_customers + NN_FANTI.server_index(certificate.target)
    assert target not in digraph.reachable(source)


def test_certificate_rich_print(capsys: pytest.CaptureFixture[str]) -> None:
    certificate = stable_structure_certificate(NN_FANTI)
    assert certificate is not None
    certificate.rich_print()
    out = capsys.readouterr().out
    assert "Certificate" in out
    assert "no directed path" in out


def test_strong_components_partition() -> None:
    components = strong_components(pairing_digraph(NN_FANTI))
    nodes = sorted(n for component in components for n in component)
    assert nodes == list(range(6))
    assert len(components) > 1


def test_construct_stable_measure_fdiag() -> None:
    measure = construct_stable_measure(NN_FDIAG)
    assert measure.table == {
        ("1", "1'"): _f(2, 5),
        ("2", "2'"): _f(2, 5),
        ("3", "3'"): _f(1, 5),
    }


def test_construct_stable_measure_single_edge() -> None:
    measure = construct_stable_measure(complete_structure(1, 1))
    assert measure.table == {("1", "1'"): _f(1)}


@pytest.mark.parametrize("structure", [NN, NNN, NN_FDIAG, complete_structure(2, 3)])
def test_construct_stable_measure_ncond(structure: MatchingStructure) -> None:
    measure = construct_stable_measure(structure)
    assert set(measure.support()) == set(structure.arrival_edges)
    assert check_ncond(structure, measure.customer_marginal, measure.server_marginal)


def test_construct_stable_measure_fanti() -> None:
    with pytest.raises(NotStronglyConnectedError) as info:
        construct_stable_measure(NN_FANTI)
    assert isinstance(get_certificate(info.value), UnreachablePairCertificate)


_marginal = ("2/5", "2/5", "1/5")

_drift_cases = [
    (["3"], ["3'"], _f(1, 25)),
    (["2"], ["3'"], _f(-1, 5)),
    (["1"], ["1'"], _f(-1, 5)),
]


@pytest.mark.parametrize("customers, servers, drift", _drift_cases)
def test_linear_drift(customers: typing.List[str], servers: typing.List[str], drift: Fraction) -> None:
    measure = product_measure(NN, _marginal, _marginal)
    facet = classify_facet(NN, customers, servers)
    assert linear_drift(NN, measure, facet) == drift


def test_linear_drift_saturated_two_classes() -> None:
    structure = MatchingStructure(["1", "2"], ["1'", "2'"], [("1", "2'"), ("2", "1'"), ("2", "2'")])
    facet = classify_facet(structure, ["1"], ["1'"])
    assert facet.forced_zero_customers == ("2",) and facet.forced_zero_servers == ("2'",)
    assert facet.is_saturated()
    measure = product_measure(structure, ["1/4", "3/4"], ["1/4", "3/4"])
    assert linear_drift(structure, measure, facet) == _f(-1, 2)


def test_linear_drift_zero_facet() -> None:
    measure = product_measure(NN, _marginal, _marginal)
    with pytest.raises(ZeroFacetError):
        linear_drift(NN, measure, classify_facet(NN, [], []))


def test_check_scond_holds() -> None:
    measure = symmetric_nn_measure("9/20", "2/5")
    ok, reports = check_scond(NN, measure)
    assert ok
    assert len(reports) == len(enumerate_facets(NN)) - 1
    assert all(r.linear_drift < 0 for r in reports)


def test_check_scond_fails_on_one_facet() -> None:
    measure = symmetric_nn_measure("2/5", "2/5")
    ok, reports = check_scond(NN, measure)
    assert not ok
    failing = [r.facet.label() for r in reports if not r.scond_satisfied]
    assert failing == ["({3},{3'})"]


def test_check_scond_nnn_uniform() -> None:
    ok, _ = check_scond(NNN, uniform_measure(NNN))
    assert not ok


def test_drain_fdiag() -> None:
    measure = construct_stable_measure(NN_FDIAG)
    state = CommutativeState((1, 0, 0), (1, 0, 0))
    assert drain_to_empty(NN_FDIAG, measure, state) == [("2", "2'")]


def test_drain_empty_state() -> None:
    measure = construct_stable_measure(NN_FDIAG)
    assert drain_to_empty(NN_FDIAG, measure, CommutativeState.empty(NN_FDIAG)) == []


def test_drain_unstable_structure() -> None:
    measure = uniform_measure(NN_FANTI)
    with pytest.raises(UnstableStructureError) as info:
        drain_to_empty(NN_FANTI, measure, CommutativeState((0, 0, 1), (0, 0, 1)))
    assert isinstance(get_certificate(info.value), UnreachablePairCertificate)


def test_drain_invalid_state() -> None:
    measure = product_measure(NN, _marginal, _marginal)
    with pytest.raises(InvalidStateError):
        drain_to_empty(NN, measure, CommutativeState((1, 0, 0), (0, 1, 0)))


_drain_states = [
    ((0, 0, 2), (0, 0, 2)),
    ((0, 1, 1), (0, 0, 2)),
    ((0, 0, 3), (0, 1, 2)),
    ((2, 0, 0), (2, 0, 0)),
]


@pytest.mark.parametrize("x, y", _drain_states)
def test_drain_works_for_every_policy(x: typing.Tuple[int, ...], y: typing.Tuple[int, ...]) -> None:
    measure = product_measure(NN, _marginal, _marginal)
    state = CommutativeState(x, y)
    sequence = drain_to_empty(NN, measure, state)
    assert all(pair in measure.table for pair in sequence)
    policies = [
        PolicySpec.fifo(),
        PolicySpec.lifo(),
        PolicySpec.ml(),
        PolicySpec.ms(),
        PolicySpec.random(),
        PolicySpec.priorities(*NN_PRIORITIES),
        PolicySpec.flow(flow_policy_table(NN, measure)),
    ]
    for policy in policies:
        for seed in range(3):
            final = apply_arrivals(NN, state, sequence, policy, RandomStream(seed))
            assert final.is_empty, (policy, seed)


@pytest.mark.parametrize("name", ["fifo", "lifo", "ml", "ms", "random", "pr"])
def test_drain_with_policy_replays(name: str) -> None:
    measure = product_measure(NN, _marginal, _marginal)
    policy = PolicySpec.from_name(name, priorities=NN_PRIORITIES)
    state = CommutativeState((0, 1, 3), (0, 0, 4))
    for seed in (None, 5):
        sequence = drain_to_empty(NN, measure, state, policy, seed)
        final = apply_arrivals(NN, state, sequence, policy, RandomStream(seed or 0))
        assert final.is_empty


def test_drain_fdiag_every_policy() -> None:
    measure = construct_stable_measure(NN_FDIAG)
    state = CommutativeState((0, 0, 2), (0, 0, 2))
    sequence = drain_to_empty(NN_FDIAG, measure, state)
    for policy in (PolicySpec.fifo(), PolicySpec.ml(), PolicySpec.ms()):
        assert apply_arrivals(NN_FDIAG, state, sequence, policy, RandomStream(1)).is_empty


def test_drain_block_limit() -> None:
    measure = product_measure(NN, _marginal, _marginal)
    with limits(drain_max_blocks=1):
        with pytest.raises(DrainFailedError):
            drain_to_empty(NN, measure, CommutativeState((0, 0, 2), (0, 0, 2)))


def test_drain_branch_limit_certificate() -> None:
    measure = product_measure(NN, _marginal, _marginal)
    with limits(drain_max_branches=0):
        with pytest.raises(DrainFailedError) as info:
            drain_to_empty(NN, measure, CommutativeState((0, 1, 3), (0, 0, 4)))
    certificate = get_certificate(info.value)
    assert isinstance(certificate, InvariantCertificate)
    assert certificate.invariant == "drain"


def _random_structure(rng: np.random.Generator) -> MatchingStructure:
    while True:
        k, l = (int(n) for n in rng.integers(1, 5, size=2))
        customers = [str(i + 1) for i in range(k)]
        servers = [f"{j + 1}'" for j in range(l)]
        pairs = list(itertools.product(customers, servers))
        edges = [p for p, keep in zip(pairs, rng.random(len(pairs)) < 0.5) if keep]
        arrivals = [p for p, keep in zip(pairs, rng.random(len(pairs)) < 0.6) if keep]
        try:
            return MatchingStructure(customers, servers, edges, arrivals)
        except MatchstabError:
            continue


def _random_measure(structure: MatchingStructure, rng: np.random.Generator) -> ArrivalMeasure:
    weights = [int(w) for w in rng.integers(1, 20, size=len(structure.arrival_edges))]
    total = sum(weights)
    return ArrivalMeasure(
        structure, {pair: _f(w, total) for pair, w in zip(structure.arrival_edges, weights)}
    )


def _check_stable_structures(num_structures: int, num_measures: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(num_structures):
        structure = _random_structure(rng)
        stable = len(strong_components(pairing_digraph(structure))) == 1
        assert is_stable_structure(structure) is stable
        if stable:
            measure = construct_stable_measure(structure)
            assert check_ncond(structure, measure.customer_marginal, measure.server_marginal)
            continue
        for _ in range(num_measures):
            measure = _random_measure(structure, rng)
            assert not check_ncond(structure, measure.customer_marginal, measure.server_marginal)


def test_stable_structures_random() -> None:
    _check_stable_structures(40, 10, 0)


@pytest.mark.slow
def test_stable_structures_random_full() -> None:
    _check_stable_structures(500, 50, 1)


def _check_nnn_scond(num_measures: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(num_measures):
        measure = _random_measure(NNN, rng)
        ok, reports = check_scond(NNN, measure)
        assert not ok
        assert any(not r.scond_satisfied for r in reports)


def test_nnn_scond_never_holds() -> None:
    _check_nnn_scond(50, 0)


@pytest.mark.slow
def test_nnn_scond_never_holds_full() -> None:
    _check_nnn_scond(1000, 1)


_drain_cases = [
    (NN, ["fifo", "lifo", "pr", "random", "ml", "ms"]),
    (NN_FDIAG, ["fifo", "lifo", "pr", "random", "ml", "ms"]),
]


@pytest.mark.slow
@pytest.mark.parametrize("structure, names", _drain_cases)
def test_drain_random_reachable_states(structure: MatchingStructure, names: typing.List[str]) -> None:
    measure = construct_stable_measure(structure)
    states = sorted(reach_set(structure, measure, None, 6))
    rng = np.random.default_rng(0)
    picks = rng.choice(len(states), size=min(500, len(states)), replace=False)
    for name in names:
        policy = PolicySpec.from_name(name, priorities=NN_PRIORITIES)
        for k in picks:
            state = states[int(k)]
            seed = int(k)
            sequence = drain_to_empty(structure, measure, state, policy, seed)
            assert all(pair in measure.table for pair in sequence)
            final = apply_arrivals(structure, state, sequence, policy, RandomStream(seed))
            assert final.is_empty, (name, state)


_robust_drain_cases = [
    (NN, ["fifo", "lifo", "pr", "random", "ml", "ms"]),
    (NN_FDIAG, ["fifo", "lifo", "pr", "random", "ml", "ms"]),
    (NNN, ["fifo", "lifo", "random", "ml", "ms"]),
]


def _check_robust_drain(
    structure: MatchingStructure, names: typing.List[str], cap: int, num_states: int
) -> None:
    measure = construct_stable_measure(structure)
    states = sorted(reach_set(structure, measure, None, cap))
    rng = np.random.default_rng(0)
    picks = rng.choice(len(states), size=min(num_states, len(states)), replace=False)
    policies = [PolicySpec.from_name(name, priorities=NN_PRIORITIES) for name in names]
    for k in picks:
        state = states[int(k)]
        sequence = drain_to_empty(structure, measure, state)
        assert all(pair in measure.table for pair in sequence)
        for name, policy in zip(names, policies):
            for seed in range(3):
                final = apply_arrivals(structure, state, sequence, policy, RandomStream(seed))
                assert final.is_empty, (name, seed, state)


@pytest.mark.parametrize("structure, names", _robust_drain_cases)
def test_drain_one_sequence_every_policy(structure: MatchingStructure, names: typing.List[str]) -> None:
    _check_robust_drain(structure, names, 3, 20)


@pytest.mark.slow
@pytest.mark.parametrize("structure, names", _robust_drain_cases)
def test_drain_one_sequence_every_policy_full(
    structure: MatchingStructure, names: typing.List[str]
) -> None:
    _check_robust_drain(structure, names, 6, 500)
