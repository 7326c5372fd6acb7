# pylint: disable = missing-docstring

from fractions import Fraction
import itertools
import typing

import numpy as np
import pytest

from matchstab.certificates import SubsetCertificate, get_certificate
from matchstab.errors import (
    MatchstabError,
    NCondViolatedError,
    NotADistributionError,
    UnequalTotalsError,
)
from matchstab.flow import (
    EtaValue,
    FlowNetwork,
    check_ncond,
    check_ncond_leq,
    max_flow,
    min_cut,
    ncond_bruteforce,
    ncond_certificate,
    ncond_leq_bruteforce,
    perfect_matching,
    plain_network,
    positive_flow,
)
from matchstab.model import (
    NN,
    NNN,
    ArrivalMeasure,
    MatchingStructure,
    almost_complete_structure,
    complete_structure,
)

_f = Fraction


def test_eta_value_order() -> None:
    assert EtaValue(1, -5) < EtaValue(1, -4) < EtaValue(1)
    assert EtaValue(0, 1) > EtaValue(0)
    assert EtaValue("1/2", 3) - EtaValue("1/2", 1) == EtaValue(0, 2)
    assert EtaValue(1, -2).scale(_f(1, 2)) == EtaValue(_f(1, 2), -1)
    assert EtaValue(1, -2).substitute(_f(1, 10)) == _f(4, 5)
    assert str(EtaValue(1, -5)) == "1 - 5η"


def test_max_flow_nn() -> None:
    marginal = [_f(2, 5), _f(2, 5), _f(1, 5)]
    result = max_flow(plain_network(NN, marginal, marginal))
    assert result.value == 1
    assert result.cut_capacity == 1


def test_max_flow_zero_capacities() -> None:
    network: FlowNetwork[Fraction] = FlowNetwork(_f(0), ["a", "b"])
    network.add_arc(FlowNetwork.SOURCE, 2, _f(0))
    network.add_arc(2, 3, _f(1))
    network.add_arc(3, FlowNetwork.SINK, _f(1))
    result = max_flow(network)
    assert result.value == 0
    assert result.cut == frozenset([FlowNetwork.SOURCE])


def test_min_cut_bottleneck() -> None:
    network: FlowNetwork[Fraction] = FlowNetwork(_f(0), ["a", "b"])
    network.add_arc(FlowNetwork.SOURCE, 2, _f(2))
    network.add_arc(2, 3, _f(1))
    network.add_arc(3, FlowNetwork.SINK, _f(5))
    assert min_cut(network) == frozenset([FlowNetwork.SOURCE, 2])
    assert max_flow(network).value == 1


def test_max_flow_eta_values() -> None:
    network: FlowNetwork[EtaValue] = FlowNetwork(EtaValue(0), ["a", "b"])
    network.add_arc(FlowNetwork.SOURCE, 2, EtaValue(1, -1))
    network.add_arc(FlowNetwork.SOURCE, 3, EtaValue(0, 3))
    network.add_arc(2, FlowNetwork.SINK, EtaValue(1))
    network.add_arc(3, FlowNetwork.SINK, EtaValue(0, 1))
    assert max_flow(network).value == EtaValue(1)


_ncond_cases: typing.List[typing.Tuple[MatchingStructure, typing.Any, typing.Any, bool, bool]] = [
    (NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"], True, True),
    (NN, ["1/3", "2/5", "4/15"], ["1/3", "2/5", "4/15"], True, True),
    (NN, ["1/3", "1/3", "1/3"], ["1/3", "1/3", "1/3"], False, True),
    (NN, ["1/2", "1/4", "1/4"], ["1/2", "1/4", "1/4"], False, True),
    (NN, ["1/5", "1/5", "3/5"], ["1/5", "1/5", "3/5"], False, False),
    (complete_structure(1, 1), [1], [1], True, True),
    (NNN, ["1/4"] * 4, ["1/4"] * 4, False, True),
    (NNN, ["3/10", "1/4", "1/4", "1/5"], ["1/5", "1/4", "1/4", "3/10"], True, True),
]


@pytest.mark.parametrize("structure, mu_c, mu_s, strict, large", _ncond_cases)
def test_ncond(structure: MatchingStructure, mu_c: typing.Any, mu_s: typing.Any, strict: bool, large: bool) -> None:
    assert check_ncond(structure, mu_c, mu_s) is strict
    assert check_ncond_leq(structure, mu_c, mu_s) is large
    assert ncond_bruteforce(structure, mu_c, mu_s) is strict
    assert ncond_leq_bruteforce(structure, mu_c, mu_s) is large


def test_ncond_mapping_marginals() -> None:
    mu = {"1": "2/5", "2": "2/5", "3": "1/5"}
    mu_s = {"1'": "2/5", "2'": "2/5", "3'": "1/5"}
    assert check_ncond(NN, mu, mu_s)


def _grid_marginals(n: int, denominator: int) -> typing.Iterator[typing.List[Fraction]]:
    for parts in itertools.product(range(1, denominator), repeat=n - 1):
        last = denominator - sum(parts)
        if last > 0:
            yield [_f(p, denominator) for p in parts] + [_f(last, denominator)]


_small_structures = [
    NN,
    almost_complete_structure(3),
    MatchingStructure(["1", "2", "3"], ["a", "b"], [("1", "a"), ("2", "a"), ("2", "b"), ("3", "b")]),
]


@pytest.mark.parametrize("structure", _small_structures)
def test_ncond_matches_bruteforce(structure: MatchingStructure) -> None:
    n_c, n_s = structure.num_customers, structure.num_servers
    for mu_c in _grid_marginals(n_c, 6):
        for mu_s in _grid_marginals(n_s, 6):
            assert check_ncond(structure, mu_c, mu_s) == ncond_bruteforce(structure, mu_c, mu_s)
            assert check_ncond_leq(structure, mu_c, mu_s) == ncond_leq_bruteforce(
                structure, mu_c, mu_s
            )


@pytest.mark.parametrize("structure", _small_structures)
def test_ncond_certificates(structure: MatchingStructure) -> None:
    n_c, n_s = structure.num_customers, structure.num_servers
    for mu_c in _grid_marginals(n_c, 5):
        for mu_s in _grid_marginals(n_s, 5):
            certificate = ncond_certificate(structure, mu_c, mu_s)
            if check_ncond(structure, mu_c, mu_s):
                assert certificate is None
                continue
            assert certificate is not None
            subset = set(certificate.subset)
            assert 0 < len(subset) < n_c
            image = structure.neighbors("customer", subset)
            assert set(certificate.image) == image
            lhs = sum(p for c, p in zip(structure.customers, mu_c) if c in subset)
            rhs = sum(p for s, p in zip(structure.servers, mu_s) if s in image)
            assert certificate.lhs == lhs and certificate.rhs == rhs
            assert lhs >= rhs


def test_ncond_certificate_fanti() -> None:
    third = ["1/3", "1/3", "1/3"]
    certificate = ncond_certificate(NN, third, third)
    assert isinstance(certificate, SubsetCertificate)
    assert certificate.lhs == certificate.rhs
    assert " >= " in certificate.message and "/3" in certificate.message
    assert "Fraction" not in certificate.message


@pytest.mark.parametrize(
    "structure, mu_c, mu_s",
    [(s, c, m) for s, c, m, strict, _ in _ncond_cases if strict],
)
def test_positive_flow(structure: MatchingStructure, mu_c: typing.Any, mu_s: typing.Any) -> None:
    flow = positive_flow(structure, mu_c, mu_s)
    assert set(flow) == set(structure.matching_edges)
    assert all(t > 0 for t in flow.values())
    assert sum(flow.values()) == 1
    for i, c in enumerate(structure.customers):
        assert sum(t for (c2, _), t in flow.items() if c2 == c) == _f(mu_c[i])
    for j, s in enumerate(structure.servers):
        assert sum(t for (_, s2), t in flow.items() if s2 == s) == _f(mu_s[j])


def test_positive_flow_single_edge() -> None:
    assert positive_flow(complete_structure(1, 1), [1], [1]) == {("1", "1'"): 1}


def test_positive_flow_violated() -> None:
    third = ["1/3", "1/3", "1/3"]
    with pytest.raises(NCondViolatedError) as info:
        positive_flow(NN, third, third)
    assert isinstance(get_certificate(info.value), SubsetCertificate)


def test_perfect_matching() -> None:
    matching, certificate = perfect_matching(NN, (1, 1, 0), (1, 1, 0))
    assert certificate is None and matching is not None
    assert sum(matching.values()) == 2
    assert all(NN.is_edge(c, s) for c, s in matching)
    for i, c in enumerate(NN.customers):
        assert sum(k for (c2, _), k in matching.items() if c2 == c) == (1, 1, 0)[i]


def test_perfect_matching_hall_violation() -> None:
    matching, certificate = perfect_matching(NN, (0, 0, 2), (0, 0, 2))
    assert matching is None
    assert certificate is not None
    assert certificate.subset == ("3",)
    assert certificate.lhs == 2 and certificate.rhs == 0


def test_perfect_matching_empty() -> None:
    assert perfect_matching(NN, (0, 0, 0), (0, 0, 0)) == ({}, None)


def test_perfect_matching_unequal_totals() -> None:
    with pytest.raises(UnequalTotalsError):
        perfect_matching(NN, (1, 0, 0), (0, 0, 0))


def _hall_bruteforce(structure: MatchingStructure, x: typing.Sequence[int], y: typing.Sequence[int]) -> bool:
    for u in range(1, 1 << structure.num_customers):
        lhs = sum(x[i] for i in range(structure.num_customers) if u >> i & 1)
        image = structure.server_mask(u)
        rhs = sum(y[j] for j in range(structure.num_servers) if image >> j & 1)
        if lhs > rhs:
            return False
    return True


def test_perfect_matching_matches_hall() -> None:
    for x in itertools.product(range(3), repeat=3):
        for y in itertools.product(range(3), repeat=3):
            if sum(x) != sum(y):
                continue
            matching, certificate = perfect_matching(NN, x, y)
            assert (matching is not None) == _hall_bruteforce(NN, x, y)
            if certificate is not None:
                assert certificate.lhs > certificate.rhs


def _compositions(total: int, parts: int) -> typing.Iterator[typing.Tuple[int, ...]]:
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        bounds = (-1,) + cuts + (total + parts - 1,)
        yield tuple(b - a - 1 for a, b in zip(bounds, bounds[1:]))


def _check_hall_oracle(structure: MatchingStructure, max_total: int) -> None:
    for total in range(max_total + 1):
        for x in _compositions(total, structure.num_customers):
            for y in _compositions(total, structure.num_servers):
                matching, _ = perfect_matching(structure, x, y)
                assert (matching is not None) == _hall_bruteforce(structure, x, y), (x, y)


def test_perfect_matching_matches_hall_nn() -> None:
    _check_hall_oracle(NN, 6)


@pytest.mark.slow
def test_perfect_matching_matches_hall_nnn() -> None:
    _check_hall_oracle(NNN, 6)


def _random_structure(rng: np.random.Generator) -> MatchingStructure:
    while True:
        k, l = (int(n) for n in rng.integers(1, 5, size=2))
        customers = [str(i + 1) for i in range(k)]
        servers = [f"{j + 1}'" for j in range(l)]
        pairs = list(itertools.product(customers, servers))
        edges = [p for p, keep in zip(pairs, rng.random(len(pairs)) < 0.5) if keep]
        arrivals = [p for p, keep in zip(pairs, rng.random(len(pairs)) < 0.5) if keep]
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


def _check_random_ncond(num_structures: int, num_measures: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(num_structures):
        structure = _random_structure(rng)
        for _ in range(num_measures):
            measure = _random_measure(structure, rng)
            mu_c, mu_s = measure.customer_marginal, measure.server_marginal
            assert check_ncond(structure, mu_c, mu_s) == ncond_bruteforce(structure, mu_c, mu_s)
            assert check_ncond_leq(structure, mu_c, mu_s) == ncond_leq_bruteforce(
                structure, mu_c, mu_s
            )


def test_ncond_matches_bruteforce_random() -> None:
    _check_random_ncond(30, 10, 0)


@pytest.mark.slow
def test_ncond_matches_bruteforce_random_full() -> None:
    _check_random_ncond(200, 100, 1)


@pytest.mark.parametrize(
    "mu_c, mu_s",
    [
        ({"1": "1/2", "2": "1/2"}, {"1'": "1/2", "2'": "1/2"}),
        (["1/2", "1/2", "0"], ["1/2", "1/2", "0"]),
    ],
)
def test_ncond_rejects_zero_marginals(mu_c: typing.Any, mu_s: typing.Any) -> None:
    with pytest.raises(NotADistributionError):
        check_ncond(NN, mu_c, mu_s)
    with pytest.raises(NotADistributionError):
        ncond_certificate(NN, mu_c, mu_s)
    assert check_ncond_leq(NN, mu_c, mu_s) == ncond_leq_bruteforce(NN, mu_c, mu_s)
