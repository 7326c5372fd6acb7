# pylint: disable = missing-docstring

from fractions import Fraction
import itertools
import typing

import pytest

from matchstab.chains import (
    ZChainParams,
    mean_buffer,
    ms_counterexample_statistic,
    nn_counterexample_drift,
    reach_set,
    solve_stationary,
    truncated_stationary,
    z_chain_is_positive_recurrent,
    z_chain_kernel,
    z_chain_params_nn,
    z_chain_probability,
    z_chain_stationary,
)
from matchstab.config import limits
from matchstab.errors import (
    MatchstabError,
    NotNNModelError,
    NotPositiveRecurrentError,
    StateSpaceTooLargeError,
)
from matchstab.model import (
    NN,
    NN_FDIAG,
    NN_PRIORITIES,
    NNN,
    complete_structure,
    product_measure,
    uniform_measure,
)
from matchstab.policies import CommutativeState, PolicySpec, WordState

_f = Fraction
_marginal = ("1/3", "2/5", "4/15")


def _counterexample_measure() -> typing.Any:
    return product_measure(NN, _marginal, _marginal)


def test_z_chain_params() -> None:
    params = z_chain_params_nn(_counterexample_measure())
    assert params.a == (_f(8, 75), _f(34, 75), _f(11, 25))
    assert params.b == (_f(6, 25), _f(13, 25), _f(6, 25))
    assert params.c == (_f(11, 25), _f(34, 75), _f(8, 75))
    assert z_chain_is_positive_recurrent(params)


def test_z_chain_upward_jump() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    assert z_chain_params_nn(measure).c[2] == _f(2, 25)


def test_z_chain_stationary() -> None:
    st = z_chain_stationary(z_chain_params_nn(_counterexample_measure()))
    assert st.pi_zero == _f(25, 61)
    assert st.pi_pos == st.pi_neg == _f(18, 61)
    assert st.pi_zero + st.pi_pos + st.pi_neg == 1
    assert st.pos_ratio == st.neg_ratio == _f(8, 33)


def test_counterexample_drift() -> None:
    drift = nn_counterexample_drift(_counterexample_measure())
    assert drift.alpha == drift.gamma == _f(-1, 15)
    assert drift.beta == _f(13, 75)
    assert drift.composite == _f(29, 915)
    assert drift.composite > 0


def test_z_chain_probability_sums() -> None:
    params = z_chain_params_nn(_counterexample_measure())
    st = z_chain_stationary(params)
    assert z_chain_probability(params, 0) == st.pi_zero
    head = sum(z_chain_probability(params, x) for x in range(1, 60))
    assert float(st.pi_pos - head) < 1e-30
    assert z_chain_probability(params, 3) == z_chain_probability(params, -3)


def test_z_chain_kernel_matches_closed_form() -> None:
    params = z_chain_params_nn(_counterexample_measure())
    states, kernel = z_chain_kernel(params, 200)
    assert kernel.shape == (401, 401)
    assert abs(kernel.sum(axis=1) - 1).max() < 1e-12
    pi = solve_stationary(kernel)
    tv = sum(abs(pi[k] - float(z_chain_probability(params, x))) for k, x in enumerate(states))
    assert tv / 2 <= 1e-10


def test_z_chain_not_recurrent() -> None:
    params = ZChainParams(("1/2", "1/4", "1/4"), ("1/3", "1/3", "1/3"), ("1/2", "1/4", "1/4"))
    assert not z_chain_is_positive_recurrent(params)
    with pytest.raises(NotPositiveRecurrentError):
        z_chain_stationary(params)


@pytest.mark.parametrize(
    "a, b, c",
    [
        (("1/2", "1/2"), ("1/3", "1/3", "1/3"), ("1/3", "1/3", "1/3")),
        (("1/2", "1/4", "1/3"), ("1/3", "1/3", "1/3"), ("1/3", "1/3", "1/3")),
        (("0", "1/2", "1/2"), ("1/3", "1/3", "1/3"), ("1/3", "1/3", "1/3")),
    ],
)
def test_z_chain_invalid_params(a: typing.Any, b: typing.Any, c: typing.Any) -> None:
    with pytest.raises(MatchstabError):
        ZChainParams(a, b, c)


def test_z_chain_needs_nn() -> None:
    with pytest.raises(NotNNModelError):
        z_chain_params_nn(uniform_measure(NNN))
    with pytest.raises(NotNNModelError):
        nn_counterexample_drift(uniform_measure(NN_FDIAG))


def test_ms_statistic() -> None:
    assert ms_counterexample_statistic(CommutativeState((0, 1, 3), (0, 0, 4))) == 2
    assert ms_counterexample_statistic(CommutativeState((0, 0, 0), (0, 0, 0))) == 0


def test_solve_stationary_dense() -> None:
    pi = solve_stationary([[0.5, 0.5], [0.25, 0.75]])
    assert pi == pytest.approx([1 / 3, 2 / 3])


def test_solve_stationary_power_iteration() -> None:
    with limits(dense_solve_limit=1):
        pi = solve_stationary([[0.5, 0.5], [0.25, 0.75]])
    assert pi == pytest.approx([1 / 3, 2 / 3])


@pytest.mark.parametrize("max_iter", [0, 1])
def test_solve_stationary_power_iteration_limit(max_iter: int) -> None:
    with limits(dense_solve_limit=1, power_iteration_max_iter=max_iter):
        with pytest.raises(MatchstabError, match="did not converge"):
            solve_stationary([[0.5, 0.5], [0.25, 0.75]])


def test_truncated_stationary_trivial() -> None:
    structure = complete_structure(1, 1)
    dist = truncated_stationary(structure, uniform_measure(structure), PolicySpec.ml(), 1)
    assert dist == {CommutativeState((0,), (0,)): pytest.approx(1.0)}


def test_truncated_stationary_nn() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    dist = truncated_stationary(NN, measure, PolicySpec.ml(), 1)
    assert all(s.total <= 1 for s in dist)
    assert sum(dist.values()) == pytest.approx(1.0)
    assert 0 <= mean_buffer(dist) <= 1


def test_truncated_stationary_words() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    dist = truncated_stationary(NN, measure, PolicySpec.fifo(), 3)
    assert all(isinstance(s, WordState) for s in dist)
    assert WordState((), ()) in dist
    assert sum(dist.values()) == pytest.approx(1.0)


def test_truncated_stationary_policies_agree_on_counts() -> None:
    # every arrival pair is matchable, so the buffer stays empty
    structure = complete_structure(2, 2)
    measure = uniform_measure(structure)
    ml = truncated_stationary(structure, measure, PolicySpec.ml(), 2)
    pr = truncated_stationary(
        structure, measure, PolicySpec.priorities([[2, 1], [1, 2]], [[1, 2], [2, 1]]), 2
    )
    assert set(ml) == set(pr) == {CommutativeState((0, 0), (0, 0))}


def test_truncated_stationary_too_large() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    with limits(max_states=5):
        with pytest.raises(StateSpaceTooLargeError):
            truncated_stationary(NN, measure, PolicySpec.ml(), 3)
    with pytest.raises(ValueError):
        truncated_stationary(NN, measure, PolicySpec.ml(), 0)


def test_reach_set_diagonal_arrivals() -> None:
    reached = reach_set(NN_FDIAG, uniform_measure(NN_FDIAG), None, 6)
    assert CommutativeState((0, 1, 0), (0, 0, 1)) not in reached
    assert CommutativeState((1, 0, 0), (1, 0, 0)) in reached
    assert CommutativeState((0, 0, 1), (0, 0, 1)) in reached
    assert all(s.x[1] == 0 for s in reached)


def _valid_states(cap: int) -> typing.Set[CommutativeState]:
    states = set()
    counts = range(cap + 1)
    for x in itertools.product(counts, repeat=3):
        for y in itertools.product(counts, repeat=3):
            if sum(x) != sum(y) or sum(x) > cap:
                continue
            if any(x[NN.customer_index(c)] and y[NN.server_index(s)] for c, s in NN.matching_edges):
                continue
            states.add(CommutativeState(x, y))
    return states


def test_reach_set_full_support() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    assert reach_set(NN, measure, None, 3) == frozenset(_valid_states(3))


def test_reach_set_with_policy() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    full = reach_set(NN, measure, None, 3)
    for policy in [PolicySpec.fifo(), PolicySpec.priorities(*NN_PRIORITIES), PolicySpec.ms()]:
        assert reach_set(NN, measure, policy, 3) <= full


def test_reach_set_too_large() -> None:
    measure = product_measure(NN, ["2/5", "2/5", "1/5"], ["2/5", "2/5", "1/5"])
    with limits(max_states=3):
        with pytest.raises(StateSpaceTooLargeError):
            reach_set(NN, measure, None, 3)
