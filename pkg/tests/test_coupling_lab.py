import numpy as np
import pytest

from wlm.core import CapExceededError, ValidationError
from wlm.coupling_lab import (
    OneStepCoupling,
    bicausal_lp,
    bicausal_violation,
    check_bicausal,
    compose_markovian,
    k_step_marginal,
    label_space_wl,
    optimal_markovian_coupling,
    path_tensor,
    random_coupling,
    random_one_step_coupling,
    v_full_history,
    v_w_deviation,
)
from wlm.markov import Lmmc, induce_q_damped
from wlm.sampling import random_chain
from wlm.transport import Coupling
from wlm.wl_distance import wl_cost_tables, wl_distance

from conftest import iid_chain, make_graph, reversal_coupling


@pytest.fixture
def p2_vs_single(p2, single0):
    return induce_q_damped(p2, 0.5), induce_q_damped(single0, 0.5)


def test_compose_depth_zero_is_gamma0(rng):
    X, Y = random_chain(rng, 3), random_chain(rng, 2)
    g0 = random_coupling(X.mu, Y.mu, rng)
    pm = compose_markovian(g0, [])
    assert np.array_equal(pm.tensor, g0.probs)
    assert np.array_equal(k_step_marginal(pm).probs, g0.probs)


def test_product_composition(rng):
    X, Y = random_chain(rng, 2), random_chain(rng, 3)
    pm = compose_markovian(Coupling.product(X.mu, Y.mu), [OneStepCoupling.product(X, Y)] * 2)
    expected = np.multiply.outer(path_tensor(X, 2), path_tensor(Y, 2))
    assert np.allclose(pm.tensor, expected, atol=1e-15)
    terminal = k_step_marginal(pm).probs
    assert np.allclose(terminal, np.outer(X.mu @ X.kernel @ X.kernel, Y.mu @ Y.kernel @ Y.kernel), atol=1e-15)
    assert check_bicausal(pm, X, Y)


def test_optimal_composition_attains_distance(p2_vs_single):
    X, Y = p2_vs_single
    pm = optimal_markovian_coupling(X, Y, 1)
    assert pm.expected_terminal_cost(X, Y) == pytest.approx(0.5, abs=1e-12)
    assert check_bicausal(pm, X, Y)


def test_optimal_composition_random(rng):
    for _ in range(5):
        X, Y = random_chain(rng, 3), random_chain(rng, 3)
        pm = optimal_markovian_coupling(X, Y, 2)
        assert pm.expected_terminal_cost(X, Y) == pytest.approx(wl_distance(X, Y, 2).distance, abs=1e-10)


def test_random_compositions_are_bicausal(rng):
    for _ in range(10):
        X, Y = random_chain(rng, 3, sparsity=0.3), random_chain(rng, 2)
        steps = [random_one_step_coupling(X, Y, rng) for _ in range(2)]
        pm = compose_markovian(random_coupling(X.mu, Y.mu, rng), steps)
        assert np.allclose(pm.x_marginal(), path_tensor(X, 2), atol=1e-12)
        assert np.allclose(pm.y_marginal(), path_tensor(Y, 2), atol=1e-12)
        assert check_bicausal(pm, X, Y)


def test_anticipating_two_state_coupling_fails():
    p = [0.3, 0.7]
    X = iid_chain(p, [[0.0], [1.0]])
    pm = reversal_coupling(p, 1)
    assert np.allclose(pm.x_marginal(), path_tensor(X, 1))
    assert np.allclose(pm.y_marginal(), path_tensor(X, 1))
    assert bicausal_violation(pm, X, X) > 1e-3
    assert not check_bicausal(pm, X, X)


def test_violation_rejects_wrong_marginals(rng):
    X, Y = random_chain(rng, 2), random_chain(rng, 2)
    pm = compose_markovian(Coupling.product(X.mu, Y.mu), [OneStepCoupling.product(X, Y)])
    other = Lmmc(X.kernel, X.mu[::-1] * 0.5 + 0.25, X.labels)
    with pytest.raises(ValidationError, match="marginals"):
        bicausal_violation(pm, other, Y)


def test_one_step_validation(rng):
    X, Y = random_chain(rng, 2), random_chain(rng, 2)
    with pytest.raises(ValidationError, match="marginals"):
        OneStepCoupling(np.full((2, 2, 2, 2), 0.25), X.kernel, Y.kernel)
    with pytest.raises(ValidationError, match="shape"):
        OneStepCoupling(np.zeros((2, 2)), X.kernel, Y.kernel)


def test_bicausal_lp_examples(p2_vs_single, single0, single3, rng):
    X, Y = p2_vs_single
    assert bicausal_lp(X, Y, 1) == pytest.approx(0.5, abs=1e-12)
    A, B = induce_q_damped(single0, 0.5), induce_q_damped(single3, 0.5)
    assert bicausal_lp(A, B, 2) == pytest.approx(3.0, abs=1e-12)
    Z = random_chain(rng, 2)
    assert abs(bicausal_lp(Z, Z, 2)) <= 1e-10


def test_bicausal_lp_plan_is_bicausal_and_optimal(rng):
    X, Y = random_chain(rng, 2, d=2), random_chain(rng, 3, d=2)
    value, pm = bicausal_lp(X, Y, 2, return_plan=True)
    assert value == pytest.approx(wl_distance(X, Y, 2).distance, abs=1e-8)
    assert check_bicausal(pm, X, Y)
    assert pm.expected_terminal_cost(X, Y) == pytest.approx(value, abs=1e-9)


def test_bicausal_lp_cap(rng):
    X, Y = random_chain(rng, 4), random_chain(rng, 4)
    with pytest.raises(CapExceededError):
        bicausal_lp(X, Y, 3, cap=1000)


def test_v_full_history(rng, single0):
    X, Y = random_chain(rng, 2, stationary=True), random_chain(rng, 3, sparsity=0.4)
    V = v_full_history(X, Y, 2)
    assert [v.ndim for v in V] == [2, 4, 6]
    assert v_w_deviation(V, wl_cost_tables(X, Y, 2)) <= 1e-9
    V0 = v_full_history(X, Y, 0)
    assert np.allclose(V0[0], np.abs(X.labels[:, None, 0] - Y.labels[None, :, 0]))
    S = induce_q_damped(single0, 0.5)
    for v in v_full_history(S, S.with_labels([[2.0]]), 2):
        assert np.all(v == 2.0)


def test_label_space_wl(p2, rng):
    X = induce_q_damped(p2, 0.5)
    Y = Lmmc([[1.0]], [1.0], [[2.0]])
    assert label_space_wl(X, Y, 1) == pytest.approx(wl_distance(X, Y, 1).distance, abs=1e-8)
    A, B = random_chain(rng, 3), random_chain(rng, 2)
    from wlm.transport import wasserstein

    cost = np.abs(A.labels[:, None, 0] - B.labels[None, :, 0])
    assert label_space_wl(A, B, 0) == pytest.approx(wasserstein(cost, A.mu, B.mu)[0], abs=1e-9)
    with pytest.raises(ValidationError, match="labels not injective"):
        label_space_wl(A.with_labels([[0.0], [0.0], [1.0]]), B, 1)
