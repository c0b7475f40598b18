import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wlm.core import ValidationError
from wlm.transport import (
    Coupling,
    InfeasibleError,
    LpProblem,
    UnboundedError,
    certify_transport,
    lp_solve,
    northwest_corner,
    solve_transport,
    transport_lp,
    wasserstein,
)


def brute_force_permutations(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n))) / n


def test_identity_transport():
    cost = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    mu = np.array([0.2, 0.3, 0.5])
    value, plan = wasserstein(cost, mu, mu)
    assert value == 0.0
    assert np.allclose(plan.probs, np.diag(mu))


def test_forced_coupling():
    value, plan = wasserstein(np.array([[0.0], [1.0]]), [0.5, 0.5], [1.0])
    assert value == pytest.approx(0.5, abs=1e-15)


def test_two_point_example():
    # brute force over the one-parameter family of 2x2 couplings
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    mu, nu = np.array([0.7, 0.3]), np.array([0.4, 0.6])
    ts = np.linspace(max(0, mu[0] - nu[1]), min(mu[0], nu[0]), 10001)
    brute = min(t * 0 + (mu[0] - t) + (nu[0] - t) for t in ts)
    value, _ = wasserstein(cost, mu, nu)
    assert value == pytest.approx(0.3, abs=1e-12)
    assert value == pytest.approx(brute, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_birkhoff_vertex_oracle(n, seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((n, n))
    u = np.full(n, 1.0 / n)
    value, _ = wasserstein(cost, u, u)
    assert value == pytest.approx(brute_force_permutations(cost), abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_value_lower_bounds_feasible_plans_and_symmetry(n, m, seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((n, m)) * 5
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    sol = solve_transport(cost, mu, nu)
    assert sol.value <= Coupling.product(mu, nu).cost(cost) + 1e-9
    assert sol.value <= northwest_corner(mu, nu).ravel() @ cost.ravel() + 1e-9
    assert wasserstein(cost.T, nu, mu)[0] == pytest.approx(sol.value, abs=1e-9)
    assert certify_transport(cost, sol.plan, sol.u, sol.v) <= 1e-8


def test_zero_mass_rows_and_columns():
    cost = np.arange(12, dtype=float).reshape(3, 4)
    mu = np.array([0.5, 0.0, 0.5])
    nu = np.array([0.0, 0.25, 0.75, 0.0])
    sol = solve_transport(cost, mu, nu)
    assert np.all(sol.plan.probs[1] == 0.0)
    assert np.all(sol.plan.probs[:, [0, 3]] == 0.0)
    certify_transport(cost, sol.plan, sol.u, sol.v)


def test_transport_is_deterministic(rng):
    cost = rng.random((6, 5))
    mu, nu = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(5))
    a, b = solve_transport(cost, mu, nu), solve_transport(cost, mu, nu)
    assert a.value == b.value and np.array_equal(a.plan.probs, b.plan.probs) and a.pivots == b.pivots


def test_transport_input_errors():
    with pytest.raises(ValidationError):
        wasserstein(np.ones((2, 2)), [0.6, 0.6], [0.5, 0.5])
    with pytest.raises(ValidationError):
        wasserstein(np.array([[0.0, np.inf], [1.0, 0.0]]), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValidationError):
        wasserstein(np.ones((2, 3)), [0.5, 0.5], [0.5, 0.5])


def test_coupling_invariants():
    with pytest.raises(ValidationError):
        Coupling(np.array([[0.5, 0.0], [0.0, 0.4]]), [0.5, 0.5], [0.5, 0.5])
    c = Coupling(np.array([[0.5, -1e-16], [0.0, 0.5]]), [0.5, 0.5], [0.5, 0.5])
    assert c.probs.min() == 0.0


def test_lp_examples():
    value, x = lp_solve(LpProblem([1.0], [[1.0]], [1.0]))
    assert value == 1.0 and x.tolist() == [1.0]
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert lp_solve(transport_lp(cost, [0.7, 0.3], [0.4, 0.6]))[0] == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(InfeasibleError):
        lp_solve(LpProblem([1.0], [[1.0], [1.0]], [0.0, 1.0]))
    with pytest.raises(UnboundedError):
        lp_solve(LpProblem([-1.0, 0.0], [[1.0, -1.0]], [0.0]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1), st.sampled_from(["bland", "hybrid"]))
def test_lp_matches_transport(n, m, seed, rule):
    rng = np.random.default_rng(seed)
    cost = rng.random((n, m))
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    value, x = lp_solve(transport_lp(cost, mu, nu), rule=rule)
    assert value == pytest.approx(wasserstein(cost, mu, nu)[0], abs=1e-9)
    assert x.min() >= 0


def test_lp_warm_start_reaches_same_optimum(rng):
    cost = rng.random((4, 4))
    mu, nu = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    p = transport_lp(cost, mu, nu)
    cold = lp_solve(p)[0]
    warm = lp_solve(p, start=np.outer(mu, nu).ravel())[0]
    assert warm == pytest.approx(cold, abs=1e-12)
    with pytest.raises(ValidationError, match="start point"):
        lp_solve(p, start=np.zeros(16))


def test_lp_is_deterministic(rng):
    cost = rng.random((4, 5))
    p = transport_lp(cost, rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(5)))
    a, b = lp_solve(p), lp_solve(p)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])
