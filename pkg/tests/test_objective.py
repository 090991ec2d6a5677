import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_jacobian, rel_err
from secureplan.objective import (
    ExplorationObjective,
    FieldGrid,
    information_gain,
    objective_value_and_gradient,
    propagate,
)


def test_information_gain_examples():
    assert information_gain([1.0, 2.0], [1.0, 2.0]) == 1.0
    assert information_gain([0.0, 0.0], [2.0, 0.0], ell=2.0) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert information_gain([0.0, 0.0], [10.0, 0.0]) < 2e-22


def test_propagate_parked_robot():
    grid = FieldGrid(np.array([[0.0, 0.0]]), np.array([1.0]), process_noise=0.0)
    q = np.zeros((1, 2, 2))
    assert propagate(grid, q)[0] == pytest.approx(0.5, abs=1e-15)
    q = np.zeros((1, 3, 2))
    assert propagate(grid, q)[0] == pytest.approx(1 / 3, abs=1e-15)


def test_propagate_pure_inflation():
    grid = FieldGrid.over_workspace([0, 0], [10, 10], P0=1.0)
    q = np.full((1, 21, 2), 1e6)
    assert np.allclose(propagate(grid, q), 1.2, atol=1e-12)


def test_adding_a_robot_never_increases_covariance():
    rng = np.random.default_rng(0)
    grid = FieldGrid.over_workspace([0, 0], [4, 4], shape=(4, 4))
    for _ in range(20):
        q = rng.uniform(0, 4, size=(3, 6, 2))
        assert np.all(propagate(grid, q) <= propagate(grid, q[:2]) + 1e-15)


def test_equal_covariances_sandwich_top():
    grid = FieldGrid(np.array([[0.0, 0], [1, 0], [2, 0]]), np.full(3, 0.7), process_noise=0.0)
    q = np.full((1, 1, 2), 50.0)  # zero steps: P stays at P0
    val, _ = objective_value_and_gradient(grid, q, tau=0.1)
    assert val == pytest.approx(0.7 + 0.1 * np.log(3), abs=1e-12)


def test_small_tau_approaches_max():
    rng = np.random.default_rng(1)
    grid = FieldGrid.over_workspace([0, 0], [3, 3], shape=(3, 3))
    q = rng.uniform(0, 3, size=(1, 6, 2))
    top = propagate(grid, q).max()
    val, _ = objective_value_and_gradient(grid, q, tau=1e-6)
    assert abs(val - top) < 1e-5


def _random_instance(rng, n_points=3, robots=1, T=5):
    pts = rng.uniform(0, 3, size=(n_points, 2))
    grid = FieldGrid(pts, rng.uniform(0.5, 1.5, size=n_points), process_noise=rng.uniform(0, 0.05),
                     sigma_meas=rng.uniform(0.7, 1.5), ell=rng.uniform(0.6, 1.5))
    q = rng.uniform(0, 3, size=(robots, T + 1, 2))
    return grid, q


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for k in range(50):
        grid, q = _random_instance(rng, n_points=int(rng.integers(3, 7)), robots=int(rng.integers(1, 3)))
        tau = rng.uniform(0.02, 0.2)
        _, g = objective_value_and_gradient(grid, q, tau)
        fd = fd_jacobian(lambda x: objective_value_and_gradient(grid, x.reshape(q.shape), tau)[0], q.ravel())
        assert rel_err(g.ravel(), fd.ravel()) < 1e-4, k


def test_start_positions_do_not_affect_the_objective():
    rng = np.random.default_rng(3)
    grid, q = _random_instance(rng)
    _, g = objective_value_and_gradient(grid, q)
    assert not np.any(g[:, 0])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_log_sum_exp_sandwich(seed, tau):
    rng = np.random.default_rng(seed)
    grid, q = _random_instance(rng, n_points=int(rng.integers(1, 10)), robots=2, T=4)
    P = propagate(grid, q)
    val, _ = objective_value_and_gradient(grid, q, tau)
    assert P.max() - 1e-12 <= val <= P.max() + tau * np.log(len(P)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_propagate_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    grid, q = _random_instance(rng, n_points=5, robots=4, T=4)
    perm = rng.permutation(4)
    assert np.allclose(propagate(grid, q), propagate(grid, q[perm]), rtol=1e-13, atol=0)


def test_weighted_wrapper():
    rng = np.random.default_rng(4)
    grid, q = _random_instance(rng)
    v1, g1 = ExplorationObjective(grid, weight=1.0)(q)
    v3, g3 = ExplorationObjective(grid, weight=3.0)(q)
    assert v3 == pytest.approx(3 * v1) and np.allclose(g3, 3 * g1)


def test_grid_validation():
    with pytest.raises(ValueError):
        FieldGrid(np.zeros((1, 2)), np.array([0.0]))
    with pytest.raises(ValueError):
        FieldGrid(np.zeros((1, 2)), np.array([1.0]), process_noise=-1)
    with pytest.raises(ValueError):
        FieldGrid(np.zeros((1, 2)), np.array([1.0]), ell=0)
    g = FieldGrid.over_workspace([0, 0], [10, 10])
    assert g.points.shape == (64, 2) and np.allclose(g.points[0], [0.625, 0.625])
