import numpy as np
import pytest

from oracles import polygon_inside
from secureplan.geometry import ConvexPolygon
from secureplan.rrt import (
    NotReached,
    RootInCollision,
    RrtParams,
    World,
    grow_tree,
    path_steps,
    query_path,
    sample_path,
)

OPEN = World(np.zeros(2), np.full(2, 10.0))
# wall at x in [4.8, 5.2] with a gap for y in [6, 7]
WALL = World(np.zeros(2), np.full(2, 10.0), (
    ConvexPolygon([[4.8, 0], [5.2, 0], [5.2, 6], [4.8, 6]]),
    ConvexPolygon([[4.8, 7], [5.2, 7], [5.2, 10], [4.8, 10]]),
))


def assert_tree_invariants(tree):
    n = len(tree.nodes)
    assert tree.cost[0] == 0.0 and tree.parent[0] == -1
    for k in range(1, n):
        p = tree.parent[k]
        assert 0 <= p < n
        assert abs(tree.cost[k] - tree.cost[p] - np.linalg.norm(tree.nodes[k] - tree.nodes[p])) <= 1e-9
        assert tree.chain(k)[0] == 0  # reaches the root, hence acyclic


def assert_path_avoids(path, world):
    pts = sample_path(path, 0.05)
    assert np.all(pts >= world.lo - 1e-12) and np.all(pts <= world.hi + 1e-12)
    for poly in world.blockers:
        assert not np.any(polygon_inside(poly.vertices, pts, tol=1e-12))


def test_open_world_costs_are_near_euclidean():
    tree = grow_tree([5.0, 5.0], OPEN, RrtParams(max_iter=2000, seed=3))
    assert_tree_invariants(tree)
    rng = np.random.default_rng(0)
    for target in rng.uniform(0.5, 9.5, size=(30, 2)):
        path, cost = query_path(tree, target, 0.3)
        assert np.array_equal(path[0], [5.0, 5.0]) and np.array_equal(path[-1], target)
        assert cost <= 1.05 * np.linalg.norm(target - 5.0) + 1e-9


def test_wall_with_gap_routes_through_it():
    tree = grow_tree([2.0, 2.0], WALL, RrtParams(max_iter=4000, seed=1))
    assert_tree_invariants(tree)
    target = np.array([8.0, 2.0])
    path, cost = query_path(tree, target, 0.3)
    assert_path_avoids(path, WALL)
    crossing = [p for p in sample_path(path, 0.05) if 4.8 <= p[0] <= 5.2]
    assert crossing and all(6.0 <= p[1] <= 7.0 for p in crossing)
    # visibility-graph oracle: the shortest route bends around a gap corner
    corner = np.array([4.8, 6.0]), np.array([5.2, 6.0])
    lower = np.linalg.norm(corner[0] - [2, 2]) + 0.4 + np.linalg.norm(target - corner[1])
    assert cost >= lower - 1e-9


def test_sealed_box_is_not_reached():
    box = World(np.zeros(2), np.full(2, 10.0), (
        ConvexPolygon([[6, 6], [9, 6], [9, 6.3], [6, 6.3]]),
        ConvexPolygon([[6, 8.7], [9, 8.7], [9, 9], [6, 9]]),
        ConvexPolygon([[6, 6], [6.3, 6], [6.3, 9], [6, 9]]),
        ConvexPolygon([[8.7, 6], [9, 6], [9, 9], [8.7, 9]]),
    ))
    tree = grow_tree([1.0, 1.0], box, RrtParams(max_iter=2000, seed=0))
    target = np.array([7.5, 7.5])
    assert np.min(np.linalg.norm(tree.nodes - target, axis=1)) > 0.3
    with pytest.raises(NotReached):
        query_path(tree, target, 0.3)


def test_query_root_and_zero_tolerance():
    tree = grow_tree([1.0, 1.0], OPEN, RrtParams(max_iter=200, seed=0))
    path, cost = query_path(tree, [1.0, 1.0], 0.0)
    assert len(path) == 1 and cost == 0.0
    with pytest.raises(NotReached):
        query_path(tree, [1.2345, 7.891], 0.0)


def test_every_returned_path_is_collision_free():
    tree = grow_tree([2.0, 5.0], WALL, RrtParams(max_iter=3000, seed=5))
    rng = np.random.default_rng(1)
    checked = 0
    for target in rng.uniform(0.2, 9.8, size=(60, 2)):
        if not WALL.point_free(target):
            continue
        try:
            path, cost = query_path(tree, target, 0.3)
        except NotReached:
            continue
        assert_path_avoids(path, WALL)
        assert abs(cost - np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))) <= 1e-9
        checked += 1
    assert checked > 30


def test_root_in_collision():
    with pytest.raises(RootInCollision):
        grow_tree([5.0, 3.0], WALL)
    with pytest.raises(RootInCollision):
        grow_tree([11.0, 3.0], WALL)


def test_deterministic_under_seed():
    a = grow_tree([2.0, 2.0], WALL, RrtParams(max_iter=800, seed=9))
    b = grow_tree([2.0, 2.0], WALL, RrtParams(max_iter=800, seed=9))
    c = grow_tree([2.0, 2.0], WALL, RrtParams(max_iter=800, seed=10))
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.parent, b.parent)
    assert np.array_equal(a.cost, b.cost)
    assert not np.array_equal(a.nodes, c.nodes)


def test_raw_rrt_star_without_relaxation_keeps_invariants():
    tree = grow_tree([2.0, 2.0], WALL, RrtParams(max_iter=1500, seed=2, relax=False))
    assert_tree_invariants(tree)
    for k in range(1, len(tree.nodes)):
        assert WALL.path_free([tree.nodes[tree.parent[k]], tree.nodes[k]])


def test_three_dimensional_tree():
    world = World(np.zeros(3), np.full(3, 4.0), (ConvexPolygon([[1.5, 0], [2.5, 0], [2.5, 3], [1.5, 3]]),))
    tree = grow_tree([0.5, 0.5, 2.0], world, RrtParams(max_iter=1500, seed=0))
    assert_tree_invariants(tree)
    path, _ = query_path(tree, [3.5, 0.5, 2.0], 0.3)
    assert_path_avoids(path[:, :2], World(np.zeros(2), np.full(2, 4.0), world.blockers))


def test_path_steps_rounds_up():
    assert path_steps(1.0, 0.5) == 2
    assert path_steps(1.01, 0.5) == 3
    assert path_steps(0.0, 0.5) == 0
