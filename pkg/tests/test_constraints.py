import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_jacobian, polygon_inside, random_convex_polygon, rel_err
from secureplan.constraints import (
    BlockLayout,
    CoObservationEvent,
    Segment,
    co_observation_block,
    obstacle_block,
    reachability_block,
    velocity_block,
    workspace_block,
)
from secureplan.geometry import ConvexPolygon, Hyperplane, canonical_ellipsoid, plane_constraint_value

UNIT_SQUARE = ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def _q(n=2, steps=3, dim=2, rng=None):
    rng = rng or np.random.default_rng(0)
    return rng.normal(size=(n, steps, dim))


# ---------------------------------------------------------------- examples

def test_co_observation_block_examples():
    b = co_observation_block(CoObservationEvent(0, 1, 1, 2.0), 2)
    q = np.zeros((2, 2, 2))
    q[1, 1] = [3, 4]
    assert np.array_equal(b.value(q), [3, 4])
    assert np.allclose(b.project(np.array([3.0, 4.0])), [1.2, 1.6])
    assert np.array_equal(b.project(np.array([1.0, 0.0])), [1, 0])
    assert np.array_equal(b.jacobian(q), np.hstack([-np.eye(2), np.eye(2)]))


def test_co_observation_event_validation():
    with pytest.raises(ValueError):
        CoObservationEvent(1, 1, 0, 1.0)
    with pytest.raises(ValueError):
        CoObservationEvent(0, 1, 0, 0.0)
    with pytest.raises(ValueError):
        CoObservationEvent(0, 1, -1, 1.0)


def test_velocity_block_examples():
    b = velocity_block(0, 0, 0.5, 2)
    assert np.allclose(b.project(np.array([0.3, 0.0])), [0.3, 0.0])
    assert np.allclose(b.project(np.array([0.6, 0.8])), [0.3, 0.4])
    q = np.zeros((1, 2, 2))
    assert np.array_equal(b.value(q), [0, 0]) and np.array_equal(b.project(b.value(q)), [0, 0])


def test_obstacle_block_examples():
    b = obstacle_block(0, 0, UNIT_SQUARE)
    assert np.array_equal(b.project(np.array([2.0, 0.5])), [2.0, 0.5])
    assert np.allclose(b.project(np.array([0.5, 0.5])), [0.0, 0.5])
    assert np.allclose(b.project(np.array([0.9, 0.5])), [1.0, 0.5])


def test_workspace_block_clips():
    b = workspace_block(0, 0, [0, 0], [10, 10])
    assert np.array_equal(b.project(np.array([-1.0, 12.0])), [0, 10])


def test_reachability_block_examples():
    # canonical a=2, b=1 ellipse: foci (+-sqrt 3, 0), leg of 4 s at v_max 1
    c = np.sqrt(3.0)
    q = np.zeros((1, 5, 2))
    q[0, 0] = [-c, 0]
    q[0, 4] = [c, 0]
    far = reachability_block(0, 0, 4, ConvexPolygon([[10, 10], [11, 10], [11, 11], [10, 11]]), 1.0, 2)
    assert np.array_equal(far.value(q), np.zeros(8))
    point = reachability_block(0, 0, 4, np.array([0.0, 0.5]), 1.0, 2)
    assert np.allclose(point.value(q), [0.0, 0.5], atol=1e-12)
    plane = reachability_block(0, 0, 4, Hyperplane(np.array([1.0, 0.0]), 1.0), 1.0, 2)
    expected = plane_constraint_value(canonical_ellipsoid(2.0, 1.0), Hyperplane(np.array([1.0, 0.0]), 1.0))
    assert np.allclose(plane.value(q), expected) and np.allclose(expected, [1.0, 0.0])
    assert np.array_equal(point.project(point.value(q)), [0, 0])


def test_reachability_block_infeasible_leg_is_flagged_not_raised():
    q = np.zeros((1, 3, 2))
    q[0, 2] = [5, 0]
    b = reachability_block(0, 0, 2, np.array([1.0, 0.0]), 0.5, 2)
    assert np.array_equal(b.value(q), [0, 0])
    assert np.array_equal(b.jacobian(q), np.zeros((2, 4)))
    assert "InfeasibleVelocity" in b.diagnostic(q)


def test_reachability_block_rejects_bad_legs():
    with pytest.raises(ValueError):
        reachability_block(0, 3, 3, np.zeros(2), 1.0, 2)
    with pytest.raises(ValueError):
        reachability_block(0, 0, 3, UNIT_SQUARE, 1.0, 3)


# ---------------------------------------------------------------- projections

def _blocks_with_sets():
    return [
        (velocity_block(0, 0, 0.7, 2), lambda p: np.linalg.norm(p, axis=1) <= 0.7 + 1e-12),
        (co_observation_block(CoObservationEvent(0, 1, 0, 1.3), 2), lambda p: np.linalg.norm(p, axis=1) <= 1.3 + 1e-12),
        (workspace_block(0, 0, [-1, 0], [1, 2]), lambda p: np.all((p >= [-1, 0]) & (p <= [1, 2]), axis=1)),
        (obstacle_block(0, 0, UNIT_SQUARE), lambda p: ~polygon_inside(UNIT_SQUARE.vertices, p)),
    ]


def test_projections_are_idempotent():
    rng = np.random.default_rng(11)
    blocks = [b for b, _ in _blocks_with_sets()]
    blocks.append(reachability_block(0, 0, 1, np.zeros(2), 1.0, 2))
    for b in blocks:
        for _ in range(300):
            z = rng.normal(scale=2.0, size=b.output_dim)
            p = b.project(z)
            assert np.max(np.abs(b.project(p) - p)) <= 1e-12


def test_projections_are_metric():
    rng = np.random.default_rng(12)
    for b, member in _blocks_with_sets():
        cloud = np.empty((0, 2))
        while len(cloud) < 10_000:
            batch = rng.uniform(-3, 3, size=(20_000, 2))
            cloud = np.vstack([cloud, batch[member(batch)]])
        cloud = cloud[:10_000]
        for _ in range(1000):
            z = rng.uniform(-2.5, 2.5, size=2)
            p = b.project(z)
            if b.kind == "obstacle":
                assert not polygon_inside(UNIT_SQUARE.vertices, p, tol=1e-12)[0]
            else:
                assert member(p[None])[0]
            best = np.min(np.linalg.norm(cloud - z, axis=1))
            assert np.linalg.norm(p - z) <= best + 1e-12


# ---------------------------------------------------------------- differentials

def _block_fd(block, q):
    sel = block.selector

    def f(x):
        qq = q.copy()
        for k, (r, t) in enumerate(sel):
            qq[r, t] = x[k * block.dim:(k + 1) * block.dim]
        return block.value(qq)

    return fd_jacobian(f, block.gather(q))


def test_linear_block_jacobians_match_fd():
    q = _q(2, 3, 2)
    for b in [velocity_block(1, 1, 0.5, 2), co_observation_block(CoObservationEvent(1, 0, 2, 1.0), 2),
              obstacle_block(0, 2, UNIT_SQUARE), workspace_block(1, 0, [0, 0], [1, 1])]:
        assert rel_err(b.jacobian(q), _block_fd(b, q)) < 1e-8


@pytest.mark.parametrize("kind", ["point", "plane", "segment", "polygon"])
def test_reachability_jacobians_match_fd(kind):
    rng = np.random.default_rng({"point": 1, "plane": 2, "segment": 3, "polygon": 4}[kind])
    checked = 0
    attempts = 0
    while checked < 25 and attempts < 2000:
        attempts += 1
        q = np.zeros((1, 4, 2))
        q[0, 0] = rng.uniform(-1, 1, 2)
        q[0, 3] = q[0, 0] + rng.uniform(-1.2, 1.2, 2)
        v_max = np.linalg.norm(q[0, 3] - q[0, 0]) / 3 + rng.uniform(0.1, 0.4)
        mid = 0.5 * (q[0, 0] + q[0, 3])
        if kind == "point":
            region = mid + rng.normal(scale=0.3, size=2)
        elif kind == "plane":
            n = rng.normal(size=2)
            n /= np.linalg.norm(n)
            region = Hyperplane(n, float(n @ mid) + rng.uniform(-0.4, 0.4))
        elif kind == "segment":
            region = Segment(mid + rng.normal(scale=0.6, size=2), mid + rng.normal(scale=0.6, size=2))
        else:
            region = ConvexPolygon(random_convex_polygon(rng, mid + rng.normal(scale=1.0, size=2), 0.6))
        b = reachability_block(0, 0, 3, region, v_max, 2)
        val = b.value(q)
        if not np.any(val):
            continue
        J = b.jacobian(q)
        fd = _block_fd(b, q)
        if not np.any(J) or np.linalg.norm(fd) > 1e4:
            continue  # kink or degenerate configuration
        # skip samples whose FD straddle a case switch
        fd_small = fd_jacobian(lambda x: _block_fd_eval(b, q, x), b.gather(q), h=1e-7)
        if rel_err(fd, fd_small) > 1e-3:
            continue
        assert rel_err(J, fd) < 1e-4
        checked += 1
    assert checked >= 15


def _block_fd_eval(block, q, x):
    qq = q.copy()
    for k, (r, t) in enumerate(block.selector):
        qq[r, t] = x[k * block.dim:(k + 1) * block.dim]
    return block.value(qq)


def test_value_and_jacobian_consistent_with_separate_calls():
    rng = np.random.default_rng(5)
    for _ in range(30):
        q = np.zeros((1, 3, 2))
        q[0, 2] = rng.uniform(-0.5, 0.5, 2)
        b = reachability_block(0, 0, 2, Segment(rng.normal(size=2) * 0.5, rng.normal(size=2) * 0.5), 0.6, 2)
        v, J = b.value_and_jacobian(q)
        assert np.array_equal(v, b.value(q))
        assert np.array_equal(J, b.jacobian(q))


# ---------------------------------------------------------------- layout

@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["vel", "co", "obs", "ws", "reach_poly", "reach_pt"]), min_size=0, max_size=12))
def test_layout_slices_tile_the_copy_variable(kinds):
    makers = {
        "vel": lambda: velocity_block(0, 0, 1.0, 2),
        "co": lambda: co_observation_block(CoObservationEvent(0, 1, 1, 1.0), 2),
        "obs": lambda: obstacle_block(1, 1, UNIT_SQUARE),
        "ws": lambda: workspace_block(0, 1, [0, 0], [1, 1]),
        "reach_poly": lambda: reachability_block(0, 0, 2, UNIT_SQUARE, 1.0, 2),
        "reach_pt": lambda: reachability_block(1, 0, 2, np.zeros(2), 1.0, 2),
    }
    blocks = [makers[k]() for k in kinds]
    layout = BlockLayout(blocks)
    cover = np.zeros(layout.size, dtype=int)
    for b, sl in zip(blocks, layout.slices()):
        assert sl.stop - sl.start == b.output_dim
        cover[sl] += 1
    assert np.all(cover == 1)
    q = _q(2, 3, 2)
    assert layout.evaluate(q).shape == (layout.size,)
