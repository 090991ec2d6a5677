"""ADMM constraint blocks.

A block reads a few waypoints of the stacked trajectory array ``q`` (shape
``(robots, T + 1, dim)``), maps them to ``D(q)``, and knows the projection
onto its target set ``Z``. The solver keeps one copy/dual slice per block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .geometry import (
    ConvexPolygon,
    DegenerateConfiguration,
    Hyperplane,
    InfeasibleVelocity,
    ellipsoid_from_waypoints,
    plane_constraint_differential,
    plane_constraint_value,
    point_projection,
    point_projection_differential,
    polygon_constraint_differential,
    polygon_constraint_value,
    segment_constraint_differential,
    segment_constraint_value,
)
from .geometry.regions import BoundaryCase


class Segment(NamedTuple):
    p1: np.ndarray
    p2: np.ndarray


Region = Union[np.ndarray, Hyperplane, Segment, ConvexPolygon]


@dataclass(frozen=True)
class CoObservationEvent:
    robot_a: int
    robot_b: int
    time: int
    d_max: float

    def __post_init__(self):
        if self.robot_a == self.robot_b:
            raise ValueError("a co-observation needs two distinct robots")
        if self.time < 0:
            raise ValueError("co-observation time must be non-negative")
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")


def project_ball(z: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(z))
    if norm > radius:
        return z * (radius / norm)
    return z.copy()


@dataclass(frozen=True, eq=False)
class ConstraintBlock:
    """One ``D_i(q) in Z_i`` constraint.

    ``selector`` lists the ``(robot, time)`` waypoints the block reads, in the
    column order of :meth:`jacobian`.
    """

    kind: str
    selector: tuple[tuple[int, int], ...]
    output_dim: int
    dim: int
    params: dict = field(default_factory=dict)

    linear = False

    def gather(self, q: np.ndarray) -> np.ndarray:
        return np.concatenate([q[r, t] for r, t in self.selector])

    def value(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        """``output_dim x (len(selector) * dim)`` Jacobian of :meth:`value`."""
        raise NotImplementedError

    def project(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def violation(self, q: np.ndarray) -> float:
        d = self.value(q)
        return float(np.linalg.norm(d - self.project(d)))

    def value_and_jacobian(self, q: np.ndarray):
        return self.value(q), self.jacobian(q)

    def diagnostic(self, q: np.ndarray) -> str | None:
        return None

    def describe(self) -> str:
        sel = ", ".join(f"r{r}t{t}" for r, t in self.selector)
        return f"{self.kind}[{sel}]"


class LinearBlock(ConstraintBlock):
    linear = True

    @property
    def matrix(self) -> np.ndarray:
        return self.params["matrix"]

    def value(self, q):
        return self.matrix @ self.gather(q)

    def jacobian(self, q):
        return self.matrix


class BallBlock(LinearBlock):
    def project(self, z):
        return project_ball(np.asarray(z, dtype=float), self.params["radius"])


class BoxBlock(LinearBlock):
    def project(self, z):
        return np.clip(z, self.params["lo"], self.params["hi"])


class ObstacleBlock(LinearBlock):
    def project(self, z):
        poly: ConvexPolygon = self.params["polygon"]
        z = np.asarray(z, dtype=float)
        if poly.contains(z[:2], strict=True):
            out = z.copy()
            out[:2] = poly.nearest_boundary_point(z[:2])
            return out
        return z.copy()


def _difference_matrix(dim: int) -> np.ndarray:
    eye = np.eye(dim)
    return np.hstack([-eye, eye])


def co_observation_block(event: CoObservationEvent, dim: int) -> ConstraintBlock:
    """``D = q_b(t) - q_a(t)`` kept inside the ball of radius ``d_max``."""
    sel = ((event.robot_a, event.time), (event.robot_b, event.time))
    return BallBlock(
        "co_observation", sel, dim, dim,
        {"matrix": _difference_matrix(dim), "radius": float(event.d_max), "event": event},
    )


def velocity_block(robot: int, step: int, v_max: float, dim: int) -> ConstraintBlock:
    """``D = q(step + 1) - q(step)`` kept inside the ball of radius ``v_max``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    sel = ((robot, step), (robot, step + 1))
    return BallBlock("velocity", sel, dim, dim, {"matrix": _difference_matrix(dim), "radius": float(v_max)})


def obstacle_block(robot: int, step: int, poly: ConvexPolygon, dim: int = 2) -> ConstraintBlock:
    """Waypoint kept outside the open polygon (planar part of the waypoint)."""
    return ObstacleBlock("obstacle", ((robot, step),), dim, dim, {"matrix": np.eye(dim), "polygon": poly})


def workspace_block(robot: int, step: int, lo, hi) -> ConstraintBlock:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = len(lo)
    return BoxBlock("workspace", ((robot, step),), dim, dim, {"matrix": np.eye(dim), "lo": lo, "hi": hi})


class ReachabilityBlock(ConstraintBlock):
    """Violation of the reachability ellipsoid of ``q(t_i) -> q(t_j)`` with a region.

    ``Z = {0}``. Legs whose ellipsoid cannot be built (waypoints too far apart
    for the speed bound) contribute zero and report a diagnostic.
    """

    def _ellipsoid(self, q):
        (r, ti), (_, tj) = self.selector
        return ellipsoid_from_waypoints(q[r, ti], q[r, tj], ti, tj, self.params["v_max"])

    def _far(self, E) -> bool:
        """Cheap separation test: the region is beyond the ball of radius ``a`` around the center."""
        region = self.params["region"]
        o = E.center
        if self.kind == "reach_polygon":
            return float(region.signed_depth(o)[0]) >= E.a
        if self.kind == "reach_plane":
            return abs(float(region.normal @ o) - region.offset) >= E.a
        if self.kind == "reach_segment":
            e = region.p2 - region.p1
            s = float(np.clip((o - region.p1) @ e / (e @ e), 0.0, 1.0))
            return float(np.linalg.norm(region.p1 + s * e - o)) >= E.a
        return float(np.linalg.norm(region - o)) >= E.a

    def _value(self, E):
        region = self.params["region"]
        kind = self.kind
        if kind == "reach_point":
            return point_projection(E, region)[0]
        if kind == "reach_plane":
            return plane_constraint_value(E, region)
        if kind == "reach_segment":
            return segment_constraint_value(E, region.p1, region.p2)
        return polygon_constraint_value(E, region)

    def _jacobian(self, E):
        region = self.params["region"]
        kind = self.kind
        try:
            if kind == "reach_point":
                return point_projection_differential(E, region)
            if kind == "reach_plane":
                return plane_constraint_differential(E, region)
            if kind == "reach_segment":
                return segment_constraint_differential(E, region.p1, region.p2)
            return polygon_constraint_differential(E, region)
        except (DegenerateConfiguration, BoundaryCase):
            return np.zeros((self.output_dim, 2 * self.dim))

    def value_and_jacobian(self, q):
        zero_j = np.zeros((self.output_dim, 2 * self.dim))
        try:
            E = self._ellipsoid(q)
        except InfeasibleVelocity:
            return np.zeros(self.output_dim), zero_j
        if self._far(E):
            return np.zeros(self.output_dim), zero_j
        val = self._value(E)
        if not np.any(val):
            return val, zero_j
        return val, self._jacobian(E)

    def value(self, q):
        try:
            E = self._ellipsoid(q)
        except InfeasibleVelocity:
            return np.zeros(self.output_dim)
        if self._far(E):
            return np.zeros(self.output_dim)
        return self._value(E)

    def jacobian(self, q):
        return self.value_and_jacobian(q)[1]

    def project(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def diagnostic(self, q):
        try:
            self._ellipsoid(q)
        except InfeasibleVelocity as exc:
            return f"InfeasibleVelocity: {exc}"
        return None


def reachability_block(robot: int, t_i: int, t_j: int, region: Region, v_max: float, dim: int) -> ConstraintBlock:
    """Reachability constraint of one robot leg against a point, plane, segment or polygon."""
    if not t_j > t_i:
        raise ValueError("reachability legs need t_j > t_i")
    if isinstance(region, ConvexPolygon):
        if dim != 2:
            raise ValueError("polygon reachability constraints are planar only")
        kind, out = "reach_polygon", dim * len(region.vertices)
    elif isinstance(region, Hyperplane):
        kind, out = "reach_plane", dim
    elif isinstance(region, Segment):
        region = Segment(np.asarray(region.p1, dtype=float), np.asarray(region.p2, dtype=float))
        kind, out = "reach_segment", dim
    else:
        region = np.asarray(region, dtype=float)
        kind, out = "reach_point", dim
    sel = ((robot, t_i), (robot, t_j))
    return ReachabilityBlock(kind, sel, out, dim, {"region": region, "v_max": float(v_max)})


class BlockLayout:
    """Offsets of each block's slice in the stacked copy variable ``z``."""

    def __init__(self, blocks: Sequence[ConstraintBlock]):
        self.blocks = list(blocks)
        sizes = [b.output_dim for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.size = int(self.offsets[-1])

    def slices(self) -> list[slice]:
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def evaluate(self, q: np.ndarray) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.value(q) for b in self.blocks])

    def project(self, z: np.ndarray) -> np.ndarray:
        out = np.empty_like(z)
        for b, sl in zip(self.blocks, self.slices()):
            out[sl] = b.project(z[sl])
        return out
