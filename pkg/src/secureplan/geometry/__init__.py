"""Reachability ellipsoids, canonical frames and region constraints."""

from .ellipsoid import (
    DegenerateConfiguration,
    InfeasibleVelocity,
    ReachabilityEllipsoid,
    canonical_ellipsoid,
    ellipsoid_from_waypoints,
    from_canonical,
    outline,
    point_projection,
    point_projection_differential,
    project_to_boundary,
    to_canonical,
)
from .regions import (
    BoundaryCase,
    ConvexPolygon,
    DegenerateSegment,
    Hyperplane,
    ellipsoid_region_intersects,
    plane_constraint_differential,
    plane_constraint_value,
    plane_tangency,
    polygon_constraint_differential,
    polygon_constraint_value,
    segment_constraint_differential,
    segment_constraint_value,
    segments_hit_polygon,
)
from .rotations import AntipodalInputs, householder, householder_differential, skew

__all__ = [name for name in dir() if not name.startswith("_")]
