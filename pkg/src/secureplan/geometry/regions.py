"""Ellipsoid versus plane, segment and convex-polygon constraints.

Each ``*_constraint_value`` returns a violation displacement that is zero iff
the ellipsoid is clear of the region; the matching ``*_differential`` maps the
stacked foci rate ``(dq1; dq2)`` to the rate of that displacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ellipsoid import (
    ReachabilityEllipsoid,
    _FociFrame,
    _cut,
    point_projection,
    point_projection_differential,
)
from .rotations import embed3

KINK_TOL = 1e-8


class BoundaryCase(ValueError):
    """The plane constraint is evaluated at a case-split kink."""


class DegenerateSegment(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """``{q : normal . q = offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("hyperplane normal must have unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def through(cls, normal, point) -> "Hyperplane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ np.asarray(point, dtype=float)))


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Planar convex polygon; vertices are stored counter-clockwise.

    Clockwise input is reversed. Edge ``i`` runs from vertex ``i`` to
    vertex ``i + 1``.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("polygon vertices must be an (n, 2) array")
        if len(v) < 3:
            raise ValueError("a polygon needs at least 3 vertices")
        nxt = np.roll(v, -1, axis=0)
        if np.any(np.linalg.norm(nxt - v, axis=1) < 1e-9):
            raise ValueError("polygon has repeated vertices")
        e = nxt - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if not (np.all(cross > 0) or np.all(cross < 0)):
            raise ValueError("polygon is not strictly convex")
        if cross[0] < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def _half_planes(self):
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        outward = np.stack([e[:, 1], -e[:, 0]], axis=1)
        outward /= np.linalg.norm(outward, axis=1, keepdims=True)
        return outward, np.einsum("ij,ij->i", outward, v)

    def signed_depth(self, points) -> np.ndarray:
        """Max over edges of ``n_i . p - d_i``: negative strictly inside."""
        n, d = self._half_planes()
        pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
        return np.max(pts @ n.T - d, axis=1)

    def contains(self, point, strict: bool = True) -> bool:
        depth = float(self.signed_depth(point)[0])
        return depth < -1e-12 if strict else depth <= 1e-12

    def nearest_boundary_point(self, point) -> np.ndarray:
        """Closest boundary point.

        Exact ties (within 1e-12) go to the lexicographically smallest
        candidate, so the answer does not depend on how vertices are listed.
        """
        p = np.asarray(point, dtype=float)[:2]
        cands = []
        for a, b in self.edges:
            ab = b - a
            s = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
            cand = a + s * ab
            cands.append((float(np.linalg.norm(p - cand)), cand))
        best_d = min(d for d, _ in cands)
        tied = [c for d, c in cands if d <= best_d + 1e-12]
        return min(tied, key=lambda c: (c[0], c[1]))

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def inflated(self, margin: float) -> "ConvexPolygon":
        """Polygon whose edge lines are pushed outward by ``margin``."""
        if margin == 0:
            return self
        n, d = self._half_planes()
        d = d + margin
        k = len(n)
        verts = []
        for i in range(k):
            j = (i - 1) % k  # edge i - 1 ends at vertex i
            A = np.stack([n[j], n[i]])
            verts.append(np.linalg.solve(A, np.array([d[j], d[i]])))
        return ConvexPolygon(np.array(verts))


def segments_hit_polygon(p0, p1, poly: ConvexPolygon, tol: float = 1e-12) -> np.ndarray:
    """Vectorized Cyrus-Beck test: does each segment cross the open polygon?

    Segments that only touch or slide along the boundary are not hits.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))[:, :2]
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))[:, :2]
    n, d = poly._half_planes()
    direction = p1 - p0
    num = d[None, :] - p0 @ n.T  # n.(v - p0)
    den = direction @ n.T
    enter = np.zeros(len(p0))
    leave = np.ones(len(p0))
    blocked = np.zeros(len(p0), dtype=bool)
    parallel = np.abs(den) < 1e-15
    blocked |= np.any(parallel & (num <= tol), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(parallel, 0.0, num / np.where(parallel, 1.0, den))
    enter = np.maximum(enter, np.max(np.where(~parallel & (den < 0), s, -np.inf), axis=1))
    leave = np.minimum(leave, np.min(np.where(~parallel & (den > 0), s, np.inf), axis=1))
    seg_len = np.linalg.norm(direction, axis=1)
    overlap = (leave - enter) * np.maximum(seg_len, 1e-300)
    hit = (~blocked) & (overlap > tol)
    # degenerate (zero-length) segments: point-in-polygon
    zero = seg_len < 1e-15
    if np.any(zero):
        hit[zero] = poly.signed_depth(p0[zero]) < -tol
    return hit


class Tangency(NamedTuple):
    d_E: float
    d_Et: float
    p_t1: np.ndarray
    p_t2: np.ndarray
    p_L: np.ndarray


def _tangency3(E: ReachabilityEllipsoid, normal3: np.ndarray, offset: float, rotation=None):
    R = E.rotation if rotation is None else rotation
    n_E = R.T @ normal3
    d_E = offset - float(normal3 @ E.center3)
    k = np.array([E.a**2, E.b**2, E.b**2]) * n_E
    d_Et = float(np.sqrt(n_E @ k))
    p_t1 = k / d_Et
    return Tangency(d_E, d_Et, p_t1, -p_t1, d_E * k / d_Et**2)


def plane_tangency(E: ReachabilityEllipsoid, L: Hyperplane) -> Tangency:
    """Tangent-plane offset, tangent points and tangent interpolation point.

    ``p_t1``, ``p_t2`` and ``p_L`` are canonical-frame coordinates.
    """
    t = _tangency3(E, embed3(L.normal), L.offset)
    dim = E.dim
    return Tangency(t.d_E, t.d_Et, t.p_t1[:dim], t.p_t2[:dim], t.p_L[:dim])


def _plane_displacement3(t: Tangency) -> np.ndarray:
    if abs(t.d_E) > t.d_Et:
        return np.zeros(3)
    tangent = t.p_t1 if t.d_E >= 0 else t.p_t2
    return tangent - t.p_L


def plane_constraint_value(E: ReachabilityEllipsoid, L: Hyperplane) -> np.ndarray:
    """Global displacement from the plane's chord midpoint to the tangent point.

    Zero when the plane misses the ellipsoid.
    """
    t = _tangency3(E, embed3(L.normal), L.offset)
    return (E.rotation @ _plane_displacement3(t))[: E.dim]


def _plane_differential3(E: ReachabilityEllipsoid, normal3: np.ndarray, offset: float) -> np.ndarray:
    fr = _FociFrame(E.focus1, E.focus2, E.a)
    t = _tangency3(E, normal3, offset, rotation=fr.H)
    if abs(t.d_E) > t.d_Et + KINK_TOL:
        return np.zeros((3, 6))
    if abs(abs(t.d_E) - t.d_Et) < KINK_TOL or abs(t.d_E) < KINK_TOL:
        raise BoundaryCase("plane constraint evaluated at a case-split boundary")
    sigma = 1.0 if t.d_E >= 0 else -1.0
    n_E = fr.H @ normal3
    qinv = np.array([E.a**2, fr.B, fr.B])
    k = qinv * n_E
    d_t = t.d_Et
    d_E = t.d_E
    J_nE = fr.J_Hw(normal3)
    J_dE = -normal3 @ fr.J_o
    mask = np.array([0.0, 1.0, 1.0])
    J_k = qinv[:, None] * J_nE + np.outer(mask * n_E, fr.J_B)
    J_dt = (2.0 * k @ J_nE + (n_E @ (mask * n_E)) * fr.J_B) / (2.0 * d_t)
    J_w = sigma * (J_k / d_t - np.outer(k, J_dt) / d_t**2)
    J_w -= np.outer(k, J_dE) / d_t**2 + d_E * J_k / d_t**2 - 2.0 * d_E * np.outer(k, J_dt) / d_t**3
    w = sigma * k / d_t - d_E * k / d_t**2
    return fr.J_Hw(w) + fr.H @ J_w


def plane_constraint_differential(E: ReachabilityEllipsoid, L: Hyperplane) -> np.ndarray:
    """Jacobian of :func:`plane_constraint_value` with respect to the foci.

    Raises
    ------
    BoundaryCase
        Within 1e-8 of the tangency or the centre-plane kink.
    """
    return _cut(_plane_differential3(E, embed3(L.normal), L.offset), E.dim)


def _segment_plane(E: ReachabilityEllipsoid, p1: np.ndarray, p2: np.ndarray):
    """Supporting plane (3-D unit normal, offset) of a segment."""
    e = p2 - p1
    e = e / np.linalg.norm(e)
    if E.dim == 2:
        n = np.array([-e[1], e[0], 0.0])
    else:
        w = p1 - E.center3
        n = w - (w @ e) * e
        if np.linalg.norm(n) < 1e-12:
            for k in range(3):
                ax = np.zeros(3)
                ax[k] = 1.0
                n = ax - (ax @ e) * e
                if np.linalg.norm(n) > 1e-6:
                    break
        n = n / np.linalg.norm(n)
    return n, float(n @ p1)


def _segment_case(E: ReachabilityEllipsoid, p1, p2):
    p1 = embed3(p1)
    p2 = embed3(p2)
    if np.linalg.norm(p2 - p1) < 1e-9:
        raise DegenerateSegment("segment endpoints coincide")
    n, d = _segment_plane(E, p1, p2)
    t = _tangency3(E, n, d)
    c1 = E.rotation.T @ (p1 - E.center3)
    c2 = E.rotation.T @ (p2 - E.center3)
    if (c1 - c2) @ (t.p_L - c2) < 0:
        return "point", p2, t
    if (c2 - c1) @ (t.p_L - c1) < 0:
        return "point", p1, t
    return "plane", (n, d), t


def segment_constraint_value(E: ReachabilityEllipsoid, p1, p2) -> np.ndarray:
    """Violation of a segment: plane case when the chord midpoint projects
    inside the segment, otherwise the point case at the nearer endpoint."""
    kind, data, t = _segment_case(E, p1, p2)
    if kind == "point":
        return point_projection(E, data[: E.dim])[0]
    return (E.rotation @ _plane_displacement3(t))[: E.dim]


def segment_constraint_differential(E: ReachabilityEllipsoid, p1, p2) -> np.ndarray:
    """Jacobian of the active branch of :func:`segment_constraint_value`.

    At the plane-case kinks the zero Jacobian of the inactive side is not
    used; the active branch is differentiated with its plane held fixed.
    """
    kind, data, _ = _segment_case(E, p1, p2)
    if kind == "point":
        return point_projection_differential(E, data[: E.dim])
    try:
        return _cut(_plane_differential3(E, *data), E.dim)
    except BoundaryCase:
        return np.zeros((E.dim, 2 * E.dim))


def _require_planar(E: ReachabilityEllipsoid):
    if E.dim != 2:
        raise ValueError("polygon constraints are defined for planar ellipses only")


def polygon_constraint_value(E: ReachabilityEllipsoid, poly: ConvexPolygon) -> np.ndarray:
    """Stacked segment violations over all polygon edges (``2 * n_edges``).

    All-zero means no edge meets ``E``; containment of ``E`` in the polygon
    is left to the waypoint obstacle constraint.
    """
    _require_planar(E)
    return np.concatenate([segment_constraint_value(E, a, b) for a, b in poly.edges])


def polygon_constraint_differential(E: ReachabilityEllipsoid, poly: ConvexPolygon) -> np.ndarray:
    _require_planar(E)
    return np.vstack([segment_constraint_differential(E, a, b) for a, b in poly.edges])


def ellipsoid_region_intersects(E: ReachabilityEllipsoid, poly: ConvexPolygon) -> bool:
    """Exact overlap test of the open ellipse and the polygon."""
    _require_planar(E)
    if np.any(polygon_constraint_value(E, poly) != 0.0):
        return True
    if any(E.contains(v) for v in poly.vertices):
        return True
    return poly.contains(E.center, strict=False)
