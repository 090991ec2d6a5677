"""Reachability ellipsoids and the point-to-ellipsoid projection.

Between two time-stamped waypoints a speed-bounded robot stays inside the
ellipsoid whose foci are the waypoints and whose semi-major radius is
``a = v_max * (t2 - t1) / 2``. Everything is computed in 3-D; planar inputs
are embedded at ``z = 0`` and results are cut back to the input dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotations import embed3, householder, householder_m_matrix, skew

INSIDE_TOL = 1e-12
ROOT_TOL = 1e-12
ROOT_MAX_ITER = 200
DEGENERATE_REL = 1e-9
AXIS_TIE_TOL = 1e-12
AXIS_DIFF_TOL = 1e-6

_E1 = np.array([1.0, 0.0, 0.0])


class InfeasibleVelocity(ValueError):
    """The two waypoints are not mutually reachable (or only along a segment)."""


class DegenerateConfiguration(ValueError):
    """The projection is not differentiable at this configuration."""


@dataclass(frozen=True, eq=False)
class ReachabilityEllipsoid:
    """Ellipsoid with foci at two waypoints.

    ``rotation`` maps canonical coordinates to global ones:
    ``global = rotation @ canonical + center`` (3-D, planar data at z = 0).
    """

    focus1: np.ndarray
    focus2: np.ndarray
    t1: float
    t2: float
    a: float
    c: float
    b: float
    center: np.ndarray
    rotation: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.focus1.shape[0])

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.a**-2, self.b**-2, self.b**-2])

    @property
    def Q_inv(self) -> np.ndarray:
        return np.diag([self.a**2, self.b**2, self.b**2])

    @property
    def center3(self) -> np.ndarray:
        return embed3(self.center)

    def canonical3(self, p) -> np.ndarray:
        return self.rotation.T @ (embed3(p) - self.center3)

    def level(self, p) -> float:
        """Canonical quadric value ``q^T Q q - 1`` (negative inside)."""
        q = self.canonical3(p)
        return float(q @ (q / np.array([self.a**2, self.b**2, self.b**2]))) - 1.0

    def contains(self, p) -> bool:
        """Strict interior test; boundary points count as outside."""
        return self.level(p) < -INSIDE_TOL


def ellipsoid_from_waypoints(q1, q2, t1, t2, v_max) -> ReachabilityEllipsoid:
    """Reachability ellipsoid of the leg ``(q1, t1) -> (q2, t2)``.

    Raises
    ------
    InfeasibleVelocity
        If ``a <= c + 1e-9 a``: the waypoints are farther apart than the speed
        bound allows, or only reachable along the straight segment.
    """
    if not t2 > t1:
        raise ValueError("t2 must be greater than t1")
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    if q1.shape != q2.shape or q1.shape[0] not in (2, 3):
        raise ValueError("foci must be 2-D or 3-D points of equal dimension")
    a = 0.5 * v_max * (t2 - t1)
    dist = float(np.linalg.norm(q2 - q1))
    c = 0.5 * dist
    if a <= c + DEGENERATE_REL * a:
        raise InfeasibleVelocity(
            f"waypoints {dist:.6g} m apart cannot be linked with major radius {a:.6g} m"
        )
    b = float(np.sqrt((a - c) * (a + c)))
    if dist == 0.0:
        rotation = np.eye(3)
    else:
        rotation = householder(embed3((q2 - q1) / dist), _E1, allow_antipodal=True)
    return ReachabilityEllipsoid(q1, q2, float(t1), float(t2), a, c, b, 0.5 * (q1 + q2), rotation)


def canonical_ellipsoid(a: float, b: float, dim: int = 2, center=None) -> ReachabilityEllipsoid:
    """Axis-aligned ellipsoid with identity rotation, mostly for tests and examples."""
    if not a >= b > 0:
        raise ValueError("need a >= b > 0")
    c = float(np.sqrt(a * a - b * b))
    o = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    e = np.zeros(dim)
    e[0] = c
    return ReachabilityEllipsoid(o - e, o + e, 0.0, 1.0, float(a), c, float(b), o, np.eye(3))


def to_canonical(E: ReachabilityEllipsoid, p) -> np.ndarray:
    return E.canonical3(p)[: E.dim]


def from_canonical(E: ReachabilityEllipsoid, p) -> np.ndarray:
    return (E.rotation @ embed3(p) + E.center3)[: E.dim]


def outline(E: ReachabilityEllipsoid, n: int = 128) -> np.ndarray:
    """Boundary polyline of the in-plane section (for plotting)."""
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    canon = np.stack([E.a * np.cos(theta), E.b * np.sin(theta), np.zeros(n)], axis=1)
    return (canon @ E.rotation.T + E.center3)[:, : E.dim]


def _solve_t(x2: float, r2: float, a: float, b: float, c: float, hi: float) -> float:
    """Root ``t = s + b^2`` of ``a^2 x^2/(c^2+t)^2 + b^2 r^2/t^2 - 1`` on (0, hi)."""
    c2 = c * c

    def f(t):
        return a * a * x2 / (c2 + t) ** 2 + b * b * r2 / (t * t) - 1.0

    def fp(t):
        return -2.0 * a * a * x2 / (c2 + t) ** 3 - 2.0 * b * b * r2 / t**3

    lo = 0.0
    t = hi
    for _ in range(ROOT_MAX_ITER):
        val = f(t)
        if abs(val) < ROOT_TOL:
            break
        if val > 0:
            lo = t
        else:
            hi = t
        nxt = t - val / fp(t)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
        t = nxt
    return t


def _boundary_canonical(q: np.ndarray, a: float, b: float, c: float):
    """Closest boundary point to an interior canonical point.

    Returns ``(p, t, case)`` with ``case`` one of ``"regular"``, ``"vertex"``
    (on the major axis, nearest point is a vertex) or ``"tie"`` (on the major
    axis, a ring of nearest points; resolved to positive second coordinate).
    """
    x = q[0]
    r = float(np.hypot(q[1], q[2]))
    if r <= AXIS_TIE_TOL * a:
        t = a * abs(x) - c * c
        if t > 0:
            return np.array([np.sign(x) * a, 0.0, 0.0]), t, "vertex"
        p1 = a * a * x / (c * c) if c > 0 else 0.0
        p1 = float(np.clip(p1, -a, a))
        p2 = b * np.sqrt(max(0.0, 1.0 - (p1 / a) ** 2))
        return np.array([p1, p2, 0.0]), 0.0, "tie"
    s_hi = float(np.linalg.norm(q)) * a + a * a
    t = _solve_t(x * x, r * r, a, b, c, s_hi + b * b)
    p = np.array([a * a * x / (c * c + t), b * b * q[1] / t, b * b * q[2] / t])
    return p, t, "regular"


def project_to_boundary(E: ReachabilityEllipsoid, q_avoid):
    """Nearest point outside-or-on ``E`` to ``q_avoid``; returns ``(point, inside)``."""
    q_avoid = np.asarray(q_avoid, dtype=float)
    q = E.canonical3(q_avoid)
    if not E.contains(q_avoid):
        return q_avoid.copy(), False
    p, _, _ = _boundary_canonical(q, E.a, E.b, E.c)
    return from_canonical(E, p), True


def point_projection(E: ReachabilityEllipsoid, q_avoid):
    """Violation displacement ``pi(q_avoid) - q_avoid`` and the inside flag.

    Zero displacement for points outside or on the boundary.
    """
    point, inside = project_to_boundary(E, q_avoid)
    return point - np.asarray(q_avoid, dtype=float), inside


class _FociFrame:
    """Canonical frame of two foci plus the linear maps of its rates.

    All Jacobians act on the stacked 3-D foci rate ``(dq1, dq2)`` (6-vector).
    The canonical first axis is taken as ``+-e1``, whichever is closer to the
    foci direction, so the bisector never degenerates; intrinsic quantities
    (projected points, violations) do not depend on that choice.
    """

    def __init__(self, q1, q2, a: float):
        q1 = embed3(q1)
        q2 = embed3(q2)
        nu_p = q2 - q1
        length = float(np.linalg.norm(nu_p))
        if length < 1e-12:
            raise DegenerateConfiguration("coincident foci: the foci direction is undefined")
        nu = nu_p / length
        nu_e = _E1 if nu[0] >= 0 else -_E1
        self.H = householder(nu, nu_e)
        M = householder_m_matrix(nu, nu_e)
        eye = np.eye(3)
        J_nu_p = np.hstack([-eye, eye])
        self.J_o = 0.5 * np.hstack([eye, eye])
        self.J_Mnu = M @ ((eye - np.outer(nu, nu)) @ J_nu_p / length)
        self.a = a
        self.c = 0.5 * length
        self.B = (a - self.c) * (a + self.c)
        self.b = float(np.sqrt(self.B))
        J_c = 0.5 * nu @ J_nu_p
        self.J_B = -2.0 * self.c * J_c
        self.o = 0.5 * (q1 + q2)

    def J_Hw(self, w) -> np.ndarray:
        """Jacobian of ``H(t) w`` for a fixed vector ``w``."""
        return 2.0 * self.H @ skew(w) @ self.J_Mnu


def point_projection_differential(E: ReachabilityEllipsoid, q_avoid) -> np.ndarray:
    """Jacobian of the projected point with respect to the stacked foci.

    Returns a ``dim x 2 dim`` matrix mapping ``(dq1; dq2)`` to the rate of
    ``pi(q_avoid)``; it is also the Jacobian of the violation since
    ``q_avoid`` is fixed. Zero when ``q_avoid`` is not inside ``E``.

    Raises
    ------
    DegenerateConfiguration
        For coincident foci, or when ``q_avoid`` sits on the foci line where a
        ring of nearest points makes the projection non-differentiable.
    """
    dim = E.dim
    if not E.contains(q_avoid):
        return np.zeros((dim, 2 * dim))
    fr = _FociFrame(E.focus1, E.focus2, E.a)
    a, b, c, B = fr.a, fr.b, fr.c, fr.B
    w0 = embed3(q_avoid) - fr.o
    q = fr.H @ w0
    r = float(np.hypot(q[1], q[2]))
    if r < AXIS_DIFF_TOL and a * abs(q[0]) - c * c <= 0:
        raise DegenerateConfiguration("avoid point on the foci line inside the tie region")
    p, t, _ = _boundary_canonical(q, a, b, c)

    J_q = fr.J_Hw(w0) - fr.H @ fr.J_o
    A = np.array([a * a, B, B])
    den = np.array([c * c + t, t, t])
    s = t - B
    dG_dq = 2.0 * A * q / den**2
    dG_ds = -2.0 * np.sum(A * q * q / den**3)
    dG_dB = np.sum((q[1:] ** 2) * (s - B) / den[1:] ** 3)
    J_s = -(dG_dq @ J_q + dG_dB * fr.J_B) / dG_ds
    J_p = (A / den)[:, None] * J_q - (A * q / den**2)[:, None] * J_s[None, :]
    J_p[1:] += np.outer(q[1:] * s / den[1:] ** 2, fr.J_B)

    J = fr.J_Hw(p) + fr.H @ J_p + fr.J_o
    return _cut(J, dim)


def _cut(J3: np.ndarray, dim: int) -> np.ndarray:
    if dim == 3:
        return J3
    return J3[:2][:, [0, 1, 3, 4]]
