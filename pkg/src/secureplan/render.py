"""Deterministic SVG plots of scenarios, trajectories, ellipses and flows.

Only the first two coordinates are drawn, so 3-D scenarios are shown from above.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .geometry import InfeasibleVelocity, ellipsoid_from_waypoints, outline

SCALE = 50.0
PAD = 20.0
ROBOT_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")
FLOW_COLORS = ("#ff7f0e", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Canvas:
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)[:2]
        self.hi = np.asarray(hi, dtype=float)[:2]
        self.width = (self.hi[0] - self.lo[0]) * SCALE + 2 * PAD
        self.height = (self.hi[1] - self.lo[1]) * SCALE + 2 * PAD
        self.items: list[str] = []

    def xy(self, p) -> tuple[str, str]:
        x = PAD + (p[0] - self.lo[0]) * SCALE
        y = PAD + (self.hi[1] - p[1]) * SCALE
        return _fmt(x), _fmt(y)

    def points(self, pts) -> str:
        return " ".join(",".join(self.xy(p)) for p in pts)

    def add(self, text: str):
        self.items.append(text)

    def svg(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.width)}" '
            f'height="{_fmt(self.height)}" viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">'
        )
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def _polygons(cv: _Canvas, polys, fill: str, label: str):
    for k, poly in enumerate(polys):
        cv.add(f'<polygon class="{label}" points="{cv.points(poly.vertices)}" fill="{fill}" '
               f'fill-opacity="0.6" stroke="{fill}"><title>{label} {k}</title></polygon>')


def render_svg(sc, q=None, ellipse_legs=(), graph=None, flows=None, title: str | None = None) -> str:
    """SVG for a scenario and whichever run artifacts are available.

    ``ellipse_legs`` lists ``(robot, t1, t2)`` legs whose reachability ellipses
    are outlined; ``graph`` and ``flows`` are the JSON documents of a
    cross-trajectory run, whose cross edges are drawn dashed per flow.
    """
    cv = _Canvas(sc.workspace_min, sc.workspace_max)
    lo, hi = cv.lo, cv.hi
    frame = [lo, (hi[0], lo[1]), hi, (lo[0], hi[1])]
    cv.add(f'<rect width="{_fmt(cv.width)}" height="{_fmt(cv.height)}" fill="white"/>')
    cv.add(f'<polygon class="workspace" points="{cv.points(frame)}" fill="none" stroke="black"/>')
    if title:
        cv.add(f'<title>{escape(title)}</title>')
    _polygons(cv, sc.obstacles, "#808080", "obstacle")
    _polygons(cv, sc.forbidden, "#d62728", "forbidden")

    if q is not None:
        q = np.asarray(q, dtype=float)
        for r, t1, t2 in ellipse_legs:
            try:
                E = ellipsoid_from_waypoints(q[r, t1], q[r, t2], t1, t2, sc.v_max)
            except InfeasibleVelocity:
                continue
            cv.add(f'<polygon class="ellipse" points="{cv.points(outline(E, 72))}" fill="none" '
                   f'stroke="black" stroke-width="0.8"><title>robot {r} t{t1}-t{t2}</title></polygon>')
        for r in range(q.shape[0]):
            color = ROBOT_COLORS[r % len(ROBOT_COLORS)]
            cv.add(f'<polyline class="trajectory" points="{cv.points(q[r])}" fill="none" '
                   f'stroke="{color}" stroke-width="2"><title>robot {r}</title></polyline>')
            for p in q[r]:
                x, y = cv.xy(p)
                cv.add(f'<circle cx="{x}" cy="{y}" r="2" fill="{color}"/>')
        for ev in sc.co_observations:
            if ev.robot_a >= q.shape[0] or ev.robot_b >= q.shape[0] or ev.time >= q.shape[1]:
                continue
            a, b = q[ev.robot_a, ev.time], q[ev.robot_b, ev.time]
            (x1, y1), (x2, y2) = cv.xy(a), cv.xy(b)
            cv.add(f'<line class="co_observation" x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" '
                   f'stroke="#ff7f0e" stroke-width="1.5"><title>co-observation {ev.robot_a}-{ev.robot_b} '
                   f't={ev.time}</title></line>')
            for p in (a, b):
                x, y = cv.xy(p)
                cv.add(f'<circle class="co_observation" cx="{x}" cy="{y}" r="4" fill="none" stroke="#ff7f0e"/>')

    if graph is not None and flows is not None:
        edges = graph["edges"]
        for k, flow in enumerate(flows.get("flows", [])):
            color = FLOW_COLORS[k % len(FLOW_COLORS)]
            for j in flow["edges"]:
                e = edges[j]
                if e["kind"] != "cross" or not e.get("polyline"):
                    continue
                cv.add(f'<polyline class="cross" points="{cv.points(e["polyline"])}" fill="none" '
                       f'stroke="{color}" stroke-width="2" stroke-dasharray="6,4">'
                       f'<title>flow {k}: {escape(e["from"])} to {escape(e["to"])}</title></polyline>')
        for v in graph["vertices"]:
            if v["kind"] == "security":
                x, y = cv.xy((v["x"], v["y"]))
                cv.add(f'<rect class="checkpoint" x="{_fmt(float(x) - 3)}" y="{_fmt(float(y) - 3)}" '
                       f'width="6" height="6" fill="black"><title>{escape(v["id"])}</title></rect>')
    return cv.svg()
