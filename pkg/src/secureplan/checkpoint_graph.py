"""Security checkpoints, cross-trajectory edges and the flow graph built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import ConvexPolygon, InfeasibleVelocity, ellipsoid_from_waypoints, ellipsoid_region_intersects
from .rrt import NotReached, PlanTree, RrtParams, World, grow_tree, path_steps, query_path

SOURCE = "src"
SINK = "snk"

KIND_PRIORITY = {"start": 0, "end": 1, "security": 2, "arrival": 3, "departure": 4}


class NoSecurePartition(ValueError):
    pass


class WeightOrderViolation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Checkpoint:
    subteam: int
    position: np.ndarray
    time: int
    kind: str

    @property
    def id(self) -> str:
        return vertex_id(self.subteam, self.time)


def vertex_id(subteam: int, time: int) -> str:
    return f"p{subteam}t{time}"


def leg_is_clear(q1, q2, t1: int, t2: int, forbidden: Sequence[ConvexPolygon], v_max: float) -> bool:
    """Whether the reachability ellipsoid of the leg avoids every forbidden polygon.

    With no forbidden polygons every leg is clear. Otherwise a leg whose
    ellipsoid cannot be built (speed bound met or exceeded) is not clear.
    """
    if not forbidden:
        return True
    try:
        E = ellipsoid_from_waypoints(q1, q2, t1, t2, v_max)
    except InfeasibleVelocity:
        return False
    return not any(ellipsoid_region_intersects(E, poly) for poly in forbidden)


def generate_checkpoints(trajectory, forbidden: Sequence[ConvexPolygon], v_max: float, subteam: int = 0):
    """Security checkpoints of one sub-team trajectory (bidirectional greedy scan).

    Starting from the whole horizon ``(t0, t1) = (0, T)``: scan forward from
    ``t0`` for the last time whose leg from ``t0`` is clear, scan backward from
    ``t1`` likewise, emit both, and repeat on the gap between them until the
    gap's own leg is clear.
    """
    q = np.asarray(trajectory, dtype=float)
    T = len(q) - 1
    if T < 1:
        raise ValueError("trajectory needs at least two waypoints")

    def clear(i, j):
        return leg_is_clear(q[i], q[j], i, j, forbidden, v_max)

    def fail(i):
        return NoSecurePartition(
            f"sub-team {subteam}: the one-step leg {i}->{i + 1} already meets a forbidden region"
        )

    times = {0, T}
    t0, t1 = 0, T
    while not clear(t0, t1):
        if t1 - t0 <= 1:
            raise fail(t0)
        if not clear(t0, t0 + 1):
            raise fail(t0)
        tf = t0 + 1
        while tf + 1 < t1 and clear(t0, tf + 1):
            tf += 1
        if not clear(t1 - 1, t1):
            raise fail(t1 - 1)
        tb = t1 - 1
        while tb - 1 > t0 and clear(tb - 1, t1):
            tb -= 1
        if tb <= tf:
            # the backward run reaches tf, so tf -> t1 is clear
            times.add(tf)
            break
        times.update((tf, tb))
        t0, t1 = tf, tb
    out = []
    for t in sorted(times):
        kind = "start" if t == 0 else "end" if t == T else "security"
        out.append(Checkpoint(subteam, q[t].copy(), t, kind))
    return out


@dataclass(frozen=True, eq=False)
class CrossLink:
    """A timing- and reachability-feasible path between a checkpoint and a waypoint."""

    checkpoint: Checkpoint
    other: Checkpoint
    direction: str  # "arrival": checkpoint -> other, "departure": other -> checkpoint
    path: np.ndarray
    cost: float
    steps: int

    @property
    def tail(self) -> Checkpoint:
        return self.checkpoint if self.direction == "arrival" else self.other

    @property
    def head(self) -> Checkpoint:
        return self.other if self.direction == "arrival" else self.checkpoint


def find_cross_edges(
    checkpoint: Checkpoint,
    other_trajectories: Mapping[int, np.ndarray],
    world: World,
    forbidden: Sequence[ConvexPolygon],
    v_max: float,
    rrt_params: RrtParams | None = None,
    tree: PlanTree | None = None,
):
    """Earliest arrival and latest departure links from ``checkpoint`` to each other trajectory.

    Returns ``(arrivals, departures)``: two lists of :class:`CrossLink`, at most
    one per other sub-team each. ``world`` should block obstacles and
    forbidden regions alike.
    """
    params = rrt_params or RrtParams()
    if tree is None:
        tree = grow_tree(checkpoint.position, world, params)
    t_cp = checkpoint.time
    arrivals, departures = [], []
    for r in sorted(other_trajectories):
        if r == checkpoint.subteam:
            continue
        traj = np.asarray(other_trajectories[r], dtype=float)
        paths = {}

        def link(t):
            if t not in paths:
                try:
                    paths[t] = query_path(tree, traj[t], params.goal_tol)
                except NotReached:
                    paths[t] = None
            return paths[t]

        for t in range(t_cp + 1, len(traj)):
            found = link(t)
            if found is None:
                continue
            path, cost = found
            steps = path_steps(cost, v_max)
            if t_cp + steps < t and leg_is_clear(checkpoint.position, traj[t], t_cp, t, forbidden, v_max):
                other = Checkpoint(r, traj[t].copy(), t, "arrival")
                arrivals.append(CrossLink(checkpoint, other, "arrival", path, cost, steps))
                break
        for t in range(t_cp - 1, -1, -1):
            found = link(t)
            if found is None:
                continue
            path, cost = found
            steps = path_steps(cost, v_max)
            if t + steps < t_cp and leg_is_clear(traj[t], checkpoint.position, t, t_cp, forbidden, v_max):
                other = Checkpoint(r, traj[t].copy(), t, "departure")
                departures.append(CrossLink(checkpoint, other, "departure", path[::-1].copy(), cost, steps))
                break
    return arrivals, departures


@dataclass(frozen=True, eq=False)
class Edge:
    src: str
    dst: str
    kind: str  # in_trajectory | cross | virtual
    weight: float
    path: np.ndarray | None = None

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.kind)


@dataclass(eq=False)
class FlowGraph:
    vertices: dict  # id -> Checkpoint (None for src/snk)
    edges: list
    security_set: frozenset
    source: str = SOURCE
    sink: str = SINK
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edges = sorted(self.edges, key=lambda e: e.key)
        for e in self.edges:
            if e.src not in self.vertices or e.dst not in self.vertices:
                raise ValueError(f"edge {e.key} references an unknown vertex")
        missing = set(self.security_set) - set(self.vertices)
        if missing:
            raise ValueError(f"security vertices not in graph: {sorted(missing)}")

    def topological_order(self) -> list[str]:
        indeg = {v: 0 for v in self.vertices}
        out = {v: [] for v in self.vertices}
        for e in self.edges:
            indeg[e.dst] += 1
            out[e.src].append(e.dst)
        ready = sorted(v for v, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
            ready.sort()
        if len(order) != len(self.vertices):
            raise ValueError("flow graph has a cycle")
        return order

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
        except ValueError:
            return False
        return True

    def to_json(self) -> dict:
        verts = []
        for vid in sorted(self.vertices, key=_vertex_sort_key):
            cp = self.vertices[vid]
            if cp is None:
                verts.append({"id": vid, "subteam": None, "t": None, "x": None, "y": None, "kind": "virtual"})
                continue
            row = {"id": vid, "subteam": cp.subteam, "t": cp.time,
                   "x": float(cp.position[0]), "y": float(cp.position[1]), "kind": cp.kind}
            if len(cp.position) == 3:
                row["z"] = float(cp.position[2])
            verts.append(row)
        edges = [
            {"from": e.src, "to": e.dst, "kind": e.kind, "weight": float(e.weight),
             "polyline": None if e.path is None else np.asarray(e.path).tolist()}
            for e in self.edges
        ]
        return {"vertices": verts, "edges": edges, "security_set": sorted(self.security_set, key=_vertex_sort_key)}

    @classmethod
    def from_json(cls, doc: dict) -> "FlowGraph":
        vertices = {}
        for v in doc["vertices"]:
            if v["kind"] == "virtual":
                vertices[v["id"]] = None
                continue
            pos = [v["x"], v["y"]] + ([v["z"]] if "z" in v else [])
            vertices[v["id"]] = Checkpoint(v["subteam"], np.array(pos, dtype=float), v["t"], v["kind"])
        edges = [
            Edge(e["from"], e["to"], e["kind"], float(e["weight"]),
                 None if e["polyline"] is None else np.array(e["polyline"], dtype=float))
            for e in doc["edges"]
        ]
        return cls(vertices, edges, frozenset(doc["security_set"]))


def _vertex_sort_key(vid: str):
    if vid == SOURCE:
        return (0, 0, 0)
    if vid == SINK:
        return (2, 0, 0)
    p, t = vid[1:].split("t")
    return (1, int(p), int(t))


def build_flow_graph(
    trajectories: Mapping[int, np.ndarray],
    checkpoints: Mapping[int, Sequence[Checkpoint]],
    cross_links: Sequence[CrossLink],
    w_c: float = 10.0,
    w_t: float = 1.0,
) -> FlowGraph:
    """Chain each sub-team's checkpoints and link endpoints, add cross and virtual edges.

    Weights: in-trajectory ``-w_t``, cross ``w_c``, virtual ``0``.
    """
    if not w_c > w_t:
        raise WeightOrderViolation(f"need w_c > w_t, got w_c={w_c}, w_t={w_t}")
    per_team: dict[int, dict[int, Checkpoint]] = {}
    for team, cps in checkpoints.items():
        slot = per_team.setdefault(team, {})
        prev = -1
        for cp in cps:
            if cp.time <= prev:
                raise ValueError(f"checkpoints of sub-team {team} must be sorted by time")
            prev = cp.time
            slot[cp.time] = cp
    for link in cross_links:
        for cp in (link.checkpoint, link.other):
            slot = per_team.setdefault(cp.subteam, {})
            cur = slot.get(cp.time)
            if cur is None or KIND_PRIORITY[cp.kind] < KIND_PRIORITY[cur.kind]:
                slot[cp.time] = cp
    vertices: dict = {SOURCE: None, SINK: None}
    edges: list[Edge] = []
    security = set()
    for team in sorted(per_team):
        chain = [per_team[team][t] for t in sorted(per_team[team])]
        for cp in chain:
            vertices[cp.id] = cp
            if cp.kind == "security":
                security.add(cp.id)
        for a, b in zip(chain[:-1], chain[1:]):
            edges.append(Edge(a.id, b.id, "in_trajectory", -float(w_t)))
        edges.append(Edge(SOURCE, chain[0].id, "virtual", 0.0))
        edges.append(Edge(chain[-1].id, SINK, "virtual", 0.0))
    seen = set()
    for link in cross_links:
        key = (link.tail.id, link.head.id)
        if key in seen:
            continue
        seen.add(key)
        edges.append(Edge(key[0], key[1], "cross", float(w_c), np.asarray(link.path, dtype=float)))
    graph = FlowGraph(vertices, edges, frozenset(security), meta={"w_c": float(w_c), "w_t": float(w_t)})
    graph.topological_order()
    return graph


def build_checkpoint_graph(
    trajectories: Mapping[int, np.ndarray],
    world: World,
    forbidden: Sequence[ConvexPolygon],
    v_max: float,
    w_c: float = 10.0,
    w_t: float = 1.0,
    rrt_params: RrtParams | None = None,
):
    """Full construction: checkpoints, one RRT* tree per source checkpoint, graph.

    Returns ``(graph, checkpoints, links)``.
    """
    params = rrt_params or RrtParams()
    checkpoints = {
        team: generate_checkpoints(traj, forbidden, v_max, team) for team, traj in sorted(trajectories.items())
    }
    links: list[CrossLink] = []
    for team in sorted(checkpoints):
        for cp in checkpoints[team]:
            arr, dep = find_cross_edges(cp, trajectories, world, forbidden, v_max, params)
            links.extend(arr)
            links.extend(dep)
    graph = build_flow_graph(trajectories, checkpoints, links, w_c, w_t)
    return graph, checkpoints, links
