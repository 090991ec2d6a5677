"""RRT* shortest-path trees in a box workspace with convex polygonal blockers.

Blocking polygons are planar; in 3-D workspaces they act as vertical prisms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .geometry import ConvexPolygon, segments_hit_polygon


class RootInCollision(ValueError):
    pass


class NotReached(LookupError):
    pass


@dataclass(frozen=True, eq=False)
class World:
    lo: np.ndarray
    hi: np.ndarray
    blockers: tuple[ConvexPolygon, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "blockers", tuple(self.blockers))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def point_free(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if np.any(p < self.lo - 1e-12) or np.any(p > self.hi + 1e-12):
            return False
        return not any(poly.contains(p[:2], strict=True) for poly in self.blockers)

    def segments_free(self, p0, p1) -> np.ndarray:
        """Vectorized: which of the segments ``p0[k] -> p1[k]`` avoid every blocker."""
        p0 = np.atleast_2d(p0)
        p1 = np.atleast_2d(p1)
        free = np.ones(len(p0), dtype=bool)
        for poly in self.blockers:
            free &= ~segments_hit_polygon(p0, p1, poly)
        return free

    def path_free(self, path) -> bool:
        path = np.asarray(path, dtype=float)
        if len(path) < 2:
            return self.point_free(path[0])
        return bool(np.all(self.segments_free(path[:-1], path[1:])))


def default_gamma(world: World, neighbors: int = 10, at_n: int = 1000) -> float:
    """Rewire constant giving about ``neighbors`` nodes in the radius at ``at_n`` nodes."""
    d = world.dim
    volume = float(np.prod(world.hi - world.lo))
    unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return (neighbors * volume / (unit_ball * math.log(at_n))) ** (1.0 / d)


@dataclass
class RrtParams:
    step: float = 0.5
    max_iter: int = 4000
    goal_tol: float = 0.3
    seed: int = 0
    gamma: float | None = None
    relax: bool = True
    relax_radius: float | None = None


@dataclass(eq=False)
class PlanTree:
    root: np.ndarray
    nodes: np.ndarray
    parent: np.ndarray
    cost: np.ndarray
    rng_seed: int
    world: World = field(repr=False, default=None)
    connect_radius: float = 0.0

    def chain(self, k: int) -> list[int]:
        out = [k]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]


def grow_tree(root, world: World, params: RrtParams | None = None) -> PlanTree:
    """Grow an RRT* tree of ``params.max_iter`` samples rooted at ``root``."""
    params = params or RrtParams()
    root = np.asarray(root, dtype=float)
    if not world.point_free(root):
        raise RootInCollision(f"root {root.tolist()} is outside the workspace or inside a blocker")
    rng = np.random.default_rng(params.seed)
    gamma = params.gamma if params.gamma is not None else default_gamma(world)
    d = world.dim
    cap = params.max_iter + 1
    nodes = np.empty((cap, d))
    parent = np.full(cap, -1, dtype=int)
    cost = np.zeros(cap)
    children: list[list[int]] = [[]]
    nodes[0] = root
    n = 1
    span = world.hi - world.lo
    for _ in range(params.max_iter):
        sample = world.lo + rng.random(d) * span
        diff = nodes[:n] - sample
        dist2 = np.einsum("ij,ij->i", diff, diff)
        near_idx = int(np.argmin(dist2))
        nearest = nodes[near_idx]
        delta = sample - nearest
        length = float(np.sqrt(dist2[near_idx]))
        if length < 1e-12:
            continue
        new = nearest + delta * min(1.0, params.step / length)
        if not world.point_free(new) or not world.segments_free(nearest, new)[0]:
            continue
        radius = gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / d)
        dn = np.linalg.norm(nodes[:n] - new, axis=1)
        nbrs = np.nonzero(dn <= radius)[0]
        if near_idx not in nbrs:
            nbrs = np.append(nbrs, near_idx)
        free = world.segments_free(nodes[nbrs], np.broadcast_to(new, (len(nbrs), d)))
        nbrs = nbrs[free]
        cand = cost[nbrs] + dn[nbrs]
        best = int(nbrs[np.argmin(cand)])
        k = n
        nodes[k] = new
        parent[k] = best
        cost[k] = cost[best] + dn[best]
        children.append([])
        children[best].append(k)
        n += 1
        # rewire through the new node
        others = nbrs[nbrs != best]
        if len(others):
            improved = others[cost[k] + dn[others] < cost[others] - 1e-12]
            for j in improved:
                j = int(j)
                old = parent[j]
                children[old].remove(j)
                parent[j] = k
                children[k].append(j)
                shift = cost[k] + dn[j] - cost[j]
                stack = [j]
                while stack:
                    v = stack.pop()
                    cost[v] += shift
                    stack.extend(children[v])
    nodes, parent, cost = nodes[:n].copy(), parent[:n].copy(), cost[:n].copy()
    radius = 0.0
    if params.relax and n > 1:
        radius = params.relax_radius if params.relax_radius is not None else 3.0 * params.step
        parent, cost = _relax(nodes, parent, world, radius)
    return PlanTree(root, nodes, parent, cost, params.seed, world, radius)


def _relax(nodes: np.ndarray, parent: np.ndarray, world: World, radius: float):
    """Shortest paths from the root over tree edges plus all free edges within ``radius``.

    A batch version of the rewiring step: it settles every node at once, so
    late samples improve the routes of early ones.
    """
    n = len(nodes)
    tree = cKDTree(nodes)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    child = np.arange(1, n)
    links = np.stack([parent[1:], child], axis=1)
    pairs = np.vstack([pairs.reshape(-1, 2), links])
    # coo -> csr sums duplicates, so each undirected pair must appear once
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    free = world.segments_free(nodes[pairs[:, 0]], nodes[pairs[:, 1]])
    pairs = pairs[free]
    w = np.linalg.norm(nodes[pairs[:, 0]] - nodes[pairs[:, 1]], axis=1)
    graph = sp.coo_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=0, return_predecessors=True)
    new_parent = np.where(pred < 0, -1, pred).astype(int)
    new_parent[0] = -1
    # recompute costs along the new parent links so they match edge sums exactly
    order = np.argsort(dist, kind="stable")
    new_cost = np.zeros(n)
    for v in order[1:]:
        p = new_parent[v]
        new_cost[v] = new_cost[p] + np.linalg.norm(nodes[v] - nodes[p])
    return new_parent, new_cost


def query_path(tree: PlanTree, target, tolerance: float, connect_radius: float | None = None):
    """Cheapest tree path ending exactly at ``target``.

    The target counts as reached when some node within ``tolerance`` has a
    collision-free straight leg to it. The returned path is then the cheapest
    root-to-node chain plus straight leg over all nodes within
    ``max(tolerance, connect_radius)`` (default: the tree's relaxation radius),
    in root-to-target order.
    """
    target = np.asarray(target, dtype=float)
    dist = np.linalg.norm(tree.nodes - target, axis=1)
    radius = max(tolerance, tree.connect_radius if connect_radius is None else connect_radius)
    cand = np.nonzero(dist <= radius)[0]
    if tree.world is not None and len(cand):
        legs = tree.world.segments_free(tree.nodes[cand], np.broadcast_to(target, (len(cand), len(target))))
        cand = cand[legs | (dist[cand] == 0)]
    if not np.any(dist[cand] <= tolerance):
        raise NotReached(f"no tree node within {tolerance} of {target.tolist()} with a free final leg")
    total = tree.cost[cand] + dist[cand]
    k = int(cand[np.argmin(total)])
    path = tree.nodes[tree.chain(k)]
    if dist[k] > 0:
        path = np.vstack([path, target])
    return path, float(total[np.argmin(total)])


def path_steps(cost: float, v_max: float) -> int:
    """Whole steps needed to travel ``cost`` at speed ``v_max`` (rounded up)."""
    return int(math.ceil(cost / v_max - 1e-9))


def sample_path(path, spacing: float = 0.05) -> np.ndarray:
    path = np.asarray(path, dtype=float)
    pts = [path[:1]]
    for a, b in zip(path[:-1], path[1:]):
        k = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        s = np.arange(1, k + 1)[:, None] / k
        pts.append(a + s * (b - a))
    return np.vstack(pts)


def make_world(lo, hi, polygons: Sequence[ConvexPolygon]) -> World:
    return World(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), tuple(polygons))
