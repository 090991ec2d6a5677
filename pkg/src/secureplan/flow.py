"""Multi-flow coverage over a checkpoint flow graph.

K robots each follow at most one source-to-sink path; every security vertex
must lie on some path. The cost of a used path is ``1 - rho * sum(weights)``,
so the solver trades robot count against cross-trajectory rewards.

Because flows are interchangeable and may share edges, the K binary flows
are aggregated into one integer flow ``x_e = sum_k f^k_e`` with
``0 <= x_e <= K`` and at most K units leaving the source. This is a network
flow with node-throughput lower bounds, so LP vertices are integral; a
branch-and-bound layer guards against fractional relaxations anyway. The
integer flow is then decomposed back into K (possibly empty) paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .checkpoint_graph import FlowGraph

INT_TOL = 1e-7


class Infeasible(RuntimeError):
    pass


class RhoTooLarge(ValueError):
    def __init__(self, bound: float, w_star: float):
        super().__init__(f"rho must satisfy rho * W* < 1 with W* = {w_star:g}; admissible bound {bound:g}")
        self.bound = bound
        self.w_star = w_star


@dataclass
class FlowSolution:
    K: int
    flows: list  # per flow: ordered list of edge indices (empty list for an unused flow)
    objective: float
    rho: float
    empty_flows: list = field(default_factory=list)

    @property
    def used(self) -> list:
        return [f for f in self.flows if f]

    def vertex_paths(self, graph: FlowGraph) -> list[list[str]]:
        out = []
        for f in self.flows:
            if not f:
                out.append([])
                continue
            verts = [graph.edges[f[0]].src] + [graph.edges[i].dst for i in f]
            out.append(verts)
        return out


def path_objective(graph: FlowGraph, path: list[int], rho: float) -> float:
    if not path:
        return 0.0
    return 1.0 - rho * math.fsum(graph.edges[i].weight for i in path)


def max_path_weight(graph: FlowGraph) -> float:
    """Largest total weight over source-to-sink paths (DAG longest path)."""
    order = graph.topological_order()
    best = {v: -math.inf for v in graph.vertices}
    best[graph.source] = 0.0
    out: dict[str, list] = {v: [] for v in graph.vertices}
    for e in graph.edges:
        out[e.src].append(e)
    for v in order:
        if best[v] == -math.inf:
            continue
        for e in out[v]:
            cand = best[v] + e.weight
            if cand > best[e.dst]:
                best[e.dst] = cand
    return best[graph.sink]


def validate_rho(graph: FlowGraph, rho: float) -> float:
    """Return ``W*`` if ``rho * W* < 1``; raise :class:`RhoTooLarge` otherwise."""
    w_star = max_path_weight(graph)
    if w_star == -math.inf:
        raise Infeasible("no source-to-sink path")
    if rho * w_star >= 1.0:
        raise RhoTooLarge(1.0 / w_star, w_star)
    return w_star


def _lp_data(graph: FlowGraph, K: int, rho: float):
    n_e = len(graph.edges)
    idx = {v: i for i, v in enumerate(sorted(graph.vertices))}
    inc = np.zeros((len(idx), n_e))
    for j, e in enumerate(graph.edges):
        inc[idx[e.src], j] -= 1.0
        inc[idx[e.dst], j] += 1.0
    internal = [idx[v] for v in sorted(graph.vertices) if v not in (graph.source, graph.sink)]
    A_eq = inc[internal]
    src_out = (-inc[idx[graph.source]]).clip(min=0)
    rows = [src_out]
    b = [float(K)]
    for v in sorted(graph.security_set):
        rows.append(-(inc[idx[v]].clip(min=0)))
        b.append(-1.0)
    c = src_out - rho * np.array([e.weight for e in graph.edges])
    return c, np.array(rows), np.array(b), A_eq, np.zeros(len(internal))


def _branch_and_bound(c, A_ub, b_ub, A_eq, b_eq, K):
    best_x, best_val = None, math.inf
    stack = [(np.zeros(len(c)), np.full(len(c), float(K)))]
    while stack:
        lo, hi = stack.pop()
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq if len(A_eq) else None,
                      b_eq=b_eq if len(A_eq) else None, bounds=list(zip(lo, hi)), method="highs")
        if res.status != 0 or res.fun >= best_val - 1e-12:
            continue
        x = res.x
        frac = np.abs(x - np.round(x))
        j = int(np.argmax(frac))  # first index among equals: ties go to the smaller edge id
        if frac[j] <= INT_TOL:
            best_x, best_val = np.round(x), res.fun
            continue
        up_lo = lo.copy()
        up_lo[j] = math.ceil(x[j])
        down_hi = hi.copy()
        down_hi[j] = math.floor(x[j])
        stack.append((up_lo, hi))
        stack.append((lo, down_hi))
    return best_x


def _decompose(graph: FlowGraph, x: np.ndarray) -> list[list[int]]:
    remaining = x.astype(int).copy()
    out_edges: dict[str, list[int]] = {v: [] for v in graph.vertices}
    for j, e in enumerate(graph.edges):
        out_edges[e.src].append(j)
    paths = []
    while True:
        start = [j for j in out_edges[graph.source] if remaining[j] > 0]
        if not start:
            break
        path = []
        v = graph.source
        while v != graph.sink:
            j = next(j for j in out_edges[v] if remaining[j] > 0)
            remaining[j] -= 1
            path.append(j)
            v = graph.edges[j].dst
        paths.append(path)
    if np.any(remaining):
        raise AssertionError("flow decomposition left residual flow")
    return paths


def solve_cover(graph: FlowGraph, K: int, rho: float) -> FlowSolution:
    """Optimal K-flow cover of the security set; raises :class:`Infeasible`."""
    if K < 1:
        raise ValueError("K must be at least 1")
    c, A_ub, b_ub, A_eq, b_eq = _lp_data(graph, K, rho)
    x = _branch_and_bound(c, A_ub, b_ub, A_eq, b_eq, K)
    if x is None:
        raise Infeasible(f"no {K}-flow covers the {len(graph.security_set)} security checkpoints")
    paths = _decompose(graph, x)
    flows = paths + [[] for _ in range(K - len(paths))]
    objective = math.fsum(path_objective(graph, p, rho) for p in flows)
    empty = [k for k, f in enumerate(flows) if not f]
    return FlowSolution(K, flows, objective, rho, empty)


@dataclass
class MinimalRobots:
    K_min: int
    solution: FlowSolution
    K_solved: int
    infeasible_below: bool | None


def minimal_robots(graph: FlowGraph, rho: float, K_max: int) -> MinimalRobots:
    """Smallest robot count by the increasing-K search.

    Tries K = 1, 2, ... and stops at the first K whose optimum leaves a flow
    empty (or at ``K_max``). ``K_min`` counts the non-empty flows of that
    solution; ``infeasible_below`` records whether ``K_min - 1`` robots were
    confirmed infeasible.
    """
    last = None
    infeasible = set()
    for K in range(1, K_max + 1):
        try:
            sol = solve_cover(graph, K, rho)
        except Infeasible:
            infeasible.add(K)
            continue
        last = sol
        if sol.empty_flows:
            break
    if last is None:
        raise Infeasible(f"no cover with up to K_max={K_max} robots")
    used = len(last.used)
    solution = FlowSolution(used, last.used, last.objective, rho, [])
    below = None
    if used >= 1:
        k = used - 1
        if k == 0:
            below = bool(graph.security_set)
        elif k in infeasible:
            below = True
        else:
            try:
                solve_cover(graph, k, rho)
                below = False
            except Infeasible:
                below = True
    return MinimalRobots(used, solution, last.K, below)


def verify_solution(graph: FlowGraph, solution: FlowSolution) -> dict:
    """Independent re-check of conservation, integrality, coverage and objective."""
    report = {"conservation": [], "integrality": [], "coverage_missing": [], "objective": None,
              "objective_matches": False}
    covered = set()
    total = []
    for k, flow in enumerate(solution.flows):
        counts: dict[int, int] = {}
        for j in flow:
            counts[j] = counts.get(j, 0) + 1
        for j, n in sorted(counts.items()):
            if n > 1 or not 0 <= j < len(graph.edges):
                report["integrality"].append({"flow": k, "edge": j, "count": n})
        balance = {v: 0 for v in graph.vertices}
        for j in counts:
            if 0 <= j < len(graph.edges):
                e = graph.edges[j]
                balance[e.src] -= 1
                balance[e.dst] += 1
                covered.add(e.dst)
        for v in sorted(balance):
            if v in (graph.source, graph.sink):
                continue
            if balance[v] != 0:
                report["conservation"].append({"flow": k, "vertex": v, "imbalance": balance[v]})
        if counts:
            src_out = sum(1 for j in counts if graph.edges[j].src == graph.source)
            if src_out > 1:
                report["integrality"].append({"flow": k, "source_out": src_out})
        total.append(1.0 - solution.rho * math.fsum(graph.edges[j].weight for j in counts if j < len(graph.edges))
                     if counts else 0.0)
    report["coverage_missing"] = sorted(set(graph.security_set) - covered)
    report["objective"] = math.fsum(total)
    report["objective_matches"] = abs(report["objective"] - solution.objective) <= 1e-9
    report["ok"] = (not report["conservation"] and not report["integrality"]
                    and not report["coverage_missing"] and report["objective_matches"])
    return report
