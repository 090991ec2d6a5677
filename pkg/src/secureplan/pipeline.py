"""Stage orchestration: unsecured planning, secured planning, cross-trajectory scheduling.

The solver works on slightly tightened constraints (speeds, proximity radii,
obstacle outlines) and slightly enlarged reachability ellipses, so that the
returned plan satisfies the nominal constraints with room to spare; the
checks in :func:`verify_plan` then run on the nominal values only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import AdmmResult, solve
from .checkpoint_graph import WeightOrderViolation, build_checkpoint_graph
from .constraints import (
    CoObservationEvent,
    co_observation_block,
    obstacle_block,
    reachability_block,
    velocity_block,
    workspace_block,
)
from .flow import FlowSolution, minimal_robots, solve_cover, validate_rho, verify_solution, Infeasible
from .geometry import (
    InfeasibleVelocity,
    ellipsoid_from_waypoints,
    ellipsoid_region_intersects,
    outline,
)
from .objective import ExplorationObjective, FieldGrid
from .rrt import World
from .scenario_io import Scenario

SPEED_TOL = 1e-6
DIST_TOL = 1e-6


def initial_guess(sc: Scenario) -> np.ndarray:
    """Straight-line interpolation from start to goal for every robot."""
    s = np.linspace(0.0, 1.0, sc.T + 1)[None, :, None]
    starts = np.array([r.start for r in sc.robots])[:, None, :]
    goals = np.array([r.goal for r in sc.robots])[:, None, :]
    return starts + s * (goals - starts)


def fixed_mask(sc: Scenario) -> np.ndarray:
    mask = np.zeros((sc.n_robots, sc.T + 1), dtype=bool)
    mask[:, 0] = True
    mask[:, -1] = True
    return mask


def make_objective(sc: Scenario):
    if sc.grid.weight == 0:
        return None
    g = sc.grid
    grid = FieldGrid.over_workspace(sc.workspace_min, sc.workspace_max, g.shape, g.P0,
                                    process_noise=g.process_noise, sigma_meas=g.sigma_meas, ell=g.ell)
    return ExplorationObjective(grid, weight=g.weight)


def reach_pairs(sc: Scenario) -> list[tuple[int, int, int]]:
    """``(robot, t_i, t_j)`` for consecutive observation times; start and goal count as observed."""
    out = []
    for r in range(sc.n_robots):
        times = {0, sc.T}
        for ev in sc.co_observations:
            if r in (ev.robot_a, ev.robot_b):
                times.add(ev.time)
        times = sorted(times)
        out.extend((r, a, b) for a, b in zip(times[:-1], times[1:]))
    return out


def schedule_conflicts(sc: Scenario) -> list[str]:
    """Co-observation events the speed limit rules out before any optimization.

    Robot ``r`` at step ``t`` lies within ``v_max * t`` of its start and within
    ``v_max * (T - t)`` of its goal, so each pair of anchors gives a lower
    bound on the meeting distance.
    """
    out = []
    v = sc.v_max
    for ev in sc.co_observations:
        ra, rb = sc.robots[ev.robot_a], sc.robots[ev.robot_b]
        t, rest = ev.time, sc.T - ev.time
        anchors_a = ((ra.start, v * t), (ra.goal, v * rest))
        anchors_b = ((rb.start, v * t), (rb.goal, v * rest))
        gap = max(float(np.linalg.norm(pa - pb)) - da - db for pa, da in anchors_a for pb, db in anchors_b)
        if gap > ev.d_max:
            out.append(f"co_observation[r{ev.robot_a}t{t}, r{ev.robot_b}t{t}]: robots are at least "
                       f"{gap:.4g} m apart at t={t} (d_max {ev.d_max:g})")
    return out


def plan_blocks(sc: Scenario, margin: float | None = None) -> list:
    margin = sc.admm.margin if margin is None else margin
    m = sc.dimension
    pad = margin * sc.v_max
    blockers = [p.inflated(pad) for p in list(sc.obstacles) + list(sc.forbidden)]
    lo = sc.workspace_min + pad
    hi = sc.workspace_max - pad
    blocks = []
    for r in range(sc.n_robots):
        for t in range(sc.T):
            blocks.append(velocity_block(r, t, sc.v_max * (1.0 - margin), m))
        for t in range(1, sc.T):
            blocks.append(workspace_block(r, t, lo, hi))
            for poly in blockers:
                blocks.append(obstacle_block(r, t, poly, m))
    return blocks


def secure_blocks(sc: Scenario, margin: float | None = None) -> list:
    margin = sc.admm.margin if margin is None else margin
    blocks = plan_blocks(sc, margin)
    for ev in sc.co_observations:
        tight = CoObservationEvent(ev.robot_a, ev.robot_b, ev.time, ev.d_max * (1.0 - margin))
        blocks.append(co_observation_block(tight, sc.dimension))
    for r, ti, tj in reach_pairs(sc):
        for poly in sc.forbidden:
            blocks.append(reachability_block(r, ti, tj, poly, sc.v_max * (1.0 + margin), sc.dimension))
    return blocks


def run_admm(sc: Scenario, blocks, raise_on_divergence: bool = True, secure: bool = False) -> AdmmResult:
    q0 = initial_guess(sc)
    return solve(q0, make_objective(sc), blocks, sc.admm.for_stage(secure), fixed=fixed_mask(sc),
                 raise_on_divergence=raise_on_divergence)


def leg_sampling_hits(E, poly, n_boundary: int = 4000, n_edge: int = 400) -> bool:
    """Sampling oracle for ``E`` meeting ``poly``: boundary samples of each in the other."""
    pts = outline(E, n_boundary)
    if np.any(poly.signed_depth(pts) < -1e-9):
        return True
    s = np.linspace(0.0, 1.0, n_edge, endpoint=False)[:, None]
    for a, b in poly.edges:
        for p in a + s * (b - a):
            if E.level(p) < -1e-9:
                return True
    return poly.contains(E.center, strict=False)


def check_reachability(sc: Scenario, q: np.ndarray, pairs=None) -> list[dict]:
    rows = []
    pairs = reach_pairs(sc) if pairs is None else pairs
    for r, ti, tj in pairs:
        for k, poly in enumerate(sc.forbidden):
            row = {"robot": r, "t1": ti, "t2": tj, "forbidden": k}
            try:
                E = ellipsoid_from_waypoints(q[r, ti], q[r, tj], ti, tj, sc.v_max)
            except InfeasibleVelocity as exc:
                row.update(ok=False, reason=f"InfeasibleVelocity: {exc}")
                rows.append(row)
                continue
            exact = ellipsoid_region_intersects(E, poly)
            sampled = leg_sampling_hits(E, poly)
            row.update(ok=not (exact or sampled), exact_hit=bool(exact), sampled_hit=bool(sampled))
            rows.append(row)
    return rows


def verify_plan(sc: Scenario, q: np.ndarray, secure: bool) -> dict:
    """Independent feasibility and security checks on the nominal constraints."""
    q = np.asarray(q, dtype=float)
    checks = []
    steps = np.linalg.norm(np.diff(q, axis=1), axis=2)
    worst = float(steps.max()) if steps.size else 0.0
    checks.append({"name": "velocity", "ok": worst <= sc.v_max + SPEED_TOL, "worst_step": worst})
    ends = max(
        max(float(np.linalg.norm(q[r, 0] - rb.start)), float(np.linalg.norm(q[r, -1] - rb.goal)))
        for r, rb in enumerate(sc.robots)
    )
    checks.append({"name": "endpoints", "ok": ends <= 1e-9, "worst_offset": ends})
    flat = q.reshape(-1, q.shape[2])
    out_ws = float(np.max(np.maximum(sc.workspace_min - flat, flat - sc.workspace_max)))
    checks.append({"name": "workspace", "ok": out_ws <= 1e-9, "worst_excess": max(out_ws, 0.0)})
    for label, polys in (("obstacle", sc.obstacles), ("forbidden_waypoint", sc.forbidden)):
        depth = min((float(np.min(p.signed_depth(flat))) for p in polys), default=np.inf)
        checks.append({"name": label, "ok": bool(depth >= -1e-9),
                       "min_depth": None if depth == np.inf else depth})
    if secure:
        gaps = []
        for ev in sc.co_observations:
            d = float(np.linalg.norm(q[ev.robot_a, ev.time] - q[ev.robot_b, ev.time]))
            gaps.append({"a": ev.robot_a, "b": ev.robot_b, "t": ev.time, "distance": d, "d_max": ev.d_max,
                         "ok": d <= ev.d_max + DIST_TOL})
        checks.append({"name": "co_observation", "ok": all(g["ok"] for g in gaps), "events": gaps})
        legs = check_reachability(sc, q)
        checks.append({"name": "reachability", "ok": all(leg["ok"] for leg in legs), "legs": legs})
    return {"ok": all(c["ok"] for c in checks), "checks": checks}


def world_of(sc: Scenario) -> World:
    return World(sc.workspace_min, sc.workspace_max, tuple(sc.obstacles) + tuple(sc.forbidden))


@dataclass
class CtcoResult:
    graph: object
    checkpoints: dict
    links: list
    w_star: float
    K_min: int
    solution: FlowSolution
    infeasible_below: bool | None
    verification: dict
    K_solved: int


def run_ctco(sc: Scenario, q: np.ndarray, K_max: int | None = None) -> CtcoResult:
    """Checkpoints, cross edges, flow graph and the minimal-robot flow cover."""
    if not sc.flow.w_c > sc.flow.w_t:
        raise WeightOrderViolation(f"need w_c > w_t, got w_c={sc.flow.w_c}, w_t={sc.flow.w_t}")
    trajectories = {p: np.asarray(q[p], dtype=float) for p in range(q.shape[0])}
    graph, checkpoints, links = build_checkpoint_graph(
        trajectories, world_of(sc), sc.forbidden, sc.v_max, sc.flow.w_c, sc.flow.w_t, sc.rrt
    )
    w_star = validate_rho(graph, sc.flow.rho)
    k_max = K_max or sc.flow.K_max or (len(trajectories) + 1)
    found = minimal_robots(graph, sc.flow.rho, k_max)
    report = verify_solution(graph, found.solution)
    return CtcoResult(graph, checkpoints, links, w_star, found.K_min, found.solution,
                      found.infeasible_below, report, found.K_solved)


__all__ = [
    "initial_guess", "fixed_mask", "make_objective", "reach_pairs", "plan_blocks", "secure_blocks",
    "run_admm", "verify_plan", "schedule_conflicts", "check_reachability", "run_ctco", "CtcoResult", "world_of",
    "solve_cover", "Infeasible",
]
