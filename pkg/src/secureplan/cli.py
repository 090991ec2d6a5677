"""Command-line entry point: ``secureplan {plan,secure,ctco,render}``.

Exit codes: 0 success, 2 validation, 3 divergence, 4 security verification
failed, 5 flow infeasible. Stage timings go to stderr so that every file in
the output directory depends only on the inputs and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .admm import AdmmResult
from .checkpoint_graph import NoSecurePartition, WeightOrderViolation
from .flow import Infeasible, RhoTooLarge
from .pipeline import (
    plan_blocks,
    reach_pairs,
    run_admm,
    run_ctco,
    schedule_conflicts,
    secure_blocks,
    verify_plan,
)
from .render import render_svg
from .scenario_io import (
    IoError,
    ParseError,
    RunArtifacts,
    Scenario,
    ValidationError,
    bundled_scenario_path,
    load_scenario,
    read_json,
    read_trajectories,
    write_outputs,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_INSECURE = 4
EXIT_INFEASIBLE = 5

log = logging.getLogger("secureplan")


class StageError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_scenario(name: str) -> Scenario:
    path = Path(name)
    if not path.exists():
        bundled = bundled_scenario_path(name)
        if not bundled.exists():
            raise IoError(f"no scenario file or bundled scenario named {name!r}")
        path = bundled
    return load_scenario(path)


def _apply_seed(sc: Scenario, seed: int | None) -> Scenario:
    if seed is None:
        return sc
    sc.admm = dataclasses.replace(sc.admm, seed=seed)
    sc.rrt = dataclasses.replace(sc.rrt, seed=seed)
    return sc


def _parameters(sc: Scenario) -> dict:
    rrt = dataclasses.asdict(sc.rrt)
    return {
        "admm": {**dataclasses.asdict(sc.admm.params), "margin": sc.admm.margin,
                 "secure": None if sc.admm.secure_params is None else dataclasses.asdict(sc.admm.secure_params)},
        "grid": {**dataclasses.asdict(sc.grid), "shape": list(sc.grid.shape)},
        "rrt": rrt,
        "flow": dataclasses.asdict(sc.flow),
        "v_max": sc.v_max,
        "T": sc.T,
    }


def base_report(sc: Scenario, stage: str) -> dict:
    return {
        "stage": stage,
        "scenario": sc.name,
        "input_hash": sc.input_hash,
        "seeds": {"admm": sc.admm.seed, "rrt": sc.rrt.seed},
        "parameters": _parameters(sc),
        "warnings": list(sc.warnings),
        "diagnostics": [],
    }


def admm_summary(res: AdmmResult) -> dict:
    return {
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "primal_residual": float(res.primal_residual),
        "dual_residual": float(res.dual_residual),
        "max_violation": float(res.max_violation),
        "history": [[float(p), float(d)] for p, d in res.history],
        "worst_blocks": res.worst_blocks(10),
    }


def _timed(label: str, fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    print(f"[secureplan] {label}: {time.perf_counter() - t0:.3f} s", file=sys.stderr)
    return out


def optimize(sc: Scenario, secure: bool, report: dict) -> tuple[np.ndarray, int]:
    if secure:
        conflicts = schedule_conflicts(sc)
        if conflicts:
            report["diagnostics"].extend(conflicts)
            raise StageError(EXIT_DIVERGED, "infeasible co-observation schedule: " + "; ".join(conflicts))
    blocks = secure_blocks(sc) if secure else plan_blocks(sc)
    res = _timed("admm", run_admm, sc, blocks, raise_on_divergence=False, secure=secure)
    report["admm"] = admm_summary(res)
    report["diagnostics"].extend(res.diagnostics)
    verification = _timed("verify", verify_plan, sc, res.q, secure)
    report["verification"] = verification
    if not res.converged:
        worst = ", ".join(r["block"] for r in res.worst_blocks(3))
        report["diagnostics"].append(f"ADMM did not converge in {res.iterations} iterations; worst blocks: {worst}")
        return res.q, EXIT_DIVERGED
    if not verification["ok"]:
        failed = [c["name"] for c in verification["checks"] if not c["ok"]]
        report["diagnostics"].append("verification failed: " + ", ".join(failed))
        return res.q, EXIT_INSECURE
    return res.q, EXIT_OK


def cmd_optimize(args, secure: bool) -> int:
    sc = _apply_seed(resolve_scenario(args.scenario), args.seed)
    stage = "secure" if secure else "plan"
    report = base_report(sc, stage)
    q = None
    try:
        q, code = optimize(sc, secure, report)
    except StageError as exc:
        code = exc.code
        report["error"] = str(exc)
    report["exit_code"] = code
    legs = reach_pairs(sc) if secure and sc.forbidden else ()
    svg = render_svg(sc, q, legs, title=f"{sc.name} {stage}")
    write_outputs(RunArtifacts(report, q, svg=svg), args.out)
    return code


def flows_document(res) -> dict:
    return {
        "K_min": res.K_min,
        "K_solved": res.K_solved,
        "infeasible_below": res.infeasible_below,
        "objective": res.solution.objective,
        "rho": res.solution.rho,
        "w_star": res.w_star,
        "flows": [{"edges": list(f), "vertices": v}
                  for f, v in zip(res.solution.flows, res.solution.vertex_paths(res.graph))],
        "verification": res.verification,
    }


def cmd_ctco(args) -> int:
    sc = _apply_seed(resolve_scenario(args.scenario), args.seed)
    report = base_report(sc, "ctco")
    if args.trajectories:
        q = read_trajectories(args.trajectories)
        expected = (sc.n_robots, sc.T + 1, sc.dimension)
        if q.shape != expected:
            raise ValidationError("trajectories", f"shape {q.shape} does not match scenario {expected}")
        report["trajectories_source"] = "file"
    else:
        q, code = optimize(sc, False, report)
        report["trajectories_source"] = "plan"
        if code != EXIT_OK:
            report["exit_code"] = code
            write_outputs(RunArtifacts(report, q, svg=render_svg(sc, q)), args.out)
            return code
    graph_doc = flows_doc = None
    try:
        res = _timed("ctco", run_ctco, sc, q, args.k_max)
        graph_doc = res.graph.to_json()
        flows_doc = flows_document(res)
        report["checkpoints"] = {str(k): [c.time for c in v] for k, v in sorted(res.checkpoints.items())}
        report["cross_links"] = len(res.links)
        report["K_min"] = res.K_min
        report["infeasible_below"] = res.infeasible_below
        code = EXIT_OK if res.verification["ok"] else EXIT_INSECURE
        if code != EXIT_OK:
            report["diagnostics"].append("flow verification failed")
    except (WeightOrderViolation, RhoTooLarge) as exc:
        code, report["error"] = EXIT_VALIDATION, f"{type(exc).__name__}: {exc}"
    except NoSecurePartition as exc:
        code, report["error"] = EXIT_INSECURE, f"NoSecurePartition: {exc}"
    except Infeasible as exc:
        code, report["error"] = EXIT_INFEASIBLE, f"Infeasible: {exc}"
    report["exit_code"] = code
    svg = render_svg(sc, q, graph=graph_doc, flows=flows_doc, title=f"{sc.name} ctco")
    write_outputs(RunArtifacts(report, q, graph_doc, flows_doc, svg), args.out)
    return code


def cmd_render(args) -> int:
    sc = resolve_scenario(args.scenario)
    src = Path(args.artifacts or args.out)
    q = read_trajectories(src / "trajectories.csv") if (src / "trajectories.csv").exists() else None
    graph = read_json(src / "graph.json") if (src / "graph.json").exists() else None
    flows = read_json(src / "flows.json") if (src / "flows.json").exists() else None
    stage = read_json(src / "report.json").get("stage") if (src / "report.json").exists() else None
    legs = reach_pairs(sc) if stage == "secure" and sc.forbidden and q is not None else ()
    svg = render_svg(sc, q, legs, graph, flows, title=sc.name)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "plot.svg").write_text(svg)
    except OSError as exc:
        raise IoError(f"cannot write {out / 'plot.svg'}: {exc}") from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secureplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON path or bundled scenario name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seeds")
        p.add_argument("--verbose", action="store_true")
        return p

    common(sub.add_parser("plan", help="unsecured trajectory optimization"))
    common(sub.add_parser("secure", help="optimization with co-observation and reachability constraints"))
    p = common(sub.add_parser("ctco", help="checkpoints, cross-trajectory edges and minimal flow cover"))
    p.add_argument("--trajectories", help="trajectories.csv to schedule (default: run plan first)")
    p.add_argument("--k-max", type=int, default=None, help="largest robot count to try")
    p = common(sub.add_parser("render", help="redraw plot.svg from existing artifacts"))
    p.add_argument("--artifacts", help="directory holding earlier outputs (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plan":
            code = cmd_optimize(args, secure=False)
        elif args.command == "secure":
            code = cmd_optimize(args, secure=True)
        elif args.command == "ctco":
            code = cmd_ctco(args)
        else:
            code = cmd_render(args)
    except (ParseError, ValidationError, IoError, WeightOrderViolation, RhoTooLarge) as exc:
        print(f"secureplan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    log.info("exit code %d", code)
    if code != EXIT_OK:
        print(f"secureplan: {args.command} finished with exit code {code}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
