"""Scenario files (JSON) and run outputs (CSV, JSON, SVG)."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .admm import AdmmParams
from .constraints import CoObservationEvent
from .geometry import ConvexPolygon
from .rrt import RrtParams

TOP_LEVEL_KEYS = {
    "name", "description", "dimension", "workspace", "T", "v_max", "robots", "obstacles",
    "forbidden", "co_observations", "grid", "admm", "rrt", "flow",
}


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class IoError(OSError):
    pass


@dataclass
class GridParams:
    shape: tuple = (8, 8)
    P0: float = 1.0
    process_noise: float = 0.01
    sigma_meas: float = 1.0
    ell: float = 1.0
    weight: float = 1.0


@dataclass
class FlowParams:
    w_c: float = 10.0
    w_t: float = 1.0
    rho: float = 0.01
    K_max: int | None = None


@dataclass
class AdmmSettings:
    params: AdmmParams = field(default_factory=AdmmParams)
    seed: int = 0
    margin: float = 0.01
    secure_params: AdmmParams | None = None  # overrides for the secure stage

    def for_stage(self, secure: bool) -> AdmmParams:
        return self.secure_params if secure and self.secure_params is not None else self.params


@dataclass
class Robot:
    start: np.ndarray
    goal: np.ndarray


@dataclass
class Scenario:
    dimension: int
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    T: int
    v_max: float
    robots: list
    obstacles: list = field(default_factory=list)
    forbidden: list = field(default_factory=list)
    co_observations: list = field(default_factory=list)
    grid: GridParams = field(default_factory=GridParams)
    admm: AdmmSettings = field(default_factory=AdmmSettings)
    rrt: RrtParams = field(default_factory=RrtParams)
    flow: FlowParams = field(default_factory=FlowParams)
    name: str = ""
    warnings: list = field(default_factory=list)
    input_hash: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)


def _number(doc, key, where, *, positive=False, nonneg=False, integer=False, default=None):
    if key not in doc:
        if default is None:
            raise ValidationError(where, "is required")
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(where, f"must be a number, got {val!r}")
    if integer and not float(val).is_integer():
        raise ValidationError(where, f"must be an integer, got {val!r}")
    if not np.isfinite(val):
        raise ValidationError(where, "must be finite")
    if positive and not val > 0:
        raise ValidationError(where, f"must be positive, got {val!r}")
    if nonneg and val < 0:
        raise ValidationError(where, f"must be non-negative, got {val!r}")
    return int(val) if integer else float(val)


def _vector(val, dim, where):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(where, f"must be a list of {dim} numbers") from None
    if arr.shape != (dim,) or not np.all(np.isfinite(arr)):
        raise ValidationError(where, f"must be a list of {dim} finite numbers")
    return arr


def _polygon(val, where):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(where, "must be a list of [x, y] vertices") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(where, "must be a list of [x, y] vertices")
    try:
        return ConvexPolygon(arr)
    except ValueError as exc:
        raise ValidationError(where, str(exc)) from None


def _group(doc, key, where):
    val = doc.get(key, {})
    if not isinstance(val, dict):
        raise ValidationError(where, "must be an object")
    return val


def _check_keys(doc, allowed, where, warnings):
    for k in sorted(set(doc) - set(allowed)):
        warnings.append(f"{where}{k}: unknown key ignored")


def parse_scenario(doc: Any, source_bytes: bytes | None = None) -> Scenario:
    """Validate a scenario document and fill defaults."""
    if not isinstance(doc, dict):
        raise ValidationError("<root>", "scenario must be a JSON object")
    warnings: list[str] = []
    _check_keys(doc, TOP_LEVEL_KEYS, "", warnings)
    dim = _number(doc, "dimension", "dimension", integer=True)
    if dim not in (2, 3):
        raise ValidationError("dimension", f"must be 2 or 3, got {dim}")
    ws = doc.get("workspace")
    if not isinstance(ws, dict) or "min" not in ws or "max" not in ws:
        raise ValidationError("workspace", "must be an object with 'min' and 'max'")
    lo = _vector(ws["min"], dim, "workspace.min")
    hi = _vector(ws["max"], dim, "workspace.max")
    if np.any(hi <= lo):
        raise ValidationError("workspace", "max must exceed min on every axis")
    T = _number(doc, "T", "T", integer=True)
    if T < 2:
        raise ValidationError("T", f"must be at least 2, got {T}")
    if "v_max" not in doc:
        warnings.append("v_max: missing, default 0.5 applied")
    v_max = _number(doc, "v_max", "v_max", positive=True, default=0.5)

    obstacles = [_polygon(p, f"obstacles[{i}]") for i, p in enumerate(doc.get("obstacles", []))]
    forbidden = [_polygon(p, f"forbidden[{i}]") for i, p in enumerate(doc.get("forbidden", []))]
    if dim == 3 and forbidden:
        raise ValidationError("forbidden", "forbidden polygons are planar; use a 2-D scenario")

    robots_doc = doc.get("robots")
    if not isinstance(robots_doc, list) or not robots_doc:
        raise ValidationError("robots", "must be a non-empty list")
    robots = []
    for i, r in enumerate(robots_doc):
        if not isinstance(r, dict):
            raise ValidationError(f"robots[{i}]", "must be an object with start and goal")
        ends = []
        for key in ("start", "goal"):
            where = f"robots[{i}].{key}"
            if key not in r:
                raise ValidationError(where, "is required")
            p = _vector(r[key], dim, where)
            if np.any(p < lo) or np.any(p > hi):
                raise ValidationError(where, "lies outside the workspace")
            for name, polys in (("obstacles", obstacles), ("forbidden", forbidden)):
                for j, poly in enumerate(polys):
                    if poly.contains(p[:2], strict=True):
                        raise ValidationError(where, f"lies inside {name}[{j}]")
            ends.append(p)
        robots.append(Robot(*ends))

    events = []
    for i, ev in enumerate(doc.get("co_observations", [])):
        where = f"co_observations[{i}]"
        if not isinstance(ev, dict):
            raise ValidationError(where, "must be an object {a, b, t, d_max}")
        a = _number(ev, "a", where + ".a", integer=True, nonneg=True)
        b = _number(ev, "b", where + ".b", integer=True, nonneg=True)
        t = _number(ev, "t", where + ".t", integer=True, nonneg=True)
        d_max = _number(ev, "d_max", where + ".d_max", positive=True)
        for key, idx in (("a", a), ("b", b)):
            if idx >= len(robots):
                raise ValidationError(f"{where}.{key}", f"robot index {idx} out of range")
        if a == b:
            raise ValidationError(where, "a and b must differ")
        if t > T:
            raise ValidationError(where + ".t", f"must be within 0..{T}")
        events.append(CoObservationEvent(a, b, t, d_max))

    g = _group(doc, "grid", "grid")
    _check_keys(g, {"shape", "P0", "process_noise", "sigma_meas", "ell", "weight"}, "grid.", warnings)
    shape = g.get("shape", [8, 8])
    if (not isinstance(shape, list) or len(shape) != 2
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in shape)):
        raise ValidationError("grid.shape", "must be two positive integers")
    grid = GridParams(
        tuple(shape),
        _number(g, "P0", "grid.P0", positive=True, default=1.0),
        _number(g, "process_noise", "grid.process_noise", nonneg=True, default=0.01),
        _number(g, "sigma_meas", "grid.sigma_meas", positive=True, default=1.0),
        _number(g, "ell", "grid.ell", positive=True, default=1.0),
        _number(g, "weight", "grid.weight", nonneg=True, default=1.0),
    )

    a = _group(doc, "admm", "admm")
    solver_keys = {"rho", "eps_pri", "eps_dual", "max_iter", "inner_budget"}
    _check_keys(a, solver_keys | {"seed", "margin", "secure"}, "admm.", warnings)

    def solver_params(group, where, base):
        return AdmmParams(
            rho=_number(group, "rho", where + "rho", positive=True, default=base.rho),
            eps_pri=_number(group, "eps_pri", where + "eps_pri", positive=True, default=base.eps_pri),
            eps_dual=_number(group, "eps_dual", where + "eps_dual", positive=True, default=base.eps_dual),
            max_iter=_number(group, "max_iter", where + "max_iter", positive=True, integer=True,
                             default=base.max_iter),
            inner_budget=_number(group, "inner_budget", where + "inner_budget", positive=True, integer=True,
                                 default=base.inner_budget),
        )

    base = solver_params(a, "admm.", AdmmParams())
    secure_params = None
    if "secure" in a:
        sec = _group(a, "secure", "admm.secure")
        _check_keys(sec, solver_keys, "admm.secure.", warnings)
        secure_params = solver_params(sec, "admm.secure.", base)
    admm = AdmmSettings(
        base,
        seed=_number(a, "seed", "admm.seed", integer=True, nonneg=True, default=0),
        margin=_number(a, "margin", "admm.margin", nonneg=True, default=0.01),
        secure_params=secure_params,
    )
    if admm.margin >= 0.5:
        raise ValidationError("admm.margin", "must be below 0.5")

    r = _group(doc, "rrt", "rrt")
    _check_keys(r, {"step", "max_iter", "goal_tol", "seed"}, "rrt.", warnings)
    rrt = RrtParams(
        step=_number(r, "step", "rrt.step", positive=True, default=0.5),
        max_iter=_number(r, "max_iter", "rrt.max_iter", positive=True, integer=True, default=4000),
        goal_tol=_number(r, "goal_tol", "rrt.goal_tol", nonneg=True, default=0.3),
        seed=_number(r, "seed", "rrt.seed", integer=True, nonneg=True, default=0),
    )

    f = _group(doc, "flow", "flow")
    _check_keys(f, {"w_c", "w_t", "rho", "K_max"}, "flow.", warnings)
    k_max = f.get("K_max")
    if k_max is not None:
        k_max = _number(f, "K_max", "flow.K_max", positive=True, integer=True)
    flow = FlowParams(
        _number(f, "w_c", "flow.w_c", nonneg=True, default=10.0),
        _number(f, "w_t", "flow.w_t", nonneg=True, default=1.0),
        _number(f, "rho", "flow.rho", positive=True, default=0.01),
        k_max,
    )

    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ValidationError("name", "must be a string")
    digest = hashlib.sha256(source_bytes if source_bytes is not None else canonical_json(doc).encode()).hexdigest()
    return Scenario(dim, lo, hi, T, v_max, robots, obstacles, forbidden, events, grid, admm, rrt, flow,
                    name, warnings, digest, copy.deepcopy(doc))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}") from None
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_scenario(doc, data)


def bundled_scenario_path(name: str) -> Path:
    if not name.endswith(".json"):
        name += ".json"
    ref = resources.files("secureplan") / "scenarios" / name
    return Path(str(ref))


def bundled_scenarios() -> list[str]:
    folder = resources.files("secureplan") / "scenarios"
    return sorted(p.name for p in folder.iterdir() if p.name.endswith(".json"))


def canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_trajectories(q) -> str:
    q = np.asarray(q, dtype=float)
    dim = q.shape[2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["robot", "t", "x", "y", "z"][: 2 + dim])
    for r in range(q.shape[0]):
        for t in range(q.shape[1]):
            w.writerow([r, t] + [f"{v:.9g}" for v in q[r, t]])
    return buf.getvalue()


def parse_trajectories(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty trajectory file")
    header = rows[0]
    if header[:4] != ["robot", "t", "x", "y"] or len(header) not in (4, 5):
        raise ParseError(f"unexpected trajectory header {header}")
    dim = len(header) - 2
    data = {}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"line {i}: expected {len(header)} columns")
        try:
            r, t = int(row[0]), int(row[1])
            data[(r, t)] = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(f"line {i}: {exc}") from None
    n = max(r for r, _ in data) + 1
    steps = max(t for _, t in data) + 1
    if len(data) != n * steps:
        raise ParseError("trajectory file must list every robot at every step")
    q = np.empty((n, steps, dim))
    for (r, t), v in data.items():
        q[r, t] = v
    return q


def read_trajectories(path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read trajectories {path}: {exc}") from None
    return parse_trajectories(text)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class RunArtifacts:
    report: dict
    trajectories: np.ndarray | None = None
    graph: dict | None = None
    flows: dict | None = None
    svg: str | None = None


def write_outputs(artifacts: RunArtifacts, out_dir) -> list[Path]:
    """Write whichever artifacts are present; returns the written paths in order."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = []
        if artifacts.trajectories is not None:
            files.append(("trajectories.csv", format_trajectories(artifacts.trajectories)))
        if artifacts.graph is not None:
            files.append(("graph.json", canonical_json(artifacts.graph)))
        if artifacts.flows is not None:
            files.append(("flows.json", canonical_json(artifacts.flows)))
        files.append(("report.json", canonical_json(artifacts.report)))
        if artifacts.svg is not None:
            files.append(("plot.svg", artifacts.svg))
        written = []
        for name, text in files:
            _atomic_write(out / name, text)
            written.append(out / name)
        return written
    except OSError as exc:
        raise IoError(f"cannot write outputs to {out}: {exc}") from None


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
