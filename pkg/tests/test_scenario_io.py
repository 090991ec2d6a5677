import json

import numpy as np
import pytest

from secureplan.checkpoint_graph import FlowGraph
from secureplan.scenario_io import (
    ParseError,
    RunArtifacts,
    ValidationError,
    bundled_scenario_path,
    bundled_scenarios,
    format_trajectories,
    load_scenario,
    parse_scenario,
    parse_trajectories,
    write_outputs,
)


def minimal_doc(**extra):
    doc = {
        "dimension": 2,
        "workspace": {"min": [0, 0], "max": [10, 10]},
        "T": 10,
        "v_max": 0.5,
        "robots": [{"start": [1, 1], "goal": [4, 1]}],
    }
    doc.update(extra)
    return doc


def test_bundled_3robot_scenario_loads_cleanly():
    sc = load_scenario(bundled_scenario_path("paper_3robot"))
    assert sc.warnings == []
    assert np.array_equal(sc.workspace_min, [0, 0]) and np.array_equal(sc.workspace_max, [10, 10])
    assert sc.n_robots == 3 and sc.T == 20 and sc.v_max == 0.5
    assert len(sc.obstacles) == 1 and len(sc.forbidden) == 2
    assert sc.flow.w_c == 10 and sc.flow.w_t == 1 and sc.flow.rho == 0.01
    assert "paper_3robot.json" in bundled_scenarios() and "two_corridor.json" in bundled_scenarios()


def test_every_bundled_scenario_loads_without_warnings():
    for name in bundled_scenarios():
        assert load_scenario(bundled_scenario_path(name)).warnings == []


def test_start_inside_forbidden_is_rejected():
    doc = minimal_doc(forbidden=[[[0, 0], [2, 0], [2, 2], [0, 2]]])
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    assert info.value.field == "robots[0].start"


def test_missing_v_max_defaults_with_warning():
    doc = minimal_doc()
    del doc["v_max"]
    sc = parse_scenario(doc)
    assert sc.v_max == 0.5 and any("v_max" in w for w in sc.warnings)


def test_defaults_are_filled():
    sc = parse_scenario(minimal_doc())
    assert sc.admm.params.rho == 1.0 and sc.admm.params.eps_pri == 1e-3 and sc.admm.params.max_iter == 500
    assert sc.admm.params.inner_budget == 50 and sc.admm.secure_params is None
    assert sc.rrt.step == 0.5 and sc.rrt.max_iter == 4000 and sc.rrt.goal_tol == 0.3
    assert sc.grid.shape == (8, 8) and sc.grid.P0 == 1.0 and sc.grid.process_noise == 0.01
    assert (sc.flow.w_c, sc.flow.w_t, sc.flow.rho) == (10.0, 1.0, 0.01)


def test_secure_stage_override():
    sc = parse_scenario(minimal_doc(admm={"eps_pri": 1e-3, "secure": {"eps_pri": 1e-5}}))
    assert sc.admm.for_stage(False).eps_pri == 1e-3
    assert sc.admm.for_stage(True).eps_pri == 1e-5 and sc.admm.for_stage(True).rho == 1.0


@pytest.mark.parametrize("patch, field", [
    ({"dimension": 4}, "dimension"),
    ({"T": 1}, "T"),
    ({"v_max": -1}, "v_max"),
    ({"workspace": {"min": [0, 0], "max": [0, 5]}}, "workspace"),
    ({"robots": [{"start": [1, 1], "goal": [40, 1]}]}, "robots[0].goal"),
    ({"robots": [{"start": [1, 1]}]}, "robots[0].goal"),
    ({"co_observations": [{"a": 0, "b": 3, "t": 2, "d_max": 1.0}]}, "co_observations[0].b"),
    ({"co_observations": [{"a": 0, "b": 0, "t": 2, "d_max": 1.0}]}, "co_observations[0]"),
    ({"obstacles": [[[0, 0], [2, 0], [1, 0.2], [2, 2], [0, 2]]]}, "obstacles[0]"),
    ({"grid": {"shape": [8]}}, "grid.shape"),
])
def test_rejections_name_the_field(patch, field):
    with pytest.raises(ValidationError) as info:
        parse_scenario(minimal_doc(**patch))
    assert info.value.field == field


def test_unknown_keys_warn():
    sc = parse_scenario(minimal_doc(colour="blue", rrt={"stepp": 1}))
    assert any("colour" in w for w in sc.warnings) and any("stepp" in w for w in sc.warnings)


def test_malformed_json_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(p)


def test_input_hash_tracks_file_bytes(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(minimal_doc()))
    h1 = load_scenario(p).input_hash
    p.write_text(json.dumps(minimal_doc(T=11)))
    assert load_scenario(p).input_hash != h1


def test_trajectory_csv_layout(tmp_path):
    q = np.arange(2 * 4 * 2, dtype=float).reshape(2, 4, 2) / 7
    write_outputs(RunArtifacts({"stage": "plan"}, q), tmp_path)
    lines = (tmp_path / "trajectories.csv").read_text().splitlines()
    assert lines[0] == "robot,t,x,y" and len(lines) == 9
    assert lines[1].startswith("0,0,") and lines[-1].startswith("1,3,")
    assert lines[2] == "0,1,0.285714286,0.428571429"
    q3 = np.zeros((1, 2, 3))
    assert format_trajectories(q3).splitlines()[0] == "robot,t,x,y,z"


def test_trajectory_round_trip_is_bit_exact_at_nine_digits():
    rng = np.random.default_rng(0)
    q = np.array([[[float(f"{v:.9g}") for v in p] for p in r] for r in rng.normal(scale=5, size=(3, 21, 2))])
    assert np.array_equal(parse_trajectories(format_trajectories(q)), q)
    raw = rng.normal(size=(2, 5, 3))
    once = format_trajectories(raw)
    assert format_trajectories(parse_trajectories(once)) == once


def test_incomplete_trajectory_file_is_rejected():
    with pytest.raises(ParseError):
        parse_trajectories("robot,t,x,y\n0,0,1,1\n0,2,1,1\n")
    with pytest.raises(ParseError):
        parse_trajectories("a,b\n")


def test_graph_json_round_trip_is_bit_exact(tmp_path):
    from secureplan.checkpoint_graph import SINK, SOURCE, Checkpoint, Edge
    verts = {SOURCE: None, SINK: None,
             "p0t0": Checkpoint(0, np.array([0.1, 1 / 3]), 0, "start"),
             "p0t4": Checkpoint(0, np.array([np.pi, np.e]), 4, "end")}
    edges = [Edge(SOURCE, "p0t0", "virtual", 0.0), Edge("p0t0", "p0t4", "cross", 10.0,
                                                         np.array([[0.1, 1 / 3], [np.sqrt(2), 0.7], [np.pi, np.e]])),
             Edge("p0t4", SINK, "virtual", 0.0)]
    g = FlowGraph(verts, edges, frozenset())
    write_outputs(RunArtifacts({}, graph=g.to_json()), tmp_path)
    back = FlowGraph.from_json(json.loads((tmp_path / "graph.json").read_text()))
    assert np.array_equal(back.vertices["p0t4"].position, [np.pi, np.e])
    cross = [e for e in back.edges if e.kind == "cross"][0]
    assert np.array_equal(cross.path, edges[1].path)


def test_outputs_are_byte_stable(tmp_path):
    q = np.random.default_rng(1).normal(size=(2, 4, 2))
    art = RunArtifacts({"b": 1, "a": [1.5, None]}, q, {"vertices": [], "edges": []}, {"K_min": 1}, "<svg/>\n")
    write_outputs(art, tmp_path / "a")
    write_outputs(art, tmp_path / "b")
    for name in ("trajectories.csv", "graph.json", "flows.json", "report.json", "plot.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
