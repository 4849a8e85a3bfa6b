"""CLI behaviour: commands, exit codes, determinism of reports."""
from __future__ import annotations

import json

import numpy as np
import pytest

from treeot.cli import run
from treeot.randomgen import random_multicausal_coupling, random_tree
from treeot.trees import dump_tree


@pytest.fixture()
def tree_files(tmp_path):
    rng = np.random.default_rng(42)
    t1 = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="a")
    t2 = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="b")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    p1.write_text(dump_tree(t1))
    p2.write_text(dump_tree(t2))
    return t1, t2, str(p1), str(p2)


def _run_to_file(tmp_path, args, name="out.json"):
    out = tmp_path / name
    code = run([*args, "--output", str(out)])
    return code, out


def test_awdist_identical_trees(tmp_path, tree_files):
    _, _, p1, _ = tree_files
    code, out = _run_to_file(tmp_path, ["awdist", p1, p1, "--p", "2"])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["schema"] == "1"
    assert report["values"]["aw_distance"] == pytest.approx(0.0, abs=1e-10)


def test_mcot_with_oracle_gap(tmp_path, tree_files):
    _, _, p1, p2 = tree_files
    code, out = _run_to_file(tmp_path, ["mcot", p1, p2, "--cost", "lp_sum:2", "--oracle"])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["dpp_oracle_gap"] <= 1e-8
    assert report["verification"]["multicausal"] is True
    assert report["certificate"]["duals"]["potentials"]


def test_counterexample_command(tmp_path):
    code, out = _run_to_file(tmp_path, ["counterexample", "--n", "4"])
    assert code == 0
    values = json.loads(out.read_text())["values"]
    assert values["cost_phi0_construction"] == pytest.approx(15.5, abs=1e-9)
    assert values["cost_canonical_candidate"] == pytest.approx(1.0, abs=1e-9)


def test_reports_are_byte_identical(tmp_path, tree_files):
    _, _, p1, p2 = tree_files
    _, out = _run_to_file(tmp_path, ["mcot", p1, p2, "--cost", "lp_sum:2"], "r.json")
    first = out.read_bytes()
    _run_to_file(tmp_path, ["mcot", p1, p2, "--cost", "lp_sum:2"], "r.json")
    assert out.read_bytes() == first


def test_validation_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(
        '{"horizon": 1, "levels": [[{"id": "x", "parent": null, "p": 0.6, "x": [0]},'
        '{"id": "y", "parent": null, "p": 0.5, "x": [0]}]]}'
    )
    code = run(["awdist", str(bad), str(bad)])
    assert code == 2


def test_budget_exit_code(tmp_path, tree_files):
    _, _, p1, p2 = tree_files
    code = run(["mcot", p1, p2, "--budget", "1"])
    assert code == 3


def test_bary_commands(tmp_path, tree_files):
    _, _, p1, p2 = tree_files
    code, out = _run_to_file(tmp_path, ["bary-bc", p1, p2, "--cost", "power:2:0.5,0.5"])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["recomputed_value_at_barycenter"] == pytest.approx(
        report["values"]["barycenter_value"], abs=1e-8
    )
    code, out = _run_to_file(
        tmp_path, ["bary-c", p1, p2, "--tasks", p1, "--cost", "power:2:0.5,0.5"], "c.json"
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["duality_gap"] <= 1e-8
    causal_value = report["values"]["barycenter_value"]
    code, out = _run_to_file(
        tmp_path,
        ["bary-anticausal", p1, p2, "--tasks", p1, "--cost", "power:2:0.5,0.5"],
        "ac.json",
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["barycenter_value"] <= causal_value + 1e-8


def test_match_command(tmp_path, tree_files):
    t1, t2, p1, p2 = tree_files
    rng = np.random.default_rng(7)
    tasks = random_tree(rng, horizon=2, dim=1, max_branch=2, prefix="y")
    instance = {
        "principal": {
            "tree": json.loads(dump_tree(t1)),
            "utility": {"kind": "power", "p": 2, "weight": 1.0},
        },
        "agents": [
            {
                "tree": json.loads(dump_tree(t2)),
                "cost": {"kind": "power", "p": 2, "weight": 1.0},
            }
        ],
        "tasks": json.loads(dump_tree(tasks)),
    }
    path = tmp_path / "instance.json"
    path.write_text(json.dumps(instance))
    code, out = _run_to_file(tmp_path, ["match", str(path)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["equilibrium_ok"] is True
    assert report["verification"]["clearing_ok"] is True
    for wages in report["wages"].values():
        assert sum(wages) == pytest.approx(0.0, abs=1e-12)


def test_verify_coupling_command(tmp_path, tree_files):
    t1, t2, p1, p2 = tree_files
    rng = np.random.default_rng(3)
    coupling = random_multicausal_coupling(rng, [t1, t2])
    doc = {"atoms": [{"leaves": list(ids), "w": w} for ids, w in coupling.atom_ids()]}
    path = tmp_path / "coupling.json"
    path.write_text(json.dumps(doc))
    code, out = _run_to_file(tmp_path, ["verify-coupling", str(path), "--trees", p1, p2])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["pass"] is True

    # anticipative coupling must fail with a witness
    anticipative = {
        "atoms": [
            {"leaves": [t1.leaf_ids()[0], t2.leaf_ids()[0]], "w": None},
        ]
    }
    # build a genuinely anticipative example on purpose-built trees instead
    from treeot.trees import ScenarioTree

    tree1 = ScenarioTree.from_levels(
        [
            [{"id": "a", "parent": None, "p": 1.0, "x": [0.0]}],
            [
                {"id": "a1", "parent": "a", "p": 0.5, "x": [-1.0]},
                {"id": "a2", "parent": "a", "p": 0.5, "x": [1.0]},
            ],
        ]
    )
    tree2 = ScenarioTree.from_levels(
        [
            [
                {"id": "b1", "parent": None, "p": 0.5, "x": [-1.0]},
                {"id": "b2", "parent": None, "p": 0.5, "x": [1.0]},
            ],
            [
                {"id": "c1", "parent": "b1", "p": 1.0, "x": [0.0]},
                {"id": "c2", "parent": "b2", "p": 1.0, "x": [0.0]},
            ],
        ]
    )
    q1, q2 = tmp_path / "t1.json", tmp_path / "t2.json"
    q1.write_text(dump_tree(tree1))
    q2.write_text(dump_tree(tree2))
    bad = {"atoms": [{"leaves": ["a1", "c1"], "w": 0.5}, {"leaves": ["a2", "c2"], "w": 0.5}]}
    bad_path = tmp_path / "bad_coupling.json"
    bad_path.write_text(json.dumps(bad))
    code, out = _run_to_file(
        tmp_path, ["verify-coupling", str(bad_path), "--trees", str(q1), str(q2)], "w.json"
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["pass"] is False
    assert report["witnesses"][0]["t"] == 1
    assert report["witnesses"][0]["i"] == 1


def test_text_format_runs(tmp_path, tree_files):
    _, _, p1, _ = tree_files
    code, out = _run_to_file(tmp_path, ["awdist", p1, p1, "--format", "text"], "t.txt")
    assert code == 0
    assert "values.aw_distance" in out.read_text()


def test_seed_is_echoed(tmp_path, tree_files):
    _, _, p1, _ = tree_files
    code, out = _run_to_file(tmp_path, ["counterexample", "--n", "4", "--seed", "11"], "s.json")
    assert code == 0
    assert json.loads(out.read_text())["config_seed"] == 11


def test_thread_env_var_changes_nothing(tmp_path, tree_files, monkeypatch):
    _, _, p1, p2 = tree_files
    _, out = _run_to_file(tmp_path, ["awdist", p1, p2], "serial.json")
    serial = json.loads(out.read_text())["values"]["aw_distance"]
    monkeypatch.setenv("TREEOT_THREADS", "2")
    _, out = _run_to_file(tmp_path, ["awdist", p1, p2], "threaded.json")
    threaded = json.loads(out.read_text())["values"]["aw_distance"]
    assert threaded == pytest.approx(serial, abs=1e-12)


def test_json_cost_descriptor_accepted(tmp_path, tree_files):
    _, _, p1, p2 = tree_files
    spec = '{"kind": "power", "p": 2, "weights": [0.5, 0.5]}'
    code, out = _run_to_file(tmp_path, ["bary-bc", p1, p2, "--cost", spec], "j.json")
    assert code == 0
    report = json.loads(out.read_text())
    assert report["values"]["barycenter_value"] == pytest.approx(
        report["values"]["recomputed_value_at_barycenter"], abs=1e-8
    )
