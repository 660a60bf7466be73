import copy
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from srikit.averaging import AveragedMap
from srikit.cli import _seeds, main
from srikit.config import ExperimentConfig, load_preset, preset_names
from srikit.errors import ValidationError
from srikit.geometry import support

FIXTURES = {"fixture-blowup", "fixture-constant-noise", "fixture-bad-schedule"}
APPLICATIONS = sorted(set(preset_names()) - FIXTURES)

SMALL = {
    "name": "small",
    "dim": 1,
    "n_states": 2,
    "drift": {"name": "approximate", "b": [[0.0], [0.4]], "eps": 0.1, "K": 1.1},
    "kernel": {"variant": "independent", "matrix": [[0.7, 0.3], [0.6, 0.4]]},
    "schedule": {"a0": 1.0, "gamma": 0.9},
    "noise": {"kind": "bounded-iid", "bound": 0.5},
    "policy": {"kind": "random-vertex"},
    "x0": [1.0],
    "s0": 0,
    "n_steps": 3000,
    "seed": 0,
}


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- config ------------------------------------------------------------------


def test_presets_present_and_valid():
    names = preset_names()
    assert {"subgrad-1d", "approx-drift-1d", "controlled-hull-2d", "filippov-sign-1d", "identity-kernel-2d"} <= set(names)
    for name in names:
        cfg = load_preset(name)
        assert cfg.name == name
        cfg.build_drift().eval(np.asarray(cfg.x0, dtype=float), 0)


@pytest.mark.parametrize("name", preset_names())
def test_config_roundtrip(name, tmp_path):
    cfg = load_preset(name)
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()), base_dir=cfg.base_dir)
    assert again.to_dict() == cfg.to_dict()
    assert again.hash() == cfg.hash()
    assert cfg.with_seed(5).hash() != cfg.hash()


def mutate(path, value):
    d = copy.deepcopy(SMALL)
    node = d
    keys = path.split(".")
    for k in keys[:-1]:
        node = node[k]
    if value is KeyError:
        del node[keys[-1]]
    else:
        node[keys[-1]] = value
    return d


@pytest.mark.parametrize(
    "path, value, field",
    [
        ("dim", 0, "dim"),
        ("n_steps", -3, "n_steps"),
        ("s0", 2, "s0"),
        ("seed", -1, "seed"),
        ("x0", [1.0, 2.0], "x0"),
        ("blowup", 0, "blowup"),
        ("schedule.a0", 1.5, "schedule.a0"),
        ("schedule.gamma", -0.1, "schedule.gamma"),
        ("schedule.gamma", KeyError, "schedule.gamma"),
        ("noise.bound", -1, "noise.bound"),
        ("noise.kind", "laplace", "noise.kind"),
        ("drift.name", "quadratic", "drift.name"),
        ("drift.K", 0, "drift.K"),
        ("drift.eps", -0.1, "drift.eps"),
        ("drift.b", [[0.0]], "drift.b"),
        ("kernel.matrix", [[0.7, 0.4], [0.6, 0.4]], "kernel.matrix"),
        ("kernel.variant", "hidden", "kernel.variant"),
        ("policy.kind", "greedy", "policy.kind"),
        ("analysis", {"apt": {"T": -1, "dt": 0.1}}, "analysis.apt.T"),
        ("analysis", {"limit_set": {"tail_fraction": 1.5}}, "analysis.limit_set.tail_fraction"),
        ("analysis", {"plots": {}}, "analysis"),
        ("checks", {"verbose": True}, "checks"),
        ("colour", "blue", "colour"),
    ],
)
def test_validation_is_field_specific(path, value, field):
    d = mutate(path, value) if path != "colour" else {**SMALL, "colour": "blue"}
    with pytest.raises(ValidationError) as exc:
        ExperimentConfig.from_dict(d)
    assert exc.value.field == field


def test_kernel_file_resolved_relative_to_config(tmp_path):
    (tmp_path / "P.txt").write_text("0.7 0.3\n0.6 0.4\n")
    p = write_cfg(tmp_path, {**SMALL, "kernel": {"variant": "independent", "matrix": "P.txt"}})
    cfg = ExperimentConfig.load(p)
    np.testing.assert_array_equal(cfg.build_kernel().P, [[0.7, 0.3], [0.6, 0.4]])


def test_approximate_honours_declared_K():
    cfg = ExperimentConfig.from_dict({**SMALL, "drift": {**SMALL["drift"], "K": 2.5}})
    assert cfg.build_drift().growth_K == 2.5


def test_seed_ranges():
    assert _seeds("0-4") == [0, 1, 2, 3, 4]
    assert _seeds("1,3-4,9") == [1, 3, 4, 9]


# -- cli ---------------------------------------------------------------------


def test_run_is_deterministic(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    for out in ("a", "b"):
        code, stdout, _ = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / out)
        assert code == 0 and json.loads(stdout)["n_steps"] == 3000
    for f in ("trajectory.csv", "events.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("timestamp"), mb.pop("timestamp")
    assert ma == mb and ma["status"] == "ok" and ma["seed"] == 0
    rows = list(csv.reader(open(tmp_path / "a" / "trajectory.csv")))
    assert len(rows) == 3000 + 2
    events = [json.loads(line) for line in (tmp_path / "a" / "events.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "config" and events[-1]["event"] == "done"


def test_seed_flag_changes_output(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "a")
    run_cli(capsys, "run", "--config", cfg, "--seed", 1, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 1


def test_missing_kernel_file(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**SMALL, "kernel": {"variant": "independent", "matrix": "nowhere/P.txt"}})
    code, _, err = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    payload = json.loads(err)
    assert "nowhere/P.txt" in payload["message"]
    assert payload["field"] == "kernel.matrix" and payload["exit_code"] == 2


def test_missing_config_and_conflicting_sources(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--config", tmp_path / "none.json", "--out", tmp_path)
    assert code == 2 and "none.json" in json.loads(err)["message"]
    code, _, _ = run_cli(capsys, "run", "--preset", "subgrad-1d", "--config", tmp_path / "x.json", "--out", tmp_path)
    assert code == 2
    code, _, err = run_cli(capsys, "run", "--preset", "no-such-preset", "--out", tmp_path)
    assert code == 2 and json.loads(err)["field"] == "preset"


def test_blowup_fixture_exits_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--preset", "fixture-blowup", "--out", tmp_path)
    payload = json.loads(err)
    assert code == 3
    assert payload["assumption"] == "A5" and "A5" in payload["message"]
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "aborted"
    events = (tmp_path / "events.jsonl").read_text().splitlines()
    assert json.loads(events[-1])["event"] == "abort"


@pytest.mark.parametrize("name", APPLICATIONS)
def test_check_presets_pass_A1_A3(name, capsys):
    code, out, _ = run_cli(capsys, "check", "--preset", name, "--no-run")
    status = json.loads(out)["status"]
    assert status["A1"] == "pass" and status["A2"] == "pass" and status["A3"] == "pass"
    assert code == 0


def test_check_bad_schedule(capsys):
    code, out, _ = run_cli(capsys, "check", "--preset", "fixture-bad-schedule", "--no-run")
    report = json.loads(out)
    assert report["status"]["A3"] == "fail" and not report["A3"]["square_summable"]
    assert code == 3


def test_check_constant_noise_flags_A4(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "check", "--preset", "fixture-constant-noise", "--out", tmp_path)
    report = json.loads(out)
    assert report["status"]["A4"] in ("warn", "fail") and report["A4"]["flagged"]
    assert (tmp_path / "check.json").is_file()


def test_check_post_run_small(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    code, out, _ = run_cli(capsys, "check", "--config", cfg)
    status = json.loads(out)["status"]
    assert code == 0 and status["A5"] == "pass" and set(status) == {"A1", "A2", "A3", "A4", "A5"}


def test_check_jump_drift_fails_A1(tmp_path, capsys):
    d = {**SMALL, "drift": {"name": "jump", "K": 1.0}, "checks": {"closed_graph_point": [0.0]}}
    code, out, _ = run_cli(capsys, "check", "--config", write_cfg(tmp_path, d), "--no-run")
    assert json.loads(out)["status"]["A1"] == "fail" and code == 3


def test_identity_kernel_support_dump(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--preset", "identity-kernel-2d", "--out", tmp_path)
    code, out, _ = run_cli(capsys, "analyze", "--preset", "identity-kernel-2d", "--out", tmp_path)
    assert code == 0
    cfg = load_preset("identity-kernel-2d")
    am = AveragedMap(cfg.build_drift(), cfg.build_kernel())
    rows = list(csv.DictReader(open(tmp_path / "hhat_support.csv")))
    assert len(rows) == 3 * 64
    for r in rows:
        x = np.array([float(r["x_0"]), float(r["x_1"])])
        d = np.array([float(r["d_0"]), float(r["d_1"])])
        per_state = max(support(b, d) for b in am.bodies(x))
        assert float(r["support"]) == pytest.approx(per_state, abs=1e-12)


def test_analyze_outputs(tmp_path, capsys):
    d = {
        **SMALL,
        "n_steps": 20_000,
        "analysis": {
            "apt": {"T": 1.0, "dt": 0.01, "n_points": 3, "t_min": 1.0},
            "limit_set": {"tail_fraction": 0.2},
            "attractor": {"generators": [[0.0333333333], [0.2333333333]], "eps": 0.2},
        },
    }
    cfg = write_cfg(tmp_path, d)
    run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "o")
    code, out, _ = run_cli(capsys, "analyze", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    lines = (tmp_path / "o" / "apt.csv").read_text().splitlines()
    assert lines[0] == "t,e,oracle_defect,T,dt" and len(lines) == 4
    ls = json.loads((tmp_path / "o" / "limit_set.json").read_text())
    assert ls["n_points"] == 4001 and ls["attractor"]["contained"] is True
    # an explicit trajectory path and a missing one
    code, _, _ = run_cli(capsys, "analyze", "--config", cfg, "--trajectory", tmp_path / "o" / "trajectory.csv", "--out", tmp_path / "p")
    assert code == 0
    code, _, err = run_cli(capsys, "analyze", "--config", cfg, "--out", tmp_path / "empty")
    assert code == 2 and "trajectory" in json.loads(err)["message"]


@pytest.mark.parametrize("jobs", [1, 2])
def test_sweep(tmp_path, capsys, jobs):
    cfg = write_cfg(tmp_path, SMALL)
    code, out, _ = run_cli(capsys, "sweep", "--config", cfg, "--seeds", "2,0-1", "--jobs", jobs, "--out", tmp_path / "s")
    results = json.loads(out)
    assert code == 0 and [r["seed"] for r in results] == [0, 1, 2]
    run_cli(capsys, "run", "--config", cfg, "--seed", 1, "--out", tmp_path / "single")
    assert (tmp_path / "s" / "seed_1" / "trajectory.csv").read_bytes() == (tmp_path / "single" / "trajectory.csv").read_bytes()
    assert json.loads((tmp_path / "s" / "sweep.json").read_text())["runs"] == results


def test_presets_command(capsys):
    code, out, _ = run_cli(capsys, "presets")
    assert code == 0 and out.split() == preset_names()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "srikit.cli", "run", "--preset", "fixture-blowup", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 3
    assert json.loads(proc.stderr)["error"] == "StabilityError"
