"""End-to-end command line runs against tiny grids."""

import csv
import json

import pytest

from survalloc import load_grid
from survalloc.cli import main


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """Small solve outputs shared by the command tests."""
    root = tmp_path_factory.mktemp("artifacts")
    assert main(["solve", "--kind", "v", "--n", "2", "--grid", "33",
                 "--out", str(root / "v")]) == 0
    assert main(["solve", "--kind", "u", "--n", "2", "--grid", "33",
                 "--out", str(root / "u")]) == 0
    return {
        "root": root,
        "v2": root / "v" / "v2.meta.json",
        "u2": root / "u" / "u2.meta.json",
    }


def read_json(path):
    with open(path) as f:
        return json.load(f)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# ---------------------------------------------------------------------------
# solve

def test_solve_writes_grid_pairs_and_manifest(artifacts, capsys):
    vdir = artifacts["root"] / "v"
    for name in ("v1.meta.json", "v1.f64le", "v2.meta.json", "v2.f64le",
                 "manifest.json", "timing.json"):
        assert (vdir / name).exists()
    manifest = read_json(vdir / "manifest.json")
    assert manifest["command"] == "solve"
    assert set(manifest["outputs"]) == {"v1.meta.json", "v1.f64le",
                                        "v2.meta.json", "v2.f64le"}
    grid = load_grid(artifacts["v2"])
    assert grid.spec.m == 33 and grid.spec.kind == "V"
    # a fresh 1-D solve narrates residuals
    out = artifacts["root"] / "v1-only"
    assert main(["solve", "--kind", "v", "--n", "1", "--grid", "33",
                 "--out", str(out)]) == 0
    assert "v1: m=33 residual=" in capsys.readouterr().out


def test_solve_refuses_negative_drift(tmp_path, capsys):
    rc = main(["solve", "--kind", "v", "--n", "1", "--grid", "33",
               "--b", "-0.2", "--out", str(tmp_path)])
    assert rc == 2
    assert "drift" in capsys.readouterr().err


def test_solve_refuses_even_grid(tmp_path, capsys):
    rc = main(["solve", "--kind", "v", "--n", "1", "--grid", "32",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "odd" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate

SIM = ["simulate", "--x0", "1,1", "--paths", "200", "--dt", "0.01",
       "--horizon", "1"]


def test_simulate_reruns_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(SIM + ["--policy", "laggard", "--out", str(a)]) == 0
    assert "95% CI" in capsys.readouterr().out
    assert main(SIM + ["--policy", "laggard", "--out", str(b)]) == 0
    for name in ("estimate.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "timing.json").exists()
    record = read_json(a / "estimate.json")
    assert record["estimate"]["paths"] == 200
    assert record["config"]["seed"] == record["config"]["seed"]  # echoed


def test_simulate_schedule_outputs(tmp_path):
    rc = main(SIM + ["--policy", "fixed:1", "--horizons", "0.5,1",
                     "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "schedule.csv")
    assert rows[0] == ["horizon", "mean", "stderr", "ci_lo", "ci_hi",
                       "truncated_fraction"]
    assert len(rows) == 3
    assert (tmp_path / "schedule.png").exists()
    record = read_json(tmp_path / "estimate.json")
    assert len(record["estimates"]) == 2
    assert record["estimates"][0]["mean"] >= record["estimates"][1]["mean"]


def test_simulate_policy_syntax_errors(tmp_path, capsys):
    assert main(SIM + ["--policy", "front-runner", "--out", str(tmp_path)]) == 2
    assert main(SIM + ["--policy", "fixed:x", "--out", str(tmp_path)]) == 2
    assert main(SIM + ["--policy", "split:2,2", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_simulate_grid_policy(artifacts, tmp_path):
    rc = main(SIM + ["--policy", f"grid:{artifacts['v2']}",
                     "--out", str(tmp_path)])
    assert rc == 0
    manifest = read_json(tmp_path / "manifest.json")
    assert list(manifest["inputs"]) == [str(artifacts["v2"])]


def test_simulate_grid_policy_mismatches(artifacts, tmp_path, capsys):
    grid = f"grid:{artifacts['v2']}"
    # solved at b=0, run at b=0.5
    assert main(SIM + ["--policy", grid, "--b", "0.5",
                       "--out", str(tmp_path)]) == 3
    # 2-D field, 3-D state
    assert main(["simulate", "--x0", "1,1,1", "--paths", "100",
                 "--dt", "0.01", "--horizon", "1", "--policy", grid,
                 "--out", str(tmp_path)]) == 3
    # artifact does not exist
    assert main(SIM + ["--policy", "grid:/nonexistent/g.meta.json",
                       "--out", str(tmp_path)]) == 3
    capsys.readouterr()


def test_simulate_barrier_needs_flag(tmp_path, capsys):
    rc = main(SIM + ["--policy", "laggard", "--estimator", "barrier",
                     "--out", str(tmp_path)])
    assert rc == 2
    assert "barrier" in capsys.readouterr().err


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("SURVALLOC_OUT", str(tmp_path))
    assert main(SIM + ["--policy", "laggard"]) == 0
    assert (tmp_path / "simulate" / "estimate.json").exists()


def test_out_dir_required(monkeypatch, capsys):
    monkeypatch.delenv("SURVALLOC_OUT", raising=False)
    assert main(SIM + ["--policy", "laggard"]) == 2
    assert "output directory" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# verify

def test_verify_basic_passes(artifacts, tmp_path, capsys):
    rc = main(["verify", "--check", "basic", "--grid", str(artifacts["v2"]),
               "--grid", str(artifacts["u2"]), "--out", str(tmp_path)])
    assert rc == 0
    report = read_json(tmp_path / "report.json")
    assert [r["status"] for r in report] == ["pass", "pass"]
    assert (tmp_path / "summary.txt").exists()
    assert (tmp_path / "margins.png").exists()
    assert "bounds_symmetry_monotonicity" in capsys.readouterr().out


def test_verify_failing_check_exits_1(artifacts, tmp_path, capsys):
    rc = main(["verify", "--check", "counterexample-u",
               "--grid", str(artifacts["u2"]), "--noise-floor", "10",
               "--out", str(tmp_path)])
    assert rc == 1
    report = read_json(tmp_path / "report.json")
    assert report[0]["status"] == "fail"
    capsys.readouterr()


def test_verify_all_needs_grids(tmp_path, capsys):
    assert main(["verify", "--check", "all", "--out", str(tmp_path)]) == 3
    assert "--grid" in capsys.readouterr().err


def test_verify_explicit_check_without_usable_grid(artifacts, tmp_path, capsys):
    rc = main(["verify", "--check", "conjecture-v",
               "--grid", str(artifacts["u2"]), "--out", str(tmp_path)])
    assert rc == 3
    assert "kind V" in capsys.readouterr().err


def test_verify_missing_artifact(tmp_path, capsys):
    rc = main(["verify", "--check", "basic", "--grid", "/nonexistent.meta.json",
               "--out", str(tmp_path)])
    assert rc == 3
    capsys.readouterr()


# ---------------------------------------------------------------------------
# export

def test_export_value_slice(artifacts, tmp_path):
    rc = main(["export", "--grid", str(artifacts["v2"]), "--what", "value",
               "--slice", "x2=1", "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "export.csv")
    assert rows[0] == ["x1", "x2", "v"]
    assert len(rows) == 34  # header + full x1 axis
    assert (tmp_path / "export.png").exists()


def test_export_full_policy_plane(artifacts, tmp_path):
    rc = main(["export", "--grid", str(artifacts["u2"]), "--what", "policy",
               "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "export.csv")
    assert rows[0] == ["x1", "x2", "policy_index"]
    assert len(rows) == 1 + 31 * 31  # interior lattice
    assert {float(r[2]) for r in rows[1:]} <= {1.0, 2.0}


def test_export_gradient_compact_coords(artifacts, tmp_path):
    rc = main(["export", "--grid", str(artifacts["v2"]), "--what", "gradient",
               "--coords", "compact", "--slice", "y2=0.5",
               "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "export.csv")
    assert rows[0] == ["y1", "y2", "dv_dx1", "dv_dx2"]
    assert all(r[1] == rows[1][1] for r in rows[1:])  # pinned axis constant


@pytest.mark.parametrize("bad", ["x2=-1", "x5=1", "z2=1", "x2=abc"])
def test_export_slice_errors(artifacts, tmp_path, capsys, bad):
    rc = main(["export", "--grid", str(artifacts["v2"]), "--slice", bad,
               "--out", str(tmp_path)])
    assert rc == 2
    capsys.readouterr()


def test_export_compact_slice_range(artifacts, tmp_path, capsys):
    rc = main(["export", "--grid", str(artifacts["v2"]), "--coords", "compact",
               "--slice", "y2=1.5", "--out", str(tmp_path)])
    assert rc == 2
    assert "outside the grid" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config files and usage

def test_config_file_sets_defaults_but_flags_win(artifacts, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"paths": 300, "seed": 7}))
    out1 = tmp_path / "one"
    assert main(["simulate", "--x0", "1,1", "--dt", "0.01", "--horizon", "1",
                 "--policy", "laggard", "--config", str(cfg),
                 "--out", str(out1)]) == 0
    echo = read_json(out1 / "estimate.json")["config"]
    assert echo["paths"] == 300 and echo["seed"] == 7
    out2 = tmp_path / "two"
    assert main(["simulate", "--x0", "1,1", "--dt", "0.01", "--horizon", "1",
                 "--policy", "laggard", "--config", str(cfg),
                 "--paths", "150", "--out", str(out2)]) == 0
    assert read_json(out2 / "estimate.json")["config"]["paths"] == 150


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pathz": 5}))
    rc = main(["simulate", "--x0", "1,1", "--policy", "laggard",
               "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 2
    assert "pathz" in capsys.readouterr().err


def test_no_command_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    capsys.readouterr()
