"""Structural and statistical checks over solved grids."""

import dataclasses
import json

import numpy as np
import pytest

from survalloc import (
    CheckReport,
    ConfigError,
    DriftBudget,
    KindMismatchError,
    Laggard,
    ProvenanceError,
    check_bounds_symmetry_monotonicity,
    check_conjecture_v,
    check_counterexample_u,
    check_lifting,
    check_mc_vs_pde,
    check_thresholds,
    closed_form_dim1,
    render_summary,
    reports_to_json,
)

PARAMS0 = DriftBudget(0.0)


def relabeled(grid, kind):
    """The same payload under the other kind's label (adversarial input)."""
    spec = dataclasses.replace(grid.spec, kind=kind)
    return dataclasses.replace(grid, spec=spec)


# ---------------------------------------------------------------------------
# bounds / symmetry / monotonicity

def test_basic_check_passes_with_zero_bound_margin(v2_257, u2_257):
    for grid in (v2_257, u2_257):
        rep = check_bounds_symmetry_monotonicity(grid)
        assert rep.passed and rep.margin == 0.0
        assert rep.metadata["bound_margin"] == 0.0  # boundary touches the envelope
        assert rep.metadata["symmetry_margin"] < 1e-8
        assert rep.metadata["grid_sha256"] == grid.payload_sha256()
        assert rep.locations == []


def test_basic_check_flags_asymmetry(v2_257):
    bad = v2_257.values.copy()
    bad[3, 5] -= 1e-4
    rep = check_bounds_symmetry_monotonicity(
        dataclasses.replace(v2_257, values=bad))
    assert not rep.passed and rep.margin < 0
    assert rep.metadata["symmetry_margin"] == pytest.approx(1e-4, rel=1e-6)


def test_basic_check_flags_bound_violation(v2_257):
    bad = v2_257.values.copy()
    bad[-2, -2] += 0.1
    rep = check_bounds_symmetry_monotonicity(
        dataclasses.replace(v2_257, values=bad))
    assert not rep.passed
    assert rep.metadata["worst_part"] == "bound"
    assert 0 < len(rep.locations) <= 20
    assert all(len(loc) == 2 for loc in rep.locations)


# ---------------------------------------------------------------------------
# ordered gradients on V

def test_conjecture_v_passes(v2_257):
    rep = check_conjecture_v(v2_257)
    assert rep.passed and rep.margin > 0
    assert rep.metadata["pairs_checked"] > 0
    assert rep.metadata["argmax_mismatches"] == 0
    assert rep.metadata["argmax_nodes_checked"] > 1000


def test_conjecture_v_rejects_wrong_inputs(u2_257):
    with pytest.raises(KindMismatchError):
        check_conjecture_v(u2_257)
    one_d = closed_form_dim1("V", PARAMS0, 65)
    with pytest.raises(ConfigError, match="n >= 2"):
        check_conjecture_v(one_d)


# ---------------------------------------------------------------------------
# reversed gradients on U

def test_counterexample_u_finds_the_pocket(u2_257):
    rep = check_counterexample_u(u2_257)
    assert rep.passed and rep.margin > 0.1
    assert 0.15 < rep.metadata["max_gap"] < 0.25
    assert len(rep.metadata["ladder_gaps"]) == 4
    assert rep.metadata["threshold_reached"] is False
    assert len(rep.locations) > 0


def test_counterexample_u_fails_on_relabeled_v_payload(v2_257):
    # all-survive values carry no reversed-gradient pocket
    rep = check_counterexample_u(relabeled(v2_257, "U"))
    assert not rep.passed and rep.metadata["max_gap"] < 0


def test_counterexample_u_rejects_wrong_inputs(v2_257, u3_chain_129):
    with pytest.raises(KindMismatchError):
        check_counterexample_u(v2_257)
    with pytest.raises(ConfigError, match="2-D"):
        check_counterexample_u(u3_chain_129[0][3])


# ---------------------------------------------------------------------------
# lifting the pocket one dimension up

def test_lifting_passes(u3_chain_129):
    grids = u3_chain_129[0]
    rep = check_lifting(grids[3], grids[2])
    assert rep.passed
    devs = rep.metadata["trace_deviations"]
    assert devs == sorted(devs, reverse=True)
    assert all(d > 0 for d in rep.metadata["trace_drops"])
    assert rep.metadata["max_gap"] > rep.metadata["noise_floor"]
    assert rep.metadata["lifted_n"] == 3 and rep.metadata["base_n"] == 2


def test_lifting_rejects_wrong_inputs(u2_257, u2_b1_257, u3_chain_129):
    with pytest.raises(ConfigError, match="dimensions"):
        check_lifting(u2_257, u2_257)
    with pytest.raises(ProvenanceError):
        check_lifting(u3_chain_129[0][3], u2_b1_257)  # b and m both disagree


# ---------------------------------------------------------------------------
# Monte Carlo checks (reduced path budgets; the acceptance suite runs full)

def test_thresholds_both_sides_reduced():
    rep = check_thresholds(paths=10_000, threads=4)
    assert rep.passed
    probes = rep.metadata["probes"]
    assert [p["regime"] for p in probes] == ["above", "below", "above", "below"]
    assert all(p["slack"] > 0 for p in probes)
    # schedules decay in both regimes
    for p in probes:
        assert p["means"] == sorted(p["means"], reverse=True)


def test_mc_vs_pde_v_default_and_laggard(v2_257):
    rep = check_mc_vs_pde(v2_257, [(1.0, 1.0)], paths=4000, threads=4)
    assert rep.passed and rep.margin > 0
    row = rep.metadata["rows"][0]
    assert row["grid_value"] == pytest.approx(0.5940, abs=5e-3)
    assert row["policy"]["policy"] == "GridFeedback"
    lag = check_mc_vs_pde(v2_257, [(1.0, 1.0)], policy=Laggard(),
                          paths=4000, threads=4)
    assert lag.passed
    assert lag.metadata["rows"][0]["policy"]["policy"] == "Laggard"


def test_mc_vs_pde_u_soft_bound(u2_257):
    rep = check_mc_vs_pde(u2_257, [(0.05, 0.15)], paths=4000, threads=4)
    assert rep.passed
    row = rep.metadata["rows"][0]
    assert set(row) >= {"feedback", "laggard", "gap", "gap_ci95", "grid_value"}
    lo, hi = row["gap_ci95"]
    assert lo < row["gap"] < hi


# ---------------------------------------------------------------------------
# reports

def test_reports_serialize_and_render(v2_257):
    reps = [
        check_bounds_symmetry_monotonicity(v2_257),
        check_conjecture_v(v2_257),
    ]
    blob = json.dumps(reports_to_json(reps))
    parsed = json.loads(blob)
    assert [r["name"] for r in parsed] == [
        "bounds_symmetry_monotonicity", "conjecture_v"]
    text = render_summary(reps)
    lines = text.splitlines()
    assert len(lines) == 3
    assert "pass" in lines[1] and "conjecture_v" in lines[2]


def test_report_fail_rendering():
    rep = CheckReport(name="demo", status="fail", margin=-0.25)
    assert not rep.passed
    assert "fail" in render_summary([rep])
