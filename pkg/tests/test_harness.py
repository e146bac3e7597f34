"""Tests for the experiment harness, artifacts, and the CLI."""
import json
import math

import numpy as np
import pytest

from slfvlab import cli
from slfvlab.core import dump_json, load_json
from slfvlab.harness import (
    ExperimentSpec,
    _split_range,
    law_from_dict,
    moment_diagnostic,
    params_from_dict,
    phi_from_dict,
    run_experiment,
    write_csv,
)


def ladder_spec() -> ExperimentSpec:
    """A two-rung fixed-radius ladder small enough for test budgets."""
    return ExperimentSpec(
        name="mini-ladder", kind="ForwardLadder", seed=5, replicates=40,
        settings={"law": {"type": "fixed", "radius": 1.0, "impact": 0.8},
                  "c1": 1.0, "c2": 1.0, "m_values": [2.0, 3.0],
                  "t_end": 0.04, "x0": 0.2, "lo": -1.0, "hi": 1.0})


@pytest.fixture(scope="module")
def ladder_artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("ladder")
    report = run_experiment(ladder_spec(), out_dir=out)
    return out, report


# ---------------------------------------------------------------------------
# Spec plumbing
# ---------------------------------------------------------------------------

def test_spec_validation_rejects_bad_inputs():
    with pytest.raises(ValueError, match="unknown experiment kind"):
        ExperimentSpec("x", "Nonsense").validate()
    with pytest.raises(ValueError, match="replicates"):
        ExperimentSpec("x", "DualityTest", replicates=0).validate()
    with pytest.raises(ValueError, match="strictly increasing"):
        ExperimentSpec("x", "ForwardLadder",
                       settings={"m_values": [2.0, 2.0]}).validate()
    with pytest.raises(ValueError, match="theta"):
        ExperimentSpec("x", "ExponentialMartingaleLadder",
                       settings={"theta": 0.75, "beta": 0.75}).validate()
    with pytest.raises(ValueError, match="law type"):
        ExperimentSpec("x", "DualityTest",
                       settings={"law": {"type": "weird"}}).validate()
    spec = ExperimentSpec.from_dict(ladder_spec().to_dict())
    assert spec.name == "mini-ladder" and spec.replicates == 40


def test_spec_file_round_trip(tmp_path):
    path = tmp_path / "spec.json"
    dump_json(ladder_spec().to_dict(), path)
    spec = ExperimentSpec.from_file(path)
    assert spec.to_dict() == ladder_spec().to_dict()
    bad = ladder_spec().to_dict()
    bad["kind"] = "Nonsense"
    dump_json(bad, path)
    with pytest.raises(ValueError, match="unknown experiment kind"):
        ExperimentSpec.from_file(path)


def test_component_builders_from_dicts():
    law = law_from_dict({"type": "variable", "alpha": 2.5, "gamma": 3.0})
    assert law.alpha == 2.5 and law.gamma == 3.0
    params = params_from_dict({"n_rate": 10.0, "m_space": 2.0,
                               "j_impact": 4.0, "k_density": 1.0})
    assert params.dimension == 1

    default = phi_from_dict(None)
    assert default.value(0.0) == 1.0 and default.support_radius == 0.5
    bump = phi_from_dict({"shape": "gaussian", "center": 0.3, "sigma": 0.25,
                          "amplitude": 2.0})
    assert bump.value(0.3) == pytest.approx(2.0, rel=1e-12)
    assert bump.support_center == 0.3
    with pytest.raises(ValueError, match="shape"):
        phi_from_dict({"shape": "triangle"})


def test_moment_diagnostic_power_and_guard():
    rep = moment_diagnostic([1.0, 2.0, 4.0], 0.5, 0.75)
    expected = (1.0 + 2.0 ** 1.5 + 4.0 ** 1.5) / 3.0
    assert rep.mean == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError, match="theta"):
        moment_diagnostic([1.0], 0.75, 0.75)
    with pytest.raises(ValueError, match="theta"):
        moment_diagnostic([1.0], 0.0, 0.75)


def test_split_range_partitions_in_order():
    blocks = _split_range(10, 3)
    assert blocks[0][0] == 0 and blocks[-1][1] == 10
    assert all(b > a for a, b in blocks)
    assert all(blocks[i][1] == blocks[i + 1][0] for i in range(len(blocks) - 1))
    assert _split_range(3, 8) == [(0, 1), (1, 2), (2, 3)]


def test_write_csv_format(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, [{"a": 0.1, "ok": True, "tag": "x"},
                     {"a": 2.5, "ok": False, "tag": "y"}])
    lines = path.read_text().splitlines()
    assert lines == ["a,ok,tag", "0.1,true,x", "2.5,false,y"]
    write_csv(path, [])
    assert path.read_text() == "\n"


# ---------------------------------------------------------------------------
# Determinism and artifacts
# ---------------------------------------------------------------------------

def test_worker_fanout_is_deterministic(ladder_artifacts):
    _, base = ladder_artifacts
    fanned = run_experiment(ladder_spec(), workers=3)
    assert fanned.to_dict()["tables"] == base.to_dict()["tables"]


def test_artifacts_round_trip(ladder_artifacts):
    out, report = ladder_artifacts
    stored = load_json(out / "report.json")
    assert stored["tables"] == report.to_dict()["tables"]
    assert stored["spec"] == ladder_spec().to_dict()
    assert stored["kind"] == "ForwardLadder"
    lines = (out / "forward_ladder.csv").read_text().splitlines()
    rows = report.tables["forward_ladder"]
    assert lines[0].split(",") == list(rows[0].keys())
    assert len(lines) == 1 + len(rows)
    # Rung constants come straight from the schedule.
    assert rows[0]["m_space"] == 2.0 and rows[0]["j_impact"] == 4.0
    assert rows[1]["n_rate"] == pytest.approx(81.0, rel=1e-12)


def test_replay_detects_identity_and_tampering(ladder_artifacts, capsys):
    out, _ = ladder_artifacts
    assert cli.main(["replay", "--report", str(out)]) == 0
    assert "identical" in capsys.readouterr().out
    stored = load_json(out / "report.json")
    stored["tables"]["forward_ladder"][0]["estimate"] += 1e-3
    dump_json(stored, out / "report.json")
    assert cli.main(["replay", "--report", str(out / "report.json")]) == 1
    assert "DIFFER" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def analytic_spec_dict() -> dict:
    return {"name": "quick-analytic", "kind": "AnalyticChecks", "seed": 1,
            "replicates": 1, "settings": {"betas": [0.5]}}


def test_cli_validate_and_run(tmp_path, capsys):
    path = tmp_path / "an.json"
    dump_json(analytic_spec_dict(), path)
    assert cli.main(["validate", "--spec", str(path)]) == 0
    assert "quick-analytic" in capsys.readouterr().out

    out = tmp_path / "artifacts"
    assert cli.main(["analytic", "--spec", str(path), "--out", str(out),
                     "--seed", "42"]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "[analytic]" in text
    stored = load_json(out / "report.json")
    assert stored["seed"] == 42 and stored["passed"] is True
    assert {"analytic"} == set(stored["tables"])

    bad = dict(analytic_spec_dict(), kind="Nonsense")
    dump_json(bad, path)
    assert cli.main(["validate", "--spec", str(path)]) == 2
    assert "invalid" in capsys.readouterr().err


def test_cli_kind_mismatch_and_missing_spec(tmp_path, capsys):
    path = tmp_path / "an.json"
    dump_json(analytic_spec_dict(), path)
    assert cli.main(["duality", "--spec", str(path)]) == 2
    assert "does not match" in capsys.readouterr().err
    assert cli.main(["analytic", "--spec", str(tmp_path / "nope.json")]) == 2
