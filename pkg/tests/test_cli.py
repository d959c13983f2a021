"""
Test suite for the ``hqp-ik`` command line.
"""

import json

import pytest

from app import __version__
from app.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_SAFETY_VIOLATION,
    EXIT_SOLVER_FAILURE,
    main,
)
from app.services.selfcheck import CheckResult, SelfCheckReport
from tests.fixtures.chain_samples import ScenarioSamples


def _scenario_file(tmp_path, data, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


class TestVersionAndCheck:
    """version and check commands"""

    def test_version(self, capsys):
        assert main(["version"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == __version__

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_check_bundled_chain(self, capsys):
        assert main(["check", "--chain", "planar_2r", "--samples", "3"]) == EXIT_OK
        output = json.loads(capsys.readouterr().out)
        assert output["passed"] is True
        assert output["dof"] == 2
        assert output["samples"] == 3

    def test_check_unknown_chain(self, capsys):
        assert main(["check", "--chain", "no_such_chain"]) == EXIT_CONFIG_ERROR
        assert "config error" in capsys.readouterr().err

    def test_check_needs_samples(self):
        assert main(["check", "--chain", "planar_2r", "--samples", "0"]) == EXIT_CONFIG_ERROR

    def test_check_mismatch(self, monkeypatch, capsys):
        def failing(chain, samples, seed):
            return SelfCheckReport(
                chain=chain.name,
                samples=samples,
                seed=seed,
                results=[CheckResult("geometric_jacobian", 1.0, 1e-5)],
            )

        monkeypatch.setattr("app.cli.check_chain", failing)
        assert main(["check", "--chain", "planar_2r"]) == EXIT_CHECK_FAILED
        assert json.loads(capsys.readouterr().out)["passed"] is False


class TestRun:
    """run command"""

    def test_bundled_run_writes_results(self, tmp_path, capsys):
        out = tmp_path / "case1"
        code = main(["run", "--scenario", "case1_circle", "--steps", "3", "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "steps.csv").exists()
        assert (out / "summary.json").exists()
        assert "[case1_circle] completed, 3 steps" in capsys.readouterr().out

    def test_several_scenarios(self, tmp_path):
        code = main([
            "run",
            "--scenario", "case1_circle",
            "--scenario", "case4_two_tools",
            "--steps", "2",
            "--out", str(tmp_path),
            "--workers", "2",
        ])
        assert code == EXIT_OK
        assert (tmp_path / "case1_circle" / "steps.csv").exists()
        assert (tmp_path / "case4_two_tools" / "steps_0.csv").exists()
        assert (tmp_path / "case4_two_tools" / "steps_1.csv").exists()

    def test_missing_scenario(self, capsys):
        assert main(["run", "--scenario", "case9_missing"]) == EXIT_CONFIG_ERROR
        assert "config error" in capsys.readouterr().err

    def test_duplicate_names(self, tmp_path):
        code = main([
            "run", "--scenario", "case1_circle", "--scenario", "case1_circle", "--out", str(tmp_path)
        ])
        assert code == EXIT_CONFIG_ERROR

    def test_unknown_chain(self, tmp_path):
        data = ScenarioSamples.circle(duration=0.02)
        data["chains"][0]["chain"] = "no_such_chain"
        path = _scenario_file(tmp_path, data)
        assert main(["run", "--scenario", path, "--out", str(tmp_path / "out")]) == EXIT_CONFIG_ERROR

    def test_solver_failure(self, tmp_path):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(duration=0.02), gains={"k_d": 0.0})
        path = _scenario_file(tmp_path, data)
        assert main(["run", "--scenario", path, "--out", str(tmp_path / "out")]) == EXIT_SOLVER_FAILURE

    def test_safety_violation(self, tmp_path, capsys):
        data = ScenarioSamples.with_updates(
            ScenarioSamples.static_sphere(duration=0.02), safety={"min_clearance": 1.0}
        )
        path = _scenario_file(tmp_path, data)
        code = main(["run", "--scenario", path, "--out", str(tmp_path / "out")])
        assert code == EXIT_SAFETY_VIOLATION
        assert "SAFETY" in capsys.readouterr().out

    def test_disable_manipulability(self, tmp_path):
        code = main([
            "run",
            "--scenario", "case1_circle",
            "--steps", "2",
            "--disable-manipulability",
            "--seed", "42",
            "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
