"""
Test suite for scenario loading, references, obstacles and short runs.
"""

import json
import math

import numpy as np
import pytest

from app.models.scenario import SphereObstacle, ToolObstacle
from app.services.controller import min_clearance
from app.services.scenario import (
    ScenarioConfigError,
    ScenarioError,
    apply_overrides,
    bundled_scenarios,
    circle_basis,
    load_scenario,
    obstacles_for,
    parse_scenario,
    prepare_chains,
    reference_at,
    run_batch,
    run_batch_async,
    run_scenario,
    sphere_center,
    update_obstacles,
)
from tests.fixtures.chain_samples import SHAFT_X, ChainSamples, ScenarioSamples


class TestParseScenario:
    """Schema, defaults and validation"""

    def test_defaults(self):
        config = parse_scenario(ScenarioSamples.circle())
        assert config.time_step == 0.01
        assert config.gains.dt == 0.01
        assert config.steps == 100
        assert config.stack.order == ["limits", "rcm", "tracking", "manipulability"]
        assert config.stack.rcm_mode == "vector"
        assert config.obstacles == []
        assert config.output.csv_name == "steps.csv"
        assert config.safety.enabled

    def test_from_json_text(self):
        config = parse_scenario(json.dumps(ScenarioSamples.circle()))
        assert config.name == "circle_test"

    def test_dt_taken_from_gains(self):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(), gains={"dt": 0.02})
        config = parse_scenario(data)
        assert config.time_step == 0.02
        assert config.steps == 50

    def test_dt_overrides_gains(self):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(), dt=0.005, gains={"dt": 0.02})
        config = parse_scenario(data)
        assert config.time_step == 0.005
        assert config.gains.dt == 0.005

    def test_steps_robust_to_round_off(self):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(), dt=0.1, duration=0.3)
        assert parse_scenario(data).steps == 3

    def test_duration_shorter_than_dt(self):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(), duration=0.005)
        with pytest.raises(ScenarioConfigError, match="shorter than dt"):
            parse_scenario(data)

    def test_zero_duration(self):
        assert parse_scenario(ScenarioSamples.circle(duration=0.0)).steps == 0

    def test_malformed_json(self):
        with pytest.raises(ScenarioConfigError, match="malformed"):
            parse_scenario("{")

    def test_unknown_field_names_path(self):
        data = ScenarioSamples.circle()
        data["chains"][0]["colour"] = "red"
        with pytest.raises(ScenarioConfigError, match="chains.0.colour"):
            parse_scenario(data)

    def test_sphere_needs_exactly_one_motion(self):
        data = ScenarioSamples.static_sphere()
        data["obstacles"][0]["waypoints"] = [{"t": 0.0, "position": [0, 0, 0]}]
        with pytest.raises(ScenarioConfigError, match="exactly one"):
            parse_scenario(data)

    def test_waypoint_times_increase(self):
        data = ScenarioSamples.moving_sphere()
        data["obstacles"][0]["waypoints"][1]["t"] = 0.0
        with pytest.raises(ScenarioConfigError, match="strictly increasing"):
            parse_scenario(data)

    def test_tool_obstacle_must_exist(self):
        data = ScenarioSamples.with_updates(
            ScenarioSamples.circle(), obstacles=[{"type": "tool", "chain": 1}]
        )
        with pytest.raises(ScenarioConfigError, match="does not exist"):
            parse_scenario(data)

    @pytest.mark.parametrize("stack", [
        {"order": ["limits", "limits", "tracking"]},
        {"order": ["limits", "rcm"]},
        {"manipulability_rows": [0, 6]},
        {"rcm_mode": "cone"},
    ])
    def test_invalid_stack(self, stack):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(), stack=stack)
        with pytest.raises(ScenarioConfigError, match="stack"):
            parse_scenario(data)

    def test_two_chains_see_each_other(self):
        data = load_scenario("case4_two_tools").model_dump()
        data["obstacles"] = []
        config = parse_scenario(data)
        tools = [o for o in config.obstacles if isinstance(o, ToolObstacle)]
        assert sorted(o.chain for o in tools) == [0, 1]

    def test_at_most_two_chains(self):
        data = ScenarioSamples.circle()
        data["chains"] = data["chains"] * 3
        with pytest.raises(ScenarioConfigError, match="chains"):
            parse_scenario(data)


class TestLoadScenario:
    """Bundled files and overrides"""

    def test_bundled_names(self):
        assert bundled_scenarios() == [
            "case1_circle",
            "case2_static_obstacle",
            "case3_dynamic_obstacle",
            "case4_two_tools",
        ]

    @pytest.mark.parametrize("name", [
        "case1_circle", "case2_static_obstacle", "case3_dynamic_obstacle", "case4_two_tools",
    ])
    def test_bundled_files_prepare(self, name):
        config = load_scenario(name)
        prepared = prepare_chains(config)
        assert len(prepared) == len(config.chains)
        for prep in prepared:
            assert prep.trocar is not None
            assert prep.chain.dof == 10
        assert config.gains.k_d == pytest.approx(1e-5)

    @pytest.mark.parametrize("t", [0.0, 10.0])
    def test_static_sphere_outside_activation_at_ends(self, t):
        config = load_scenario("case2_static_obstacle")
        prep = prepare_chains(config)[0]
        state = prep.chain.state(prep.q0)
        clearance = min_clearance(state, update_obstacles(config, t))
        assert clearance == pytest.approx(0.04, abs=2e-3)
        assert clearance > config.gains.d_epsilon

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioConfigError, match="cannot read"):
            load_scenario(tmp_path / "missing.json")

    def test_file_in_directory(self, tmp_path):
        path = tmp_path / "mine.json"
        path.write_text(json.dumps(ScenarioSamples.circle()), encoding="utf-8")
        assert load_scenario(path).name == "circle_test"

    def test_overrides(self):
        config = parse_scenario(ScenarioSamples.circle())
        updated = apply_overrides(config, dt=0.02, steps=5, disable_manipulability=True)
        assert updated.time_step == 0.02
        assert updated.gains.dt == 0.02
        assert updated.steps == 5
        assert not updated.stack.enable_manipulability
        assert config.stack.enable_manipulability

    def test_negative_step_override(self):
        config = parse_scenario(ScenarioSamples.circle())
        with pytest.raises(ScenarioConfigError):
            apply_overrides(config, steps=-1)


class TestPrepareChains:
    """Chain resolution and start configurations"""

    def test_wrong_q0_length(self):
        data = ScenarioSamples.circle()
        data["chains"][0]["q0"] = [0.0, 0.0]
        with pytest.raises(ScenarioConfigError, match="chains.0"):
            prepare_chains(parse_scenario(data))

    def test_q0_outside_limits(self):
        data = ScenarioSamples.circle()
        data["chains"][0]["q0"][0] = 3.5
        with pytest.raises(ScenarioConfigError, match="outside their limits"):
            prepare_chains(parse_scenario(data))

    def test_unknown_chain(self):
        data = ScenarioSamples.circle()
        data["chains"][0]["chain"] = "no_such_chain"
        with pytest.raises(ScenarioConfigError, match="chains.0"):
            prepare_chains(parse_scenario(data))

    def test_trocar_without_tool_axis(self, tmp_path):
        chain_file = tmp_path / "bare.json"
        chain_file.write_text(json.dumps(ChainSamples.single_joint_description()), encoding="utf-8")
        data = ScenarioSamples.circle()
        data["chains"][0].update({"chain": str(chain_file), "q0": [0.0]})
        data["chains"][0]["trajectory"] = {"type": "fixed"}
        with pytest.raises(ScenarioConfigError, match="no tool axis"):
            prepare_chains(parse_scenario(data))

    def test_base_pose_applies(self):
        config = load_scenario("case4_two_tools")
        left, right = prepare_chains(config)
        np.testing.assert_allclose(left.initial_pose.translation, [SHAFT_X, 0.0, -0.17], atol=1e-12)
        np.testing.assert_allclose(
            right.initial_pose.translation, [1.171370849898 - SHAFT_X, 0.0, -0.17], atol=1e-9
        )


class TestReferences:
    """Trajectories and obstacle motion"""

    def test_circle_start_and_quarter(self):
        config = parse_scenario(ScenarioSamples.circle())
        prep = prepare_chains(config)[0]
        trajectory = config.chains[0].trajectory
        start = reference_at(trajectory, 0.0, prep.initial_pose)
        np.testing.assert_allclose(start.pose.translation, [SHAFT_X, 0.0, -0.17], atol=1e-12)
        speed = 0.02 * 2.0 * math.pi / 10.0
        np.testing.assert_allclose(start.feedforward, [0.0, speed, 0.0, 0.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_array_equal(start.pose.rotation, prep.initial_pose.rotation)
        quarter = reference_at(trajectory, 2.5, prep.initial_pose)
        np.testing.assert_allclose(quarter.pose.translation, [SHAFT_X - 0.02, 0.02, -0.17], atol=1e-12)

    def test_fixed_defaults_to_initial_pose(self):
        config = parse_scenario(ScenarioSamples.moving_sphere())
        prep = prepare_chains(config)[0]
        reference = reference_at(config.chains[0].trajectory, 3.0, prep.initial_pose)
        assert reference.pose is prep.initial_pose
        np.testing.assert_array_equal(reference.feedforward, np.zeros(6))

    @pytest.mark.parametrize("normal, u, v", [
        ([0, 0, 1], [1, 0, 0], [0, 1, 0]),
        ([0, 0, -1], [1, 0, 0], [0, -1, 0]),
        ([1, 0, 0], [0, 1, 0], [0, 0, 1]),
    ])
    def test_circle_basis(self, normal, u, v):
        bu, bv, bn = circle_basis(normal)
        np.testing.assert_allclose(bu, u, atol=1e-15)
        np.testing.assert_allclose(bv, v, atol=1e-15)
        np.testing.assert_allclose(bn, normal, atol=1e-15)

    @pytest.mark.parametrize("t, expected", [
        (-1.0, [0.0, 0.0, 0.0]),
        (0.25, [0.25, 0.0, 0.0]),
        (5.0, [1.0, 0.0, 0.0]),
    ])
    def test_sphere_interpolation(self, t, expected):
        obstacle = SphereObstacle.model_validate(ScenarioSamples.moving_sphere()["obstacles"][0])
        np.testing.assert_allclose(sphere_center(obstacle, t), expected, atol=1e-15)

    def test_tool_obstacles_need_states(self):
        config = load_scenario("case4_two_tools")
        with pytest.raises(ScenarioError):
            update_obstacles(config, 0.0)

    def test_tool_obstacles_expand_per_capsule(self):
        config = load_scenario("case4_two_tools")
        states = [p.chain.state(p.q0) for p in prepare_chains(config)]
        world = update_obstacles(config, 0.0, states)
        assert len(world) == 4
        mine = obstacles_for(0, world)
        assert len(mine) == 2
        assert all(o.owner == 1 for o in mine)
        assert mine[0].label == "right_tool.link0"


class TestRunScenario:
    """Short simulations"""

    def test_short_run_writes_files(self, tmp_path):
        config = parse_scenario(ScenarioSamples.circle(duration=0.05))
        report = run_scenario(config, output_dir=tmp_path)
        assert report.completed
        assert report.steps == 5
        assert set(report.files) == {"series_0", "summary"}
        series = report.chains[0].series
        assert [row.t for row in series] == pytest.approx([0.0, 0.01, 0.02, 0.03, 0.04])
        assert series[0].ee_err_m == pytest.approx(0.0, abs=1e-12)
        assert report.summary.max_rcm_err_m < 1e-4
        assert report.safety.passed
        assert all(row.solve_ms == 0.0 for row in series)
        assert (tmp_path / "summary.json").exists()

    def test_csv_is_deterministic(self, tmp_path):
        config = parse_scenario(ScenarioSamples.static_sphere(duration=0.05))
        first = run_scenario(config, output_dir=tmp_path / "a")
        second = run_scenario(config, output_dir=tmp_path / "b")
        a = (tmp_path / "a" / "steps.csv").read_bytes()
        b = (tmp_path / "b" / "steps.csv").read_bytes()
        assert a == b
        assert first.chains[0].series == second.chains[0].series

    def test_zero_duration(self):
        report = run_scenario(parse_scenario(ScenarioSamples.circle(duration=0.0)), write_files=False)
        assert report.completed
        assert report.steps == 0
        assert report.summary.steps == 0

    def test_solver_failure_ends_run(self):
        data = ScenarioSamples.with_updates(ScenarioSamples.circle(duration=0.05), gains={"k_d": 0.0})
        report = run_scenario(parse_scenario(data), write_files=False)
        assert report.status == "solver_failure"
        assert "step 0" in report.failure
        assert report.steps == 0

    def test_run_id_is_recorded(self):
        config = parse_scenario(ScenarioSamples.circle(duration=0.01))
        report = run_scenario(config, write_files=False, run_id="fixed-id")
        assert report.run_id == "fixed-id"


class TestBatch:
    """Thread-pool and async batches"""

    def test_run_batch_keeps_order_and_errors(self, tmp_path):
        good = parse_scenario(ScenarioSamples.circle(duration=0.02))
        bad_data = ScenarioSamples.with_updates(ScenarioSamples.circle(duration=0.02), name="bad")
        bad_data["chains"][0]["chain"] = "no_such_chain"
        bad = parse_scenario(bad_data)
        items = run_batch([good, bad], max_workers=2, output_root=tmp_path)
        assert [item.name for item in items] == ["circle_test", "bad"]
        assert items[0].report is not None and items[0].report.steps == 2
        assert isinstance(items[1].error, ScenarioConfigError)
        assert (tmp_path / "circle_test" / "steps.csv").exists()

    def test_empty_batch(self):
        assert run_batch([]) == []

    async def test_run_batch_async(self):
        configs = [
            parse_scenario(ScenarioSamples.circle(duration=0.02)),
            parse_scenario(ScenarioSamples.static_sphere(duration=0.02)),
        ]
        items = await run_batch_async(configs, max_concurrency=2)
        assert [item.name for item in items] == ["circle_test", "sphere_test"]
        assert all(item.report is not None and item.report.completed for item in items)
        assert all(item.report.files == {} for item in items)
