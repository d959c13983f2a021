"""
Scenario simulator.

Loads a scenario file, steps every chain's controller at a fixed period
with explicit Euler integration, and collects per-step metrics. Two-chain
scenarios are stepped from one shared snapshot per period: each controller
sees the other tool where it was at the start of the step.
"""

import asyncio
import json
import math
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from app.config import settings
from app.models.reports import (
    ChainReport,
    MetricsReport,
    MetricsSummary,
    SafetyReport,
    StepMetrics,
)
from app.models.scenario import (
    ChainSetup,
    CircleTrajectory,
    FixedTrajectory,
    ScenarioConfig,
    SphereObstacle,
)
from app.services.controller import HQPController, Reference, WorldObstacle
from app.services.geometry import Segment
from app.services.hqp import HQPError
from app.services.kinematics import (
    ChainError,
    ChainState,
    DimensionMismatchError,
    KinematicChain,
    Pose,
    load_chain_file,
    rotation_from_rpy,
)
from app.services.metrics import ResultWriter, combine_metrics, compute_metrics
from app.services.tasks import TaskError
from app.utils.logger import TimedLogger, get_structured_logger, run_context
from app.utils.validation import format_validation_error

logger = get_structured_logger(__name__)

BUNDLED_SCENARIOS_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"


class ScenarioError(Exception):
    """Base exception for scenario problems"""
    pass


class ScenarioConfigError(ScenarioError):
    """Scenario file unreadable, malformed or inconsistent with its chains"""
    pass


class ScenarioStepError(ScenarioError):
    """A control step failed; carries the step index and time"""

    def __init__(self, step: int, t: float, message: str):
        super().__init__(f"step {step} (t={t:.4f} s): {message}")
        self.step = step
        self.t = t


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def bundled_scenario_path(name: str) -> Path:
    filename = name if name.endswith(".json") else f"{name}.json"
    return BUNDLED_SCENARIOS_DIR / filename


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in BUNDLED_SCENARIOS_DIR.glob("*.json"))


def parse_scenario(data: Union[str, bytes, Mapping[str, Any]]) -> ScenarioConfig:
    """
    Validate scenario JSON text or a decoded mapping.

    Raises:
        ScenarioConfigError: malformed JSON or schema mismatch (field paths in message)
    """
    payload: Any = data
    if isinstance(data, (str, bytes)):
        try:
            payload = json.loads(data)
        except json.JSONDecodeError as e:
            raise ScenarioConfigError(f"malformed scenario file: {e}") from e
    try:
        return ScenarioConfig.model_validate(payload)
    except ValidationError as e:
        raise ScenarioConfigError(f"invalid scenario: {format_validation_error(e)}") from e


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Load a scenario file; bare names fall back to the bundled scenarios"""
    p = Path(path)
    if not p.exists() and not p.is_absolute():
        bundled = bundled_scenario_path(str(path))
        if bundled.exists():
            p = bundled
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioConfigError(f"cannot read scenario file {p}: {e}") from e
    config = parse_scenario(text)
    config._source_dir = p.resolve().parent
    logger.debug("Scenario loaded", extra={
        "scenario": config.name,
        "path": str(p),
        "chains": len(config.chains),
        "obstacles": len(config.obstacles),
    })
    return config


def apply_overrides(
    config: ScenarioConfig,
    *,
    dt: Optional[float] = None,
    steps: Optional[int] = None,
    disable_manipulability: bool = False,
) -> ScenarioConfig:
    """Copy of ``config`` with command-line overrides applied and re-validated"""
    data = config.model_dump()
    if dt is not None:
        data["dt"] = dt
        data["gains"]["dt"] = dt
    if steps is not None:
        if steps < 0:
            raise ScenarioConfigError("steps must be >= 0")
        data["duration"] = steps * (dt if dt is not None else config.time_step)
    if disable_manipulability:
        data["stack"]["enable_manipulability"] = False
    updated = parse_scenario(data)
    updated._source_dir = config._source_dir
    return updated


# ---------------------------------------------------------------------------
# Chains and references
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PreparedChain:
    index: int
    label: str
    setup: ChainSetup
    chain: KinematicChain
    q0: np.ndarray
    trocar: Optional[np.ndarray]
    initial_pose: Pose


def _resolve_chain(setup: ChainSetup, source_dir: Optional[Path]) -> KinematicChain:
    path = Path(setup.chain)
    if source_dir is not None and not path.is_absolute() and (source_dir / path).exists():
        path = source_dir / path
    chain = load_chain_file(path)
    if setup.base is not None:
        chain = chain.with_base(Pose.from_xyz_rpy(setup.base.xyz, setup.base.rpy))
    return chain


def prepare_chains(config: ScenarioConfig) -> list[PreparedChain]:
    """
    Load every chain and check its start configuration.

    Raises:
        ScenarioConfigError: chain file problems, wrong q0 length, q0 outside limits
    """
    prepared = []
    for i, setup in enumerate(config.chains):
        try:
            chain = _resolve_chain(setup, config._source_dir)
            q0 = chain.check_configuration(setup.q0)
        except (ChainError, DimensionMismatchError) as e:
            raise ScenarioConfigError(f"chains.{i}: {e}") from e
        band = config.gains.limit_tolerance
        outside = np.flatnonzero((q0 < chain.lower - band) | (q0 > chain.upper + band))
        if outside.size:
            raise ScenarioConfigError(
                f"chains.{i}.q0: joints {outside.tolist()} outside their limits"
            )
        if setup.trocar is not None and chain.tool_axis is None:
            raise ScenarioConfigError(f"chains.{i}: trocar given but chain has no tool axis")
        prepared.append(PreparedChain(
            index=i,
            label=setup.label or chain.name,
            setup=setup,
            chain=chain,
            q0=q0,
            trocar=None if setup.trocar is None else np.asarray(setup.trocar, dtype=float),
            initial_pose=chain.state(q0).pose(chain.end_effector),
        ))
    return prepared


def circle_basis(normal: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """In-plane (u, v) and unit normal; u is world x projected into the plane (y if x is normal)"""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    for seed in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        u = seed - float(seed @ n) * n
        if np.linalg.norm(u) > 1e-6:
            u = u / np.linalg.norm(u)
            return u, np.cross(n, u), n
    raise ValueError("cannot build a circle basis")  # unreachable for unit n


def reference_at(
    trajectory: Union[FixedTrajectory, CircleTrajectory],
    t: float,
    initial_pose: Pose,
) -> Reference:
    """Desired end-effector pose and feedforward velocity at time ``t``"""
    if isinstance(trajectory, FixedTrajectory):
        if trajectory.pose is None:
            return Reference(initial_pose)
        return Reference(Pose.from_xyz_rpy(trajectory.pose.xyz, trajectory.pose.rpy))

    u, v, _ = circle_basis(trajectory.normal)
    omega = 2.0 * math.pi / trajectory.period
    phase = trajectory.start_angle + omega * t
    center = np.asarray(trajectory.center, dtype=float)
    r = trajectory.radius
    position = center + r * (math.cos(phase) * u + math.sin(phase) * v)
    velocity = r * omega * (-math.sin(phase) * u + math.cos(phase) * v)
    rotation = (
        initial_pose.rotation if trajectory.rpy is None else rotation_from_rpy(trajectory.rpy)
    )
    return Reference(Pose(rotation, position), np.concatenate([velocity, np.zeros(3)]))


# ---------------------------------------------------------------------------
# Obstacles
# ---------------------------------------------------------------------------

def sphere_center(obstacle: SphereObstacle, t: float) -> np.ndarray:
    """Static center, or waypoints interpolated linearly and held past both ends"""
    if obstacle.center is not None:
        return np.asarray(obstacle.center, dtype=float)
    waypoints = obstacle.waypoints or []
    times = np.array([w.t for w in waypoints])
    points = np.array([w.position for w in waypoints], dtype=float)
    return np.array([np.interp(t, times, points[:, k]) for k in range(3)])


def update_obstacles(
    config: ScenarioConfig,
    t: float,
    states: Optional[Sequence[ChainState]] = None,
) -> list[WorldObstacle]:
    """
    World obstacles at time ``t``. Tool obstacles expand into one capsule
    per link of the referenced chain, taken from ``states``.
    """
    resolved: list[WorldObstacle] = []
    for i, obstacle in enumerate(config.obstacles):
        if isinstance(obstacle, SphereObstacle):
            resolved.append(WorldObstacle(
                label=obstacle.label or f"sphere{i}",
                radius=obstacle.radius,
                center=sphere_center(obstacle, t),
            ))
            continue
        if states is None:
            raise ScenarioError(f"obstacle {i} refers to chain {obstacle.chain}; chain states required")
        state = states[obstacle.chain]
        prefix = obstacle.label or f"tool{obstacle.chain}"
        for k, capsule in enumerate(state.chain.capsules):
            resolved.append(WorldObstacle(
                label=f"{prefix}.link{k}",
                radius=capsule.radius,
                segment=Segment(state.positions[capsule.frame_a], state.positions[capsule.frame_b]),
                owner=obstacle.chain,
            ))
    return resolved


def obstacles_for(chain_index: int, obstacles: Sequence[WorldObstacle]) -> list[WorldObstacle]:
    """Everything except the chain's own capsules"""
    return [o for o in obstacles if o.owner != chain_index]


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _safety(config: ScenarioConfig, prepared: list[PreparedChain], chains: list[ChainReport]) -> SafetyReport:
    if not config.safety.enabled:
        return SafetyReport(checked=False)
    violations = []
    for prep, report in zip(prepared, chains):
        s = report.summary
        if s.min_clearance_m is not None and s.min_clearance_m < config.safety.min_clearance:
            violations.append(
                f"chain {prep.index} ({prep.label}): clearance {s.min_clearance_m:.6g} m "
                f"below {config.safety.min_clearance:.6g} m"
            )
        if prep.trocar is not None and s.max_rcm_err_m > config.safety.max_rcm_error:
            violations.append(
                f"chain {prep.index} ({prep.label}): RCM error {s.max_rcm_err_m:.6g} m "
                f"above {config.safety.max_rcm_error:.6g} m"
            )
    return SafetyReport(checked=True, violations=violations)


def _output_directory(config: ScenarioConfig, output_dir: Optional[Union[str, Path]]) -> Path:
    if output_dir is not None:
        return Path(output_dir)
    if config.output.directory is not None:
        return Path(config.output.directory)
    return Path(settings.results_dir) / config.name


def run_scenario(
    config: ScenarioConfig,
    *,
    output_dir: Optional[Union[str, Path]] = None,
    write_files: bool = True,
    run_id: Optional[str] = None,
) -> MetricsReport:
    """
    Simulate ``config`` for floor(duration / dt) steps.

    A failing step ends the run early: the report carries the rows recorded
    so far with status ``solver_failure``. The per-step CSV is a pure
    function of the config unless ``output.record_timing`` is set.

    Raises:
        ScenarioConfigError: chains cannot be prepared
        OSError: result files cannot be written
    """
    with run_context(scenario=config.name, run_id=run_id) as ctx:
        with TimedLogger(logger, f"scenario {config.name}"):
            report = _simulate(config, ctx["run_id"] or "")
        if write_files:
            writer = ResultWriter(
                _output_directory(config, output_dir),
                csv_name=config.output.csv_name,
                summary_name=config.output.summary_name,
            )
            report.files = writer.write(report)
        logger.info("Scenario finished", extra={
            "status": report.status,
            "steps": report.steps,
            "avg_ee_err_m": report.summary.avg_ee_err_m,
            "max_rcm_err_m": report.summary.max_rcm_err_m,
            "min_clearance_m": report.summary.min_clearance_m,
            "safety_violations": len(report.safety.violations),
        })
        return report


def _simulate(config: ScenarioConfig, run_id: str) -> MetricsReport:
    started_at = datetime.now(timezone.utc)
    prepared = prepare_chains(config)
    dt = config.time_step
    controllers = [
        HQPController(p.chain, config.gains, config.stack, p.trocar) for p in prepared
    ]
    q = [p.q0.copy() for p in prepared]
    series: list[list[StepMetrics]] = [[] for _ in prepared]
    wall_ms: list[float] = []
    status = "completed"
    failure: Optional[str] = None
    total = config.steps

    logger.info("Scenario started", extra={
        "chains": [p.label for p in prepared],
        "steps": total,
        "dt": dt,
    })

    for k in range(total):
        t = k * dt
        states = [p.chain.state(qi) for p, qi in zip(prepared, q)]
        world = update_obstacles(config, t, states)
        try:
            steps = []
            for prep, controller, state in zip(prepared, controllers, states):
                reference = reference_at(prep.setup.trajectory, t, prep.initial_pose)
                steps.append(controller.step(state, reference, obstacles_for(prep.index, world)))
        except (HQPError, TaskError) as e:
            error = ScenarioStepError(k, t, str(e))
            logger.error("Scenario step failed", extra={"step": k, "t": t, "error": str(e)})
            status = "solver_failure"
            failure = str(error)
            break

        for i, (prep, step) in enumerate(zip(prepared, steps)):
            wall_ms.append(step.solve_ms)
            series[i].append(StepMetrics(
                t=t,
                q=q[i].tolist(),
                ee_err_m=step.ee_error,
                rcm_err_m=step.rcm_error,
                mu=step.manipulability,
                min_clearance_m=step.min_clearance,
                beta_a=step.beta_a,
                solve_ms=step.solve_ms if config.output.record_timing else 0.0,
            ))
            q[i] = q[i] + dt * step.qdot

    chains = []
    for prep, rows in zip(prepared, series):
        summary = compute_metrics(rows) if rows else MetricsSummary.empty()
        chains.append(ChainReport(
            index=prep.index, name=prep.label, dof=prep.chain.dof, series=rows, summary=summary
        ))
    if any(series):
        summary = combine_metrics([rows for rows in series if rows])
        summary = summary.model_copy(update={"wall_ms_per_step": float(np.mean(wall_ms))})
    else:
        summary = MetricsSummary.empty()

    return MetricsReport(
        scenario=config.name,
        run_id=run_id,
        status=status,
        failure=failure,
        dt=dt,
        duration=config.duration,
        steps=len(series[0]),
        started_at=started_at,
        chains=chains,
        summary=summary,
        safety=_safety(config, prepared, chains),
    )


@dataclass
class BatchItem:
    name: str
    report: Optional[MetricsReport] = None
    error: Optional[BaseException] = None


def _batch_workers(count: int, max_workers: Optional[int]) -> int:
    limit = max_workers if max_workers is not None else settings.max_concurrent_scenarios
    return max(1, min(limit, count))


def run_batch(
    configs: Sequence[ScenarioConfig],
    *,
    max_workers: Optional[int] = None,
    output_root: Optional[Union[str, Path]] = None,
    write_files: bool = True,
) -> list[BatchItem]:
    """Run scenarios on a thread pool; results keep the input order"""
    if not configs:
        return []

    def work(config: ScenarioConfig) -> MetricsReport:
        out = None if output_root is None else Path(output_root) / config.name
        return run_scenario(config, output_dir=out, write_files=write_files)

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=_batch_workers(len(configs), max_workers)) as pool:
        futures = [pool.submit(work, c) for c in configs]
        items = []
        for config, future in zip(configs, futures):
            try:
                items.append(BatchItem(config.name, report=future.result()))
            except Exception as e:
                logger.error("Scenario in batch failed", extra={
                    "scenario": config.name,
                    "error": str(e),
                })
                items.append(BatchItem(config.name, error=e))
    logger.info("Batch finished", extra={
        "scenarios": len(configs),
        "failed": sum(1 for i in items if i.error is not None),
        "duration_ms": round((time.perf_counter() - started) * 1000.0, 3),
    })
    return items


async def run_batch_async(
    configs: Sequence[ScenarioConfig],
    *,
    max_concurrency: Optional[int] = None,
    write_files: bool = False,
) -> list[BatchItem]:
    """Async variant for the HTTP API: worker threads behind a semaphore"""
    semaphore = asyncio.Semaphore(_batch_workers(max(1, len(configs)), max_concurrency))

    async def one(config: ScenarioConfig) -> MetricsReport:
        async with semaphore:
            return await asyncio.to_thread(run_scenario, config, write_files=write_files)

    results = await asyncio.gather(*(one(c) for c in configs), return_exceptions=True)
    items = []
    for config, result in zip(configs, results):
        if isinstance(result, BaseException):
            logger.error("Scenario in batch failed", extra={
                "scenario": config.name,
                "error": str(result),
            })
            items.append(BatchItem(config.name, error=result))
        else:
            items.append(BatchItem(config.name, report=result))
    return items
