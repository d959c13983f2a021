"""
API routes for running scenarios and checking chains.
"""

import asyncio
import time
import uuid
from datetime import datetime, timezone

from fastapi import APIRouter, Depends, HTTPException

from app.api.middleware import authenticate_api_key
from app.models.reports import MetricsReport
from app.models.requests import ChainCheckRequest, RunBatchRequest, RunScenarioRequest
from app.models.responses import (
    BatchEntry,
    BatchRunResponse,
    ChainCheckResponse,
    CheckEntry,
    ScenarioRunResponse,
)
from app.models.scenario import ScenarioConfig
from app.services.kinematics import ChainError, load_chain, load_chain_file
from app.services.scenario import (
    ScenarioConfigError,
    apply_overrides,
    load_scenario,
    run_batch_async,
    run_scenario,
)
from app.services.selfcheck import check_chain
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

router = APIRouter()


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _error(status_code: int, error: str, message: str, run_id: str = "") -> HTTPException:
    return HTTPException(
        status_code=status_code,
        detail={
            "error": error,
            "message": message,
            "run_id": run_id or None,
            "timestamp": _now().isoformat(),
        },
    )


def _config_from_request(request: RunScenarioRequest) -> ScenarioConfig:
    """Resolve the scenario source and apply overrides; config problems become 422"""
    try:
        if request.bundled is not None:
            config = load_scenario(request.bundled)
        else:
            assert request.scenario is not None
            config = request.scenario
        return apply_overrides(
            config,
            dt=request.dt,
            steps=request.steps,
            disable_manipulability=request.disable_manipulability,
        )
    except ScenarioConfigError as e:
        raise _error(422, "INVALID_SCENARIO", str(e)) from e


def _trim(report: MetricsReport, include_series: bool) -> MetricsReport:
    if include_series:
        return report
    chains = [c.model_copy(update={"series": []}) for c in report.chains]
    return report.model_copy(update={"chains": chains})


@router.post(
    "/scenarios/run",
    response_model=ScenarioRunResponse,
    dependencies=[Depends(authenticate_api_key)],
)
async def run_scenario_endpoint(request: RunScenarioRequest) -> ScenarioRunResponse:
    """Run one scenario to completion and return its report"""
    start_time = time.perf_counter()
    config = _config_from_request(request)
    run_id = f"run_{uuid.uuid4().hex[:12]}"

    logger.info("Scenario run requested", extra={
        "scenario": config.name,
        "run_id": run_id,
        "steps": config.steps,
    })
    try:
        report = await asyncio.to_thread(
            run_scenario, config, write_files=request.write_files, run_id=run_id
        )
    except ScenarioConfigError as e:
        raise _error(422, "INVALID_SCENARIO", str(e), run_id) from e
    except Exception as e:
        logger.error("Scenario run failed", extra={
            "scenario": config.name,
            "run_id": run_id,
            "error": str(e),
        }, exc_info=True)
        raise _error(500, "RUN_FAILED", "Internal error while running the scenario", run_id) from e

    if not report.completed:
        raise _error(500, "SOLVER_FAILURE", report.failure or "solver failure", run_id)

    return ScenarioRunResponse(
        run_id=run_id,
        scenario=config.name,
        status=report.status,
        timestamp=_now(),
        processing_time_ms=int((time.perf_counter() - start_time) * 1000),
        report=_trim(report, request.include_series),
    )


@router.post(
    "/scenarios/run-batch",
    response_model=BatchRunResponse,
    dependencies=[Depends(authenticate_api_key)],
)
async def run_batch_endpoint(request: RunBatchRequest) -> BatchRunResponse:
    """Run several scenarios concurrently; failures are reported per entry"""
    start_time = time.perf_counter()
    batch_id = f"batch_{uuid.uuid4().hex[:12]}"
    configs = [_config_from_request(r) for r in request.scenarios]

    logger.info("Batch run requested", extra={
        "batch_id": batch_id,
        "scenarios": [c.name for c in configs],
    })
    items = await run_batch_async(configs)

    results = []
    for item, entry in zip(items, request.scenarios):
        if item.report is None:
            results.append(BatchEntry(scenario=item.name, status="error", error=str(item.error)))
        else:
            results.append(BatchEntry(
                scenario=item.name,
                status=item.report.status,
                report=_trim(item.report, entry.include_series),
                error=item.report.failure,
            ))

    return BatchRunResponse(
        batch_id=batch_id,
        timestamp=_now(),
        processing_time_ms=int((time.perf_counter() - start_time) * 1000),
        total=len(results),
        completed=sum(1 for r in results if r.status == "completed"),
        results=results,
    )


@router.post(
    "/chains/check",
    response_model=ChainCheckResponse,
    dependencies=[Depends(authenticate_api_key)],
)
async def check_chain_endpoint(request: ChainCheckRequest) -> ChainCheckResponse:
    """Compare a chain's Jacobians against finite differences"""
    try:
        if request.chain is not None:
            chain = load_chain(request.chain)
        else:
            chain = load_chain_file(request.bundled or "")
    except ChainError as e:
        raise _error(422, "INVALID_CHAIN", str(e)) from e

    report = await asyncio.to_thread(check_chain, chain, request.samples, request.seed)
    return ChainCheckResponse(
        chain=chain.name,
        dof=chain.dof,
        passed=report.passed,
        samples=report.samples,
        seed=report.seed,
        results=[
            CheckEntry(name=r.name, max_error=r.max_error, tolerance=r.tolerance, passed=r.passed)
            for r in report.results
        ],
    )
