"""
HQP surgical IK - FastAPI application.

Serves scenario runs and chain self-checks over HTTP with structured
request logging.
"""

import time
import uuid
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from typing import Any, AsyncIterator, Awaitable, Callable

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app import __version__
from app.api.routes import router
from app.config import settings
from app.services.kinematics import BUNDLED_CHAINS_DIR
from app.services.scenario import bundled_scenarios
from app.utils.logger import TimedLogger, get_structured_logger, run_context

logger = get_structured_logger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI) -> AsyncIterator[None]:
    logger.info("Starting HQP IK API", extra={
        "environment": settings.environment,
        "port": settings.port,
        "log_level": settings.log_level,
        "auth_required": bool(settings.internal_api_key),
    })
    yield
    logger.info("Shutting down HQP IK API")


app = FastAPI(
    title="HQP Surgical IK API",
    version=__version__,
    description="Hierarchical QP inverse kinematics for RCM-constrained surgical tools",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"] if settings.is_development() else [],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(router, prefix="/api/v1", tags=["simulation"])


@app.middleware("http")
async def log_requests(
    request: Request, call_next: Callable[[Request], Awaitable[Response]]
) -> Response:
    """Request logging with a request ID bound to every record of the request"""
    start_time = time.perf_counter()
    request_id = f"req_{uuid.uuid4().hex[:12]}"

    with run_context(run_id=request_id):
        logger.info("Request started", extra={
            "method": request.method,
            "path": request.url.path,
            "client_ip": request.client.host if request.client else "unknown",
        })
        try:
            response = await call_next(request)
        except Exception as e:
            logger.error("Request failed", extra={
                "method": request.method,
                "path": request.url.path,
                "error": str(e),
                "processing_time_ms": int((time.perf_counter() - start_time) * 1000),
            }, exc_info=True)
            return JSONResponse(
                status_code=500,
                content={
                    "error": "Internal server error",
                    "message": str(e),
                    "run_id": request_id,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                },
            )

        logger.info("Request completed", extra={
            "method": request.method,
            "path": request.url.path,
            "status_code": response.status_code,
            "processing_time_ms": int((time.perf_counter() - start_time) * 1000),
        })
        response.headers["X-Request-ID"] = request_id
        return response


@app.get("/health")
async def health_check() -> Any:
    """Health check: bundled data present and settings loadable"""
    try:
        with TimedLogger(logger, "health check"):
            chains_ok = BUNDLED_CHAINS_DIR.is_dir() and any(BUNDLED_CHAINS_DIR.glob("*.json"))
            scenarios = bundled_scenarios()
            healthy = chains_ok and bool(scenarios)
            status = {
                "status": "healthy" if healthy else "degraded",
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "version": __version__,
                "environment": settings.environment,
                "config": {
                    "log_level": settings.log_level,
                    "qp_tolerance": settings.qp_tolerance,
                    "qp_max_iterations": settings.qp_max_iterations,
                    "max_concurrent_scenarios": settings.max_concurrent_scenarios,
                },
                "dependencies": {
                    "config": "loaded",
                    "logging": "configured",
                    "bundled_chains": "present" if chains_ok else "missing",
                    "bundled_scenarios": len(scenarios),
                },
            }
            if not healthy:
                return JSONResponse(status_code=503, content=status)
            return status
    except Exception as e:
        logger.error("Health check failed", exc_info=True)
        return JSONResponse(
            status_code=503,
            content={
                "status": "unhealthy",
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "error": "Health check failed",
                "message": str(e),
            },
        )


@app.get("/")
async def root() -> dict[str, Any]:
    return {
        "message": "HQP Surgical IK API",
        "version": __version__,
        "environment": settings.environment,
        "endpoints": {
            "docs": "/docs",
            "health": "/health",
            "run": "/api/v1/scenarios/run",
            "run_batch": "/api/v1/scenarios/run-batch",
            "check_chain": "/api/v1/chains/check",
        },
        "bundled_scenarios": bundled_scenarios(),
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=settings.port,
        reload=settings.is_development(),
        log_level=str(settings.log_level).lower(),
    )
