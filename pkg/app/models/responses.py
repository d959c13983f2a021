"""
Pydantic models for API responses.
"""

from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel

from app.models.reports import MetricsReport


class ScenarioRunResponse(BaseModel):
    run_id: str
    scenario: str
    status: Literal["completed", "solver_failure"]
    timestamp: datetime
    processing_time_ms: int
    report: MetricsReport


class BatchEntry(BaseModel):
    scenario: str
    status: Literal["completed", "solver_failure", "error"]
    report: Optional[MetricsReport] = None
    error: Optional[str] = None


class BatchRunResponse(BaseModel):
    batch_id: str
    timestamp: datetime
    processing_time_ms: int
    total: int
    completed: int
    results: list[BatchEntry]


class CheckEntry(BaseModel):
    name: str
    max_error: float
    tolerance: float
    passed: bool


class ChainCheckResponse(BaseModel):
    chain: str
    dof: int
    passed: bool
    samples: int
    seed: int
    results: list[CheckEntry]

