"""
Simulation result models: per-step rows, summaries and the run report.
"""

import math
from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_serializer


class StepMetrics(BaseModel):
    """One control step of one chain"""
    t: float
    q: list[float]
    ee_err_m: float
    rcm_err_m: float
    mu: float
    min_clearance_m: float = Field(description="inf when the chain sees no obstacle")
    beta_a: float
    solve_ms: float = 0.0

    @field_serializer("min_clearance_m", when_used="json")
    def serialize_clearance(self, value: float) -> Optional[float]:
        return value if math.isfinite(value) else None


class MetricsSummary(BaseModel):
    """
    Aggregates over a series. Averages are mean and sample standard
    deviation; the EE average skips the leading transient.
    """
    steps: int
    avg_ee_err_m: float
    std_ee_err_m: float
    max_ee_err_m: float
    avg_rcm_err_m: float
    std_rcm_err_m: float
    max_rcm_err_m: float
    avg_mu: float
    std_mu: float
    min_clearance_m: Optional[float] = None
    max_beta_a: float
    wall_ms_per_step: float

    @classmethod
    def empty(cls) -> "MetricsSummary":
        return cls(
            steps=0,
            avg_ee_err_m=0.0,
            std_ee_err_m=0.0,
            max_ee_err_m=0.0,
            avg_rcm_err_m=0.0,
            std_rcm_err_m=0.0,
            max_rcm_err_m=0.0,
            avg_mu=0.0,
            std_mu=0.0,
            min_clearance_m=None,
            max_beta_a=0.0,
            wall_ms_per_step=0.0,
        )


class ChainReport(BaseModel):
    index: int
    name: str
    dof: int
    series: list[StepMetrics] = Field(default_factory=list)
    summary: MetricsSummary


class SafetyReport(BaseModel):
    checked: bool
    violations: list[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


class MetricsReport(BaseModel):
    """Everything a scenario run produced"""
    scenario: str
    run_id: str
    status: Literal["completed", "solver_failure"]
    failure: Optional[str] = None
    dt: float
    duration: float
    steps: int
    started_at: datetime
    chains: list[ChainReport]
    summary: MetricsSummary
    safety: SafetyReport
    files: dict[str, str] = Field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def summary_document(self) -> dict:
        """Summary JSON content: the report without per-step series"""
        return self.model_dump(mode="json", exclude={"chains": {"__all__": {"series"}}})
