"""
Pydantic models package.

Chain and scenario file schemas, controller gains, run reports and the
HTTP request/response bodies.
"""

# File schemas
from .chain import (
    CapsuleModel,
    ChainDescription,
    JointKind,
    JointModel,
    LimitsModel,
    OriginModel,
    ToolAxisModel,
)
from .gains import GainConfig
from .scenario import (
    ChainSetup,
    CircleTrajectory,
    FixedTrajectory,
    OutputConfig,
    SafetyConfig,
    ScenarioConfig,
    SphereObstacle,
    StackLayout,
    ToolObstacle,
    Waypoint,
)

# Reports
from .reports import (
    ChainReport,
    MetricsReport,
    MetricsSummary,
    SafetyReport,
    StepMetrics,
)

# Request / response models
from .requests import ChainCheckRequest, RunBatchRequest, RunScenarioRequest
from .responses import (
    BatchEntry,
    BatchRunResponse,
    ChainCheckResponse,
    CheckEntry,
    ScenarioRunResponse,
)

__all__ = [
    # File schemas
    "CapsuleModel",
    "ChainDescription",
    "JointKind",
    "JointModel",
    "LimitsModel",
    "OriginModel",
    "ToolAxisModel",
    "GainConfig",
    "ChainSetup",
    "CircleTrajectory",
    "FixedTrajectory",
    "OutputConfig",
    "SafetyConfig",
    "ScenarioConfig",
    "SphereObstacle",
    "StackLayout",
    "ToolObstacle",
    "Waypoint",

    # Reports
    "ChainReport",
    "MetricsReport",
    "MetricsSummary",
    "SafetyReport",
    "StepMetrics",

    # Requests / responses
    "ChainCheckRequest",
    "RunBatchRequest",
    "RunScenarioRequest",
    "BatchEntry",
    "BatchRunResponse",
    "ChainCheckResponse",
    "CheckEntry",
    "ScenarioRunResponse",
]
