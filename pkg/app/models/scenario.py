"""
Scenario file schema.

A scenario names one or two chains, where each sits and what its tool
must follow, the obstacles around it, the stack layout and gains, and
where results go. All units are SI (m, s, rad).
"""

import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from app.models.chain import OriginModel, Vector3
from app.models.gains import GainConfig

DEFAULT_DT = 0.01
LEVEL_NAMES = ("limits", "rcm", "tracking", "manipulability")


class FixedTrajectory(BaseModel):
    """Hold one pose; ``pose`` defaults to the initial end-effector pose"""
    model_config = ConfigDict(extra="forbid")

    type: Literal["fixed"] = "fixed"
    pose: Optional[OriginModel] = None


class CircleTrajectory(BaseModel):
    """
    Constant-speed circle in the plane normal to ``normal``.

    The start point lies at ``start_angle`` from the in-plane x direction.
    Orientation is held at ``rpy`` or, when omitted, at the initial one.
    """
    model_config = ConfigDict(extra="forbid")

    type: Literal["circle"] = "circle"
    center: Vector3
    normal: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    radius: float = Field(..., gt=0.0)
    period: float = Field(..., gt=0.0)
    start_angle: float = 0.0
    rpy: Optional[Vector3] = None

    @field_validator("normal")
    @classmethod
    def validate_normal(cls, v: list[float]) -> list[float]:
        if math.sqrt(sum(c * c for c in v)) < 1e-9:
            raise ValueError("normal must be a non-zero vector")
        return v


Trajectory = Annotated[Union[FixedTrajectory, CircleTrajectory], Field(discriminator="type")]


class ChainSetup(BaseModel):
    """One manipulator: chain file, start configuration, trocar and reference"""
    model_config = ConfigDict(extra="forbid")

    chain: str = Field(..., min_length=1, description="Chain file path or bundled chain name")
    q0: list[float] = Field(..., min_length=1)
    base: Optional[OriginModel] = None
    trocar: Optional[Vector3] = None
    trajectory: Trajectory = Field(default_factory=FixedTrajectory)
    label: Optional[str] = None


class Waypoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: float = Field(..., ge=0.0)
    position: Vector3


class SphereObstacle(BaseModel):
    """Sphere, either static at ``center`` or moving along ``waypoints``"""
    model_config = ConfigDict(extra="forbid")

    type: Literal["sphere"] = "sphere"
    radius: float = Field(..., ge=0.0)
    center: Optional[Vector3] = None
    waypoints: Optional[list[Waypoint]] = None
    label: Optional[str] = None

    @model_validator(mode="after")
    def validate_motion(self) -> "SphereObstacle":
        if (self.center is None) == (self.waypoints is None):
            raise ValueError("give exactly one of center or waypoints")
        if self.waypoints is not None:
            if not self.waypoints:
                raise ValueError("waypoints must not be empty")
            times = [w.t for w in self.waypoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("waypoint times must be strictly increasing")
        return self


class ToolObstacle(BaseModel):
    """Capsules of another chain in the scenario"""
    model_config = ConfigDict(extra="forbid")

    type: Literal["tool"] = "tool"
    chain: int = Field(..., ge=0)
    label: Optional[str] = None


Obstacle = Annotated[Union[SphereObstacle, ToolObstacle], Field(discriminator="type")]


class StackLayout(BaseModel):
    """Priority order of the task groups, highest first"""
    model_config = ConfigDict(extra="forbid")

    order: list[Literal["limits", "rcm", "tracking", "manipulability"]] = Field(
        default_factory=lambda: list(LEVEL_NAMES)
    )
    rcm_mode: Literal["vector", "norm"] = "vector"
    enable_manipulability: bool = True
    manipulability_rows: Optional[list[int]] = None

    @field_validator("order")
    @classmethod
    def validate_order(cls, v: list[str]) -> list[str]:
        if len(set(v)) != len(v):
            raise ValueError("task groups may appear only once")
        if "tracking" not in v:
            raise ValueError("the tracking group is required")
        return v

    @field_validator("manipulability_rows")
    @classmethod
    def validate_rows(cls, v: Optional[list[int]]) -> Optional[list[int]]:
        if v is None:
            return v
        if not v or len(set(v)) != len(v) or any(not 0 <= r < 6 for r in v):
            raise ValueError("rows must be distinct indices in [0, 5]")
        return sorted(v)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = None
    csv_name: str = "steps.csv"
    summary_name: str = "summary.json"
    record_timing: bool = Field(
        default=False,
        description="Write measured solve time per step; off keeps the CSV byte-stable",
    )


class SafetyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    min_clearance: float = Field(default=0.0, description="Clearance below this is a violation (m)")
    max_rcm_error: float = Field(default=1e-3, gt=0.0)


class ScenarioConfig(BaseModel):
    """Top-level scenario file"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    description: Optional[str] = None
    chains: list[ChainSetup] = Field(..., min_length=1, max_length=2)
    obstacles: list[Obstacle] = Field(default_factory=list)
    stack: StackLayout = Field(default_factory=StackLayout)
    gains: GainConfig = Field(default_factory=GainConfig)
    dt: Optional[float] = Field(default=None, gt=0.0)
    duration: float = Field(..., ge=0.0)
    output: OutputConfig = Field(default_factory=OutputConfig)
    safety: SafetyConfig = Field(default_factory=SafetyConfig)

    # directory of the file the scenario came from; relative chain paths resolve against it
    _source_dir: Optional[Path] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def validate_timing(self) -> "ScenarioConfig":
        if self.dt is None:
            self.dt = self.gains.dt if "dt" in self.gains.model_fields_set else DEFAULT_DT
        if self.gains.dt != self.dt:
            self.gains = self.gains.model_copy(update={"dt": self.dt})
        if 0.0 < self.duration < self.dt:
            raise ValueError(f"duration {self.duration} s is shorter than dt {self.dt} s")
        return self

    @model_validator(mode="after")
    def validate_tools(self) -> "ScenarioConfig":
        for i, obstacle in enumerate(self.obstacles):
            if isinstance(obstacle, ToolObstacle) and obstacle.chain >= len(self.chains):
                raise ValueError(
                    f"obstacles.{i}: chain {obstacle.chain} does not exist "
                    f"({len(self.chains)} chain(s))"
                )
        # two tools always see each other
        listed = {o.chain for o in self.obstacles if isinstance(o, ToolObstacle)}
        if len(self.chains) > 1:
            for idx in range(len(self.chains)):
                if idx not in listed:
                    self.obstacles.append(ToolObstacle(chain=idx))
        return self

    @property
    def time_step(self) -> float:
        return float(self.dt if self.dt is not None else DEFAULT_DT)

    @property
    def steps(self) -> int:
        """floor(duration / dt), robust to round-off in the ratio"""
        return int(math.floor(self.duration / self.time_step + 1e-9))
