"""
Chain description file schema.

Structural validation only (types, shapes, required keys). Kinematic
invariants such as unit axes and ordered limits are checked when the
description is turned into a ``KinematicChain`` so the error can name the
offending joint in domain terms.
"""

from enum import Enum
from typing import Annotated, Optional

from pydantic import BaseModel, ConfigDict, Field

Vector3 = Annotated[list[float], Field(min_length=3, max_length=3)]


class JointKind(str, Enum):
    """Supported joint types"""
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"
    FIXED = "fixed"


class OriginModel(BaseModel):
    """Rigid transform from the parent frame, URDF-style fixed-axis rpy"""
    model_config = ConfigDict(extra="forbid")

    xyz: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    rpy: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 0.0])


class LimitsModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lower: float
    upper: float
    velocity: float


class JointModel(BaseModel):
    """One joint of the serial chain"""
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    kind: JointKind
    axis: Vector3 = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    origin: OriginModel = Field(default_factory=OriginModel)
    limits: Optional[LimitsModel] = None


class ToolAxisModel(BaseModel):
    """Shaft line as two points expressed in ``frame``"""
    model_config = ConfigDict(extra="forbid")

    frame: int = Field(..., ge=0)
    a: Vector3
    b: Vector3


class CapsuleModel(BaseModel):
    """Link proxy spanning the origins of two frames"""
    model_config = ConfigDict(extra="forbid")

    frame_a: int = Field(..., ge=0)
    frame_b: int = Field(..., ge=0)
    radius: float


class ChainDescription(BaseModel):
    """Top-level chain file"""
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    base: OriginModel = Field(default_factory=OriginModel)
    joints: list[JointModel] = Field(..., min_length=1)
    end_effector: int = Field(..., ge=0)
    tool_axis: Optional[ToolAxisModel] = None
    capsules: list[CapsuleModel] = Field(default_factory=list)
