"""
Pydantic models for API request validation.
"""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.chain import ChainDescription
from app.models.scenario import ScenarioConfig


class RunScenarioRequest(BaseModel):
    """Run one scenario, given inline or by bundled name"""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "bundled": "case1_circle",
                "steps": 200,
                "disable_manipulability": False,
                "include_series": False,
            }
        },
    )

    scenario: Optional[ScenarioConfig] = None
    bundled: Optional[str] = Field(None, min_length=1)
    dt: Optional[float] = Field(None, gt=0.0)
    steps: Optional[int] = Field(None, ge=0)
    disable_manipulability: bool = False
    include_series: bool = False
    write_files: bool = False

    @model_validator(mode="after")
    def validate_source(self) -> "RunScenarioRequest":
        if (self.scenario is None) == (self.bundled is None):
            raise ValueError("give exactly one of scenario or bundled")
        return self


class RunBatchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenarios: list[RunScenarioRequest] = Field(..., min_length=1, max_length=16)


class ChainCheckRequest(BaseModel):
    """Finite-difference Jacobian self-test of an inline or bundled chain"""
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={"example": {"bundled": "arm7_tool3", "samples": 20, "seed": 0}},
    )

    chain: Optional[ChainDescription] = None
    bundled: Optional[str] = Field(None, min_length=1)
    samples: int = Field(20, ge=1, le=500)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def validate_source(self) -> "ChainCheckRequest":
        if (self.chain is None) == (self.bundled is None):
            raise ValueError("give exactly one of chain or bundled")
        return self
