"""
Controller gains and thresholds.

Defaults: K_r = 5 1/s for RCM and tracking, K_d = 1e-3, K_w = 1e4,
dt = 0.01 s, eps_c = 0.025 m and alpha_c = 0.005 m (activation distance
d_eps = 3 cm), RCM dead zone 1e-9 m. The manipulability gradient is
analytic unless ``gradient_method`` is "central" (step ``fd_step``, 1e-6 rad).
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class GainConfig(BaseModel):
    """Weights and gains of every task in the stack"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # residual gains K_r (1/s)
    k_r_rcm: float = Field(default=5.0, gt=0.0)
    k_r_tracking: float = Field(default=5.0, gt=0.0)
    k_r_collision: float = Field(default=1.0, gt=0.0)

    # task weights K_t of the tasks that are not blended by beta_a
    k_t_rcm: float = Field(default=1.0, ge=0.0)
    k_t_manipulability: float = Field(default=0.05, ge=0.0, le=1.0)

    # regularization of the joint-velocity and slack blocks
    k_d: float = Field(default=1e-3, ge=0.0)
    k_w: float = Field(default=1e4, gt=0.0)

    dt: float = Field(default=0.01, gt=0.0, description="Control period (s)")
    epsilon_c: float = Field(default=0.025, gt=0.0, description="Clearance threshold (m)")
    alpha_c: float = Field(default=0.005, ge=0.0, description="Activation margin (m)")
    rcm_tolerance: float = Field(default=1e-9, ge=0.0, description="RCM dead zone (m)")
    gradient_method: Literal["analytic", "central"] = "analytic"
    fd_step: float = Field(default=1e-6, gt=0.0, description="Manipulability gradient step (rad)")
    limit_tolerance: float = Field(
        default=1e-6,
        ge=0.0,
        description="Band outside the joint limits that is clamped instead of rejected",
    )

    @property
    def d_epsilon(self) -> float:
        """Distance below which collision pairs enter the stack"""
        return self.epsilon_c + self.alpha_c
