"""
Finite-difference self-test of a chain's Jacobians.

Used by ``hqp-ik check`` and ``POST /api/v1/chains/check`` to catch chain
files whose axes or origins are inconsistent with their Jacobians.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from app.services.kinematics import KinematicChain, Pose, log6
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

FD_STEP = 1e-6
RELATIVE_TOLERANCE = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


@dataclass
class SelfCheckReport:
    chain: str
    samples: int
    seed: int
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def random_configuration(chain: KinematicChain, rng: np.random.Generator) -> np.ndarray:
    """Uniform inside the limits, [-pi, pi] on unbounded joints"""
    lower = np.where(np.isfinite(chain.lower), chain.lower, -math.pi)
    upper = np.where(np.isfinite(chain.upper), chain.upper, math.pi)
    return rng.uniform(lower, upper)


def _relative(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / max(
        1.0, float(np.max(np.abs(numeric), initial=0.0))
    )


def numeric_jacobian(chain: KinematicChain, q: np.ndarray, frame: int, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the frame position and of its orientation (world angular velocity)"""
    jac = np.zeros((6, chain.dof))
    for j in range(chain.dof):
        dq = np.zeros(chain.dof)
        dq[j] = step
        plus = chain.state(q + dq).pose(frame)
        minus = chain.state(q - dq).pose(frame)
        jac[:3, j] = (plus.translation - minus.translation) / (2.0 * step)
        spin = log6(Pose(plus.rotation @ minus.rotation.T, np.zeros(3)))
        jac[3:, j] = spin.angular / (2.0 * step)
    return jac


def numeric_point_jacobian(
    chain: KinematicChain, q: np.ndarray, frame: int, local: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    jac = np.zeros((3, chain.dof))
    for j in range(chain.dof):
        dq = np.zeros(chain.dof)
        dq[j] = step
        jac[:, j] = (
            chain.state(q + dq).point(frame, local) - chain.state(q - dq).point(frame, local)
        ) / (2.0 * step)
    return jac


def check_chain(
    chain: KinematicChain,
    samples: int = 20,
    seed: int = 0,
    tolerance: float = RELATIVE_TOLERANCE,
) -> SelfCheckReport:
    """
    Compare the end-effector geometric Jacobian, and the tool-tip point
    Jacobian when the chain has a tool axis, against central differences
    at ``samples`` seeded random configurations.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"geometric_jacobian": 0.0}
    if chain.tool_axis is not None:
        worst["tool_point_jacobian"] = 0.0

    for _ in range(samples):
        q = random_configuration(chain, rng)
        state = chain.state(q)
        analytic = state.jacobian(chain.end_effector)
        worst["geometric_jacobian"] = max(
            worst["geometric_jacobian"],
            _relative(analytic, numeric_jacobian(chain, q, chain.end_effector)),
        )
        if chain.tool_axis is not None:
            axis = chain.tool_axis
            worst["tool_point_jacobian"] = max(
                worst["tool_point_jacobian"],
                _relative(
                    state.point_jacobian(axis.frame, axis.b),
                    numeric_point_jacobian(chain, q, axis.frame, axis.b),
                ),
            )

    report = SelfCheckReport(
        chain=chain.name,
        samples=samples,
        seed=seed,
        results=[CheckResult(name, err, tolerance) for name, err in worst.items()],
    )
    log = logger.info if report.passed else logger.warning
    log("Chain self-check finished", extra={
        "chain": chain.name,
        "samples": samples,
        "seed": seed,
        "passed": report.passed,
        "errors": {r.name: r.max_error for r in report.results},
    })
    return report
