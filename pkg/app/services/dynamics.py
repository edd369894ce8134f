"""Longitudinal vehicle dynamics and their forward Euler discretization.

Each follower i is described in error coordinates x_i = [e_p, e_v, acc] and
obeys dx/dt = A_i x + B_i u_i + C_i acc_{i-1}. The leader only carries its
acceleration, which follows the same first-order driveline lag.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, InvalidInputError

_BOUND_TOLERANCE = 1e-12


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of one vehicle."""

    tau: float = settings.follower_tau  # driveline time constant (s)
    h: float = settings.time_gap  # desired time gap (s)
    r: float = settings.standstill_distance  # standstill distance (m)
    length: float = settings.vehicle_length  # vehicle length (m)
    u_min: float = settings.u_min
    u_max: float = settings.u_max
    acc_min: float = settings.acc_min
    acc_max: float = settings.acc_max

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.h < 0:
            raise ConfigurationError(f"time gap must be non-negative, got {self.h}")
        if not self.u_min < self.u_max:
            raise ConfigurationError(f"u_min ({self.u_min}) must be below u_max ({self.u_max})")
        if not self.acc_min < self.acc_max:
            raise ConfigurationError(
                f"acc_min ({self.acc_min}) must be below acc_max ({self.acc_max})"
            )


@dataclass(frozen=True)
class LocalState:
    """Gap error, velocity error and acceleration of one follower."""

    e_p: float
    e_v: float
    acc: float

    def to_array(self) -> np.ndarray:
        return np.array([self.e_p, self.e_v, self.acc], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "LocalState":
        e_p, e_v, acc = (float(v) for v in values)
        return cls(e_p=e_p, e_v=e_v, acc=acc)


@dataclass(frozen=True)
class LeaderState:
    """Leader acceleration; its gap and velocity errors are identically zero."""

    acc: float


@dataclass(frozen=True)
class StepConfig:
    """Discretization interval and episode length."""

    dt: float = settings.dt
    horizon: int = settings.horizon

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be at least 1, got {self.horizon}")


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value}")


def _require_within_bounds(u: float, params: VehicleParams) -> None:
    if u < params.u_min - _BOUND_TOLERANCE or u > params.u_max + _BOUND_TOLERANCE:
        raise InvalidInputError(
            f"control {u} outside [{params.u_min}, {params.u_max}]; clamp it first"
        )


def clamp_control(u: float, params: VehicleParams) -> float:
    """Saturate a control input to the vehicle's bounds."""
    return min(max(u, params.u_min), params.u_max)


def follower_step_arrays(
    e_p,
    e_v,
    acc,
    u,
    acc_pred,
    tau,
    h,
    dt: float,
    acc_min: float = settings.acc_min,
    acc_max: float = settings.acc_max,
    saturate: bool = True,
):
    """
    Vectorized Euler update of follower error states.

    All arguments broadcast with numpy semantics, so the same update serves a
    single vehicle, a whole platoon or a grid of discretized states.

    Returns:
        Tuple (e_p', e_v', acc')
    """
    e_p_next = e_p + dt * (e_v - h * acc)
    e_v_next = e_v + dt * (-acc + acc_pred)
    acc_next = acc + dt * (-acc / tau + u / tau)
    if saturate:
        acc_next = np.clip(acc_next, acc_min, acc_max)
    return e_p_next, e_v_next, acc_next


def leader_step_arrays(
    acc,
    u0,
    tau0,
    dt: float,
    acc_min: float = settings.acc_min,
    acc_max: float = settings.acc_max,
    saturate: bool = True,
):
    """Vectorized first-order lag update of the leader acceleration."""
    acc_next = acc + dt * (-acc / tau0 + u0 / tau0)
    if saturate:
        acc_next = np.clip(acc_next, acc_min, acc_max)
    return acc_next


def euler_step_follower(
    x: LocalState,
    u: float,
    acc_pred: float,
    params: VehicleParams,
    dt: float,
    saturate: bool = True,
) -> LocalState:
    """
    Advance one follower by one Euler step.

    Args:
        x: Current error state
        u: Control input, already clamped to the vehicle bounds
        acc_pred: Acceleration of the predecessor at the start of the step
        params: Vehicle constants
        dt: Step length in seconds
        saturate: Clamp the new acceleration to [acc_min, acc_max]

    Returns:
        The next error state

    Raises:
        InvalidInputError: If any input is non-finite or u is out of bounds
    """
    _require_finite(e_p=x.e_p, e_v=x.e_v, acc=x.acc, u=u, acc_pred=acc_pred, dt=dt)
    if saturate:
        _require_within_bounds(u, params)
    e_p, e_v, acc = follower_step_arrays(
        x.e_p, x.e_v, x.acc, u, acc_pred, params.tau, params.h, dt,
        params.acc_min, params.acc_max, saturate,
    )
    return LocalState(e_p=float(e_p), e_v=float(e_v), acc=float(acc))


def euler_step_leader(
    s: LeaderState,
    u0: float,
    params: VehicleParams,
    dt: float,
    saturate: bool = True,
) -> LeaderState:
    """Advance the leader acceleration by one Euler step."""
    _require_finite(acc=s.acc, u0=u0, dt=dt)
    if saturate:
        _require_within_bounds(u0, params)
    acc = leader_step_arrays(s.acc, u0, params.tau, dt, params.acc_min, params.acc_max, saturate)
    return LeaderState(acc=float(acc))


def platoon_step(
    leader: LeaderState,
    followers: Sequence[LocalState],
    controls: Sequence[float],
    params: Sequence[VehicleParams],
    dt: float,
) -> tuple[LeaderState, list[LocalState]]:
    """
    Advance the whole platoon synchronously.

    Every follower reads its predecessor's acceleration from the pre-step
    snapshot, so the update order does not change the result.

    Args:
        leader: Leader state (vehicle 0)
        followers: States of vehicles 1..N-1
        controls: Controls ordered leader-first, length N
        params: Vehicle constants ordered leader-first, length N
        dt: Step length in seconds

    Returns:
        Tuple of the new leader state and follower states

    Raises:
        ConfigurationError: If the list lengths disagree or N < 2
    """
    n_vehicles = len(params)
    if n_vehicles < 2:
        raise ConfigurationError(f"a platoon needs at least 2 vehicles, got {n_vehicles}")
    if len(controls) != n_vehicles or len(followers) != n_vehicles - 1:
        raise ConfigurationError(
            f"length mismatch: {len(params)} params, {len(controls)} controls, "
            f"{len(followers)} followers"
        )

    accelerations = [leader.acc] + [f.acc for f in followers]
    new_leader = euler_step_leader(leader, controls[0], params[0], dt)
    new_followers = [
        euler_step_follower(x, controls[i + 1], accelerations[i], params[i + 1], dt)
        for i, x in enumerate(followers)
    ]
    return new_leader, new_followers


def continuous_matrices(params: VehicleParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (A, B, C) of the continuous-time error dynamics."""
    a = np.array(
        [
            [0.0, 1.0, -params.h],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0 / params.tau],
        ]
    )
    b = np.array([0.0, 0.0, 1.0 / params.tau])
    c = np.array([0.0, 1.0, 0.0])
    return a, b, c


def desired_gap(params: VehicleParams, speed):
    """Constant time-headway spacing r + h * v."""
    return params.r + params.h * speed


def reconstruct_absolute(
    states: np.ndarray,
    params: Sequence[VehicleParams],
    dt: float,
    leader_speed: float = 20.0,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Rebuild absolute positions and speeds from an error-state trace.

    Args:
        states: Array (steps, N, 3) of [e_p, e_v, acc] per vehicle, leader row first
        params: Vehicle constants, leader first
        dt: Step length in seconds
        leader_speed: Leader speed at the first step (m/s)

    Returns:
        Tuple (positions, speeds), each of shape (steps, N); the leader starts at 0 m
    """
    steps, n_vehicles, _ = states.shape
    if len(params) != n_vehicles:
        raise ConfigurationError(f"expected {n_vehicles} vehicle params, got {len(params)}")

    positions = np.zeros((steps, n_vehicles))
    speeds = np.zeros((steps, n_vehicles))
    speeds[0, 0] = leader_speed
    for k in range(1, steps):
        speeds[k, 0] = speeds[k - 1, 0] + dt * states[k - 1, 0, 2]
        positions[k, 0] = positions[k - 1, 0] + dt * speeds[k - 1, 0]

    for i in range(1, n_vehicles):
        speeds[:, i] = speeds[:, i - 1] - states[:, i, 1]
        gap = states[:, i, 0] + desired_gap(params[i], speeds[:, i])
        positions[:, i] = positions[:, i - 1] - params[i - 1].length - gap
    return positions, speeds
