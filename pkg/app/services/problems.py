"""SSDP formulations of vehicle following and platoon control.

Every problem is a state layout over a platoon snapshot: the ego vehicle's own
error state plus whatever V2X information its topology delivers. The
transition is shared by all problems; only the observed layout differs.
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np

from app.core.config import settings
from app.core.errors import (
    ConfigurationError,
    InvalidInputError,
    LayoutMismatchError,
    MissingPolicyError,
    SequencingError,
)
from app.services.dynamics import (
    LeaderState,
    LocalState,
    VehicleParams,
    clamp_control,
    platoon_step,
)

Kind = Literal["e_p", "e_v", "acc", "u"]

# (vehicle index, snapshot) -> control input of that vehicle
Controller = Callable[[int, "PlatoonSnapshot"], float]


class ProblemId(str, Enum):
    """Tags of the supported SSDP formulations."""

    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"
    PF2 = "PF2"
    PLF = "PLF"
    TPF = "TPF"
    TPLF = "TPLF"
    P5 = "P5"
    P6 = "P6"


TWO_VEHICLE_PROBLEMS = (ProblemId.P1, ProblemId.P2, ProblemId.P3)
TOPOLOGY_PROBLEMS = (ProblemId.P4, ProblemId.PF2, ProblemId.PLF, ProblemId.TPF, ProblemId.TPLF)
PLATOON_PROBLEMS = TOPOLOGY_PROBLEMS + (ProblemId.P5, ProblemId.P6)


@dataclass(frozen=True)
class Component:
    """One scalar of a state vector."""

    kind: Kind
    vehicle: int

    @property
    def name(self) -> str:
        return f"{self.kind}_{self.vehicle}"


@dataclass(frozen=True)
class StateLayout:
    """Ordered composition of a problem's state vector."""

    problem: ProblemId
    ego: int
    components: tuple[Component, ...]

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def v2x_components(self) -> tuple[Component, ...]:
        """Components that are not measured on board the ego vehicle."""
        return self.components[3:]


@dataclass(frozen=True)
class RewardParams:
    """Weights of the quadratic reward and the training-time scale."""

    alpha: float = settings.reward_alpha
    beta: float = settings.reward_beta
    scale: float = settings.reward_scale

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigurationError("reward weights alpha and beta must be positive")
        if not self.scale > 0:
            raise ConfigurationError(f"reward scale must be positive, got {self.scale}")


@dataclass
class PlatoonSnapshot:
    """
    Full state of the platoon at step k.

    Row 0 of `states` is the leader (or the two-vehicle predecessor) with zero
    gap and velocity errors. `controls` holds the inputs decided during step k;
    NaN marks a vehicle that has not decided yet.
    """

    k: int
    states: np.ndarray
    controls: np.ndarray = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1, 3)
        if self.controls is None:
            self.controls = np.full(self.states.shape[0], np.nan)
        else:
            self.controls = np.asarray(self.controls, dtype=np.float64)
        if self.controls.shape != (self.states.shape[0],):
            raise ConfigurationError("controls must have one entry per vehicle")

    @property
    def n_vehicles(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_states(
        cls, leader: LeaderState, followers: Sequence[LocalState], k: int = 0
    ) -> "PlatoonSnapshot":
        rows = [[0.0, 0.0, leader.acc]] + [[f.e_p, f.e_v, f.acc] for f in followers]
        return cls(k=k, states=np.array(rows))

    def copy(self) -> "PlatoonSnapshot":
        return PlatoonSnapshot(k=self.k, states=self.states.copy(), controls=self.controls.copy())

    def value(self, component: Component) -> float:
        """Read one component, enforcing that controls have been decided."""
        if component.vehicle >= self.n_vehicles:
            raise LayoutMismatchError(
                f"{component.name} references a vehicle outside a platoon of {self.n_vehicles}"
            )
        if component.kind == "u":
            value = self.controls[component.vehicle]
            if math.isnan(value):
                raise SequencingError(
                    f"control of vehicle {component.vehicle} is not decided yet at step {self.k}"
                )
            return float(value)
        column = {"e_p": 0, "e_v": 1, "acc": 2}[component.kind]
        return float(self.states[component.vehicle, column])


def _local(vehicle: int, drop_leader_constants: bool) -> list[Component]:
    if vehicle == 0 and drop_leader_constants:
        return [Component("acc", 0)]
    return [Component("e_p", vehicle), Component("e_v", vehicle), Component("acc", vehicle)]


def layout_for(
    problem: ProblemId | str,
    ego: int,
    n_vehicles: int | None = None,
    drop_leader_constants: bool = False,
) -> StateLayout:
    """
    Build the state layout of a problem for an ego vehicle.

    Args:
        problem: Problem tag
        ego: Index of the ego follower (>= 1)
        n_vehicles: Platoon size including the leader; required for P6
        drop_leader_constants: Omit the leader's identically-zero errors

    Returns:
        The ordered StateLayout

    Raises:
        ConfigurationError: If the topology needs more predecessors than the ego has
    """
    problem = ProblemId(problem)
    if ego < 1:
        raise ConfigurationError(f"ego must be a follower index >= 1, got {ego}")
    if n_vehicles is not None and ego >= n_vehicles:
        raise ConfigurationError(f"ego {ego} is not in a platoon of {n_vehicles} vehicles")

    minimum_ego = {ProblemId.PF2: 2, ProblemId.PLF: 2, ProblemId.TPF: 2, ProblemId.TPLF: 3}
    if ego < minimum_ego.get(problem, 1):
        raise ConfigurationError(f"{problem.value} needs an ego index >= {minimum_ego[problem]}")

    pred = ego - 1
    own = [Component("e_p", ego), Component("e_v", ego), Component("acc", ego)]
    pf = [Component("acc", pred), Component("u", pred)]
    leader_info = [Component("acc", 0), Component("u", 0)]

    if problem is ProblemId.P1:
        components = own
    elif problem is ProblemId.P2:
        components = own + [Component("acc", pred)]
    elif problem in (ProblemId.P3, ProblemId.P4):
        components = own + pf
    elif problem is ProblemId.PF2:
        components = own + pf + [Component("e_p", pred), Component("e_v", pred)]
    elif problem is ProblemId.PLF:
        components = own + pf + leader_info
    elif problem in (ProblemId.TPF, ProblemId.TPLF):
        second = _local(ego - 2, drop_leader_constants) + [Component("u", ego - 2)]
        components = own + pf + second
        if problem is ProblemId.TPLF:
            components += leader_info
    else:
        local_states = []
        for j in range(ego + 1):
            local_states += _local(j, drop_leader_constants)
        components = local_states + [Component("u", j) for j in range(ego)]
        # Own state first so the first three entries are always [e_p, e_v, acc] of the ego.
        components = own + [c for c in components if c.vehicle != ego or c.kind == "u"]
        if problem is ProblemId.P6:
            if n_vehicles is None:
                raise ConfigurationError("P6 needs the platoon size")
            for j in range(ego + 1, n_vehicles):
                components += _local(j, drop_leader_constants)

    return StateLayout(problem=problem, ego=ego, components=tuple(components))


def info_bytes(
    problem: ProblemId | str,
    ego: int,
    n_vehicles: int | None = None,
    drop_leader_constants: bool = False,
) -> int:
    """Number of scalar V2X quantities the ego receives per step."""
    return len(layout_for(problem, ego, n_vehicles, drop_leader_constants).v2x_components)


def build_state(layout: StateLayout, snapshot: PlatoonSnapshot) -> np.ndarray:
    """
    Project a platoon snapshot onto a problem's state vector.

    Raises:
        SequencingError: If the layout needs a predecessor control not yet decided
    """
    return np.array([snapshot.value(c) for c in layout.components], dtype=np.float64)


def reward(e_p: float, e_v: float, u: float, params: RewardParams = RewardParams()) -> float:
    """Quadratic tracking reward -(e_p^2 + alpha*e_v^2 + beta*u^2), in natural units."""
    return -(e_p**2 + params.alpha * e_v**2 + params.beta * u**2)


def open_step(
    snapshot: PlatoonSnapshot,
    leader_control: float,
    ego: int,
    controller: Controller | None,
    vehicle_params: Sequence[VehicleParams],
) -> PlatoonSnapshot:
    """
    Fill in the controls that precede the ego's decision at the snapshot's step.

    The leader applies its exogenous input, then followers 1..ego-1 decide in
    index order, each seeing the decisions of all vehicles ahead of it.
    """
    snapshot.controls[0] = clamp_control(leader_control, vehicle_params[0])
    for j in range(1, ego):
        if controller is None:
            raise MissingPolicyError(f"no controller for predecessor vehicle {j}")
        snapshot.controls[j] = clamp_control(controller(j, snapshot), vehicle_params[j])
    return snapshot


def advance(
    snapshot: PlatoonSnapshot, vehicle_params: Sequence[VehicleParams], dt: float
) -> PlatoonSnapshot:
    """Synchronously Euler-step every vehicle with the decided controls."""
    if len(vehicle_params) != snapshot.n_vehicles:
        raise ConfigurationError(
            f"{len(vehicle_params)} vehicle params for {snapshot.n_vehicles} vehicles"
        )
    if np.isnan(snapshot.controls).any():
        missing = np.flatnonzero(np.isnan(snapshot.controls)).tolist()
        raise SequencingError(f"vehicles {missing} have not decided at step {snapshot.k}")

    leader, followers = platoon_step(
        LeaderState(acc=float(snapshot.states[0, 2])),
        [LocalState.from_array(row) for row in snapshot.states[1:]],
        snapshot.controls.tolist(),
        vehicle_params,
        dt,
    )
    return PlatoonSnapshot.from_states(leader, followers, k=snapshot.k + 1)


def close_step(
    snapshot: PlatoonSnapshot,
    ego: int,
    action: float,
    vehicle_params: Sequence[VehicleParams],
    reward_params: RewardParams = RewardParams(),
    follower_controller: Controller | None = None,
) -> tuple[PlatoonSnapshot, float]:
    """
    Apply the ego action and let the vehicles behind the ego decide.

    Returns:
        Tuple (snapshot with every control decided, unscaled reward of the ego)
    """
    if not math.isfinite(action):
        raise InvalidInputError(f"action must be finite, got {action}")
    if snapshot.n_vehicles <= ego:
        raise LayoutMismatchError(f"snapshot has no vehicle {ego}")

    current = snapshot.copy()
    u = clamp_control(action, vehicle_params[ego])
    current.controls[ego] = u
    for j in range(ego + 1, current.n_vehicles):
        if follower_controller is None:
            raise MissingPolicyError(f"no controller for follower vehicle {j}")
        current.controls[j] = clamp_control(follower_controller(j, current), vehicle_params[j])

    r = reward(current.states[ego, 0], current.states[ego, 1], u, reward_params)
    return current, r


def transition(
    layout: StateLayout,
    snapshot: PlatoonSnapshot,
    action: float,
    leader_draw: float,
    vehicle_params: Sequence[VehicleParams],
    dt: float,
    reward_params: RewardParams = RewardParams(),
    predecessor_controller: Controller | None = None,
    follower_controller: Controller | None = None,
) -> tuple[PlatoonSnapshot, np.ndarray, float]:
    """
    Apply the ego action and move the problem to its next state.

    The snapshot must already hold the decisions of every vehicle ahead of the
    ego for this step. Vehicles behind the ego decide after it. The leader's
    next input `leader_draw` is revealed and the predecessors decide again, so
    the returned state is ready for the ego's next decision.

    Args:
        layout: Layout of the problem being solved
        snapshot: Platoon snapshot at step k with predecessor controls decided
        action: Ego control input (clamped to the vehicle bounds)
        leader_draw: Exogenous leader input for step k+1
        vehicle_params: Constants of all vehicles, leader first
        dt: Step length in seconds
        reward_params: Reward weights
        predecessor_controller: Decides the controls of vehicles 1..ego-1
        follower_controller: Decides the controls of vehicles behind the ego

    Returns:
        Tuple (next snapshot, next state vector, unscaled reward)
    """
    decided, r = close_step(
        snapshot, layout.ego, action, vehicle_params, reward_params, follower_controller
    )
    next_snapshot = advance(decided, vehicle_params, dt)
    open_step(next_snapshot, leader_draw, layout.ego, predecessor_controller, vehicle_params)
    return next_snapshot, build_state(layout, next_snapshot), r
