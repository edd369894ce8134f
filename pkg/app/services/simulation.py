"""Step-level platoon simulation with the coordination order of V2X decisions."""

import logging
from collections.abc import Sequence
from typing import Protocol

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, MissingPolicyError
from app.services.dynamics import LeaderState, LocalState, VehicleParams
from app.services.exogenous import GaussianInputProcess
from app.services.problems import (
    Controller,
    PlatoonSnapshot,
    ProblemId,
    RewardParams,
    advance,
    build_state,
    close_step,
    layout_for,
    open_step,
)

logger = logging.getLogger(__name__)


class StagePolicy(Protocol):
    """Anything that maps (step, state vector) to a control input."""

    horizon: int

    def act(self, k: int, state: np.ndarray) -> float: ...


def two_vehicle_params(
    leader_tau: float = settings.leader_tau, follower_tau: float = settings.follower_tau
) -> list[VehicleParams]:
    """Predecessor and ego of the two-vehicle scenario."""
    return [VehicleParams(tau=leader_tau), VehicleParams(tau=follower_tau)]


def platoon_params(
    taus: Sequence[float] = tuple(settings.platoon_taus),
    leader_tau: float = settings.leader_tau,
    time_gap: float = settings.time_gap,
) -> list[VehicleParams]:
    """Leader followed by one vehicle per follower time constant."""
    if not taus:
        raise ConfigurationError("a platoon needs at least one follower")
    return [VehicleParams(tau=leader_tau, h=time_gap)] + [
        VehicleParams(tau=tau, h=time_gap) for tau in taus
    ]


class PolicyController:
    """
    Controller callback driven by a trained stage policy.

    The vehicle observes its own problem layout, so a follower trained under P4
    keeps acting on P4 states whatever problem the ego solves.
    """

    def __init__(self, policy: StagePolicy, problem: ProblemId | str, vehicle: int):
        self.policy = policy
        self.layout = layout_for(problem, vehicle)
        self.vehicle = vehicle

    def __call__(self, vehicle: int, snapshot: PlatoonSnapshot) -> float:
        if vehicle != self.vehicle:
            raise MissingPolicyError(f"controller for vehicle {self.vehicle} asked to drive {vehicle}")
        # Past the horizon the last actor defines the bootstrap state.
        k = min(snapshot.k, self.policy.horizon - 1)
        return self.policy.act(k, build_state(self.layout, snapshot))


class ControllerTable:
    """Dispatch controller calls to per-vehicle controllers."""

    def __init__(self, controllers: dict[int, Controller] | None = None):
        self.controllers = dict(controllers or {})

    def __call__(self, vehicle: int, snapshot: PlatoonSnapshot) -> float:
        try:
            controller = self.controllers[vehicle]
        except KeyError:
            raise MissingPolicyError(f"no controller for vehicle {vehicle}") from None
        return controller(vehicle, snapshot)

    def __contains__(self, vehicle: int) -> bool:
        return vehicle in self.controllers


class PlatoonSimulator:
    """
    Drives a platoon one decision step at a time.

    A step is split around the ego decision: `begin_step` reveals the leader
    input and lets the vehicles ahead of the ego decide; `finish_step` applies
    the ego action, lets the vehicles behind it decide and advances everyone.
    """

    def __init__(
        self,
        vehicle_params: Sequence[VehicleParams],
        ego: int,
        leader_process: GaussianInputProcess,
        controllers: ControllerTable | None = None,
        dt: float = settings.dt,
        reward_params: RewardParams = RewardParams(),
    ):
        if len(vehicle_params) < 2:
            raise ConfigurationError("a platoon needs at least 2 vehicles")
        if not 1 <= ego < len(vehicle_params):
            raise ConfigurationError(f"ego {ego} is not a follower of {len(vehicle_params)} vehicles")
        self.vehicle_params = list(vehicle_params)
        self.ego = ego
        self.leader_process = leader_process
        self.controllers = controllers or ControllerTable()
        self.dt = dt
        self.reward_params = reward_params

        for j in range(1, len(self.vehicle_params)):
            if j != ego and j not in self.controllers:
                raise MissingPolicyError(f"no controller for vehicle {j}")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_params)

    def initial_snapshot(self, follower_state: Sequence[float]) -> PlatoonSnapshot:
        """Every follower starts from the same local state, the leader at rest."""
        follower = LocalState.from_array(follower_state)
        return PlatoonSnapshot.from_states(LeaderState(acc=0.0), [follower] * (self.n_vehicles - 1))

    def begin_step(self, snapshot: PlatoonSnapshot) -> PlatoonSnapshot:
        """Reveal the leader input and let vehicles 1..ego-1 decide, in place."""
        return open_step(
            snapshot, self.leader_process.draw(), self.ego, self.controllers, self.vehicle_params
        )

    def finish_step(self, snapshot: PlatoonSnapshot, action: float) -> tuple[PlatoonSnapshot, PlatoonSnapshot, float]:
        """
        Apply the ego action and advance every vehicle.

        Returns:
            Tuple (decided snapshot of this step, next undecided snapshot, unscaled reward)
        """
        decided, r = close_step(
            snapshot, self.ego, action, self.vehicle_params, self.reward_params, self.controllers
        )
        return decided, advance(decided, self.vehicle_params, self.dt), r
