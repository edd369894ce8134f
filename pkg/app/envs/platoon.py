"""Continuous platoon environments: the two-vehicle scenario and the full platoon."""

from collections.abc import Sequence

import numpy as np

from app.core.config import settings
from app.envs.base import BaseEnvironment
from app.services.dynamics import VehicleParams
from app.services.exogenous import GaussianInputProcess
from app.services.problems import (
    PlatoonSnapshot,
    ProblemId,
    RewardParams,
    build_state,
    layout_for,
)
from app.services.simulation import ControllerTable, PlatoonSimulator, two_vehicle_params


class PlatoonEnvironment(BaseEnvironment):
    """
    The ego vehicle of a platoon solving one SSDP.

    Vehicles ahead of and behind the ego are driven by the injected
    controllers; the leader follows the exogenous input process.
    """

    def __init__(
        self,
        problem: ProblemId | str,
        vehicle_params: Sequence[VehicleParams],
        ego: int,
        leader_process: GaussianInputProcess,
        controllers: ControllerTable | None = None,
        initial_state: Sequence[float] = tuple(settings.platoon_initial_state),
        horizon: int = settings.horizon,
        dt: float = settings.dt,
        reward_params: RewardParams = RewardParams(),
        drop_leader_constants: bool = False,
    ):
        ego_params = vehicle_params[ego]
        super().__init__(horizon=horizon, u_min=ego_params.u_min, u_max=ego_params.u_max)
        self.layout = layout_for(problem, ego, len(vehicle_params), drop_leader_constants)
        self.simulator = PlatoonSimulator(
            vehicle_params, ego, leader_process, controllers, dt, reward_params
        )
        self.initial_state = list(initial_state)
        self.snapshot: PlatoonSnapshot | None = None
        self.trace: list[PlatoonSnapshot] = []

    @property
    def state_dim(self) -> int:
        return self.layout.dim

    @property
    def problem(self) -> ProblemId:
        return self.layout.problem

    def _reset(self, seed: int | None) -> np.ndarray:
        if seed is not None:
            self.simulator.leader_process.reset(seed)
        self.trace = []
        self.snapshot = self.simulator.begin_step(
            self.simulator.initial_snapshot(self.initial_state)
        )
        return build_state(self.layout, self.snapshot)

    def _step(self, u: float) -> tuple[np.ndarray, float]:
        decided, upcoming, reward = self.simulator.finish_step(self.snapshot, u)
        self.trace.append(decided)
        # The next state is defined even after the last step, for bootstrapping.
        self.snapshot = self.simulator.begin_step(upcoming)
        return build_state(self.layout, self.snapshot), reward

    def ego_local(self) -> np.ndarray:
        return self.snapshot.states[self.layout.ego].copy()

    def trace_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """States (steps, N, 3) and controls (steps, N) of the episode so far."""
        states = np.stack([s.states for s in self.trace])
        controls = np.stack([s.controls for s in self.trace])
        return states, controls


class TwoVehicleEnvironment(PlatoonEnvironment):
    """A follower behind a predecessor whose input is the Gaussian process."""

    def __init__(
        self,
        problem: ProblemId | str = ProblemId.P1,
        exogenous: GaussianInputProcess | None = None,
        follower_tau: float = settings.follower_tau,
        leader_tau: float = settings.leader_tau,
        initial_state: Sequence[float] = tuple(settings.two_vehicle_initial_state),
        horizon: int = settings.horizon,
        dt: float = settings.dt,
        reward_params: RewardParams = RewardParams(),
    ):
        super().__init__(
            problem=problem,
            vehicle_params=two_vehicle_params(leader_tau, follower_tau),
            ego=1,
            leader_process=exogenous or GaussianInputProcess(),
            initial_state=initial_state,
            horizon=horizon,
            dt=dt,
            reward_params=reward_params,
        )
