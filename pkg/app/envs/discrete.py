"""A tabulated oracle world exposed as a continuous-action environment."""

from collections.abc import Sequence

import numpy as np

from app.core.errors import ConfigurationError
from app.envs.base import BaseEnvironment
from app.services.exogenous import make_generator
from app.services.oracle import Ssdp, World


class DiscreteSsdpEnvironment(BaseEnvironment):
    """
    Samples episodes of a World; the agent sees the observed features.

    Continuous actions snap to the nearest level of the world's action grid.
    """

    def __init__(self, world: World, observed: Sequence[str], seed: int = 0):
        super().__init__(
            horizon=world.horizon,
            u_min=float(np.min(world.action_values)),
            u_max=float(np.max(world.action_values)),
        )
        self.ssdp = Ssdp(world, tuple(observed))
        self.world = world
        self._columns = np.column_stack([world.features[name] for name in self.ssdp.observed])
        self._rng = make_generator(seed)
        self.z = 0

    @property
    def state_dim(self) -> int:
        return len(self.ssdp.observed)

    def _reset(self, seed: int | None) -> np.ndarray:
        if seed is not None:
            self._rng = make_generator(seed)
        self.z = int(self._rng.choice(self.world.n_states, p=self.world.initial))
        return self._columns[self.z].copy()

    def _step(self, u: float) -> tuple[np.ndarray, float]:
        a = int(np.abs(self.world.action_values - u).argmin())
        reward = float(self.world.reward[self.z, a])
        outcome = int(self._rng.choice(self.world.prob.shape[2], p=self.world.prob[self.z, a]))
        self.z = int(self.world.next_index[self.z, a, outcome])
        return self._columns[self.z].copy(), reward

    def ego_local(self) -> np.ndarray:
        try:
            return np.array([self.world.features[n][self.z] for n in ("e_p", "e_v", "acc")])
        except KeyError:
            raise ConfigurationError("world has no [e_p, e_v, acc] features") from None
