"""Base class for episode environments."""

from abc import ABC, abstractmethod

import numpy as np

from app.core.errors import SequencingError


class BaseEnvironment(ABC):
    """Abstract finite-horizon environment with a scalar continuous action."""

    def __init__(self, horizon: int, u_min: float, u_max: float):
        """
        Initialize the environment.

        Args:
            horizon: Number of decision steps per episode
            u_min: Lower control bound
            u_max: Upper control bound
        """
        self.horizon = horizon
        self.u_min = u_min
        self.u_max = u_max
        self.k = 0
        self._started = False

    @property
    @abstractmethod
    def state_dim(self) -> int:
        """Length of the state vector handed to the agent."""

    @abstractmethod
    def _reset(self, seed: int | None) -> np.ndarray:
        pass

    @abstractmethod
    def _step(self, u: float) -> tuple[np.ndarray, float]:
        pass

    @abstractmethod
    def ego_local(self) -> np.ndarray:
        """Current [e_p, e_v, acc] of the controlled vehicle."""

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start an episode and return the initial state."""
        self.k = 0
        self._started = True
        return self._reset(seed)

    def step(self, u: float) -> tuple[np.ndarray, float]:
        """
        Apply a control input.

        Returns:
            Tuple (next state, unscaled reward)
        """
        if not self._started:
            raise SequencingError("reset() must be called before step()")
        if self.k >= self.horizon:
            raise SequencingError(f"episode already finished after {self.horizon} steps")
        next_state, reward = self._step(float(np.clip(u, self.u_min, self.u_max)))
        self.k += 1
        return next_state, reward

    @property
    def done(self) -> bool:
        return self.k >= self.horizon
