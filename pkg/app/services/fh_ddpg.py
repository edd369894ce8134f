"""Finite-horizon DDPG trained by backward induction.

One actor/critic pair is trained per decision step, from the last step back
to the first. While step k trains, the networks of step k+1 are frozen and
serve as the bootstrap target; the last step bootstraps zero.
"""

import json
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from app.core.config import settings
from app.core.errors import (
    ConfigurationError,
    MissingArtifactError,
    TrainingDivergenceError,
)
from app.envs.base import BaseEnvironment
from app.schemas.experiment import TrainerConfig
from app.services.exogenous import episode_seed, make_generator
from app.services.network import (
    MlpParams,
    MlpSpec,
    actor_spec,
    backward,
    critic_spec,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_update,
)

logger = logging.getLogger(__name__)

POLICY_FILE = "policy.json"


@dataclass
class OuNoise:
    """Ornstein-Uhlenbeck exploration noise around zero."""

    theta: float = settings.ou_theta
    sigma: float = settings.ou_sigma
    seed: int = 0
    scale: float = 1.0
    state: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.theta < 0 or self.sigma < 0:
            raise ConfigurationError("OU theta and sigma must be non-negative")
        self._rng = make_generator(self.seed)

    def reset(self) -> None:
        self.state = 0.0

    def sample(self) -> float:
        self.state += self.theta * (0.0 - self.state) + self.sigma * self._rng.standard_normal()
        return self.scale * self.state

    def stationary_variance(self) -> float:
        """Variance of the discrete-time process after it forgets its start."""
        return self.sigma**2 / (2 * self.theta - self.theta**2)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions."""

    def __init__(self, capacity: int, state_dim: int, seed: int = 0):
        if capacity < 1:
            raise ConfigurationError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        self._rng = make_generator(seed)

    def __len__(self) -> int:
        return self.size

    def add(self, state, action: float, reward: float, next_state, done: bool) -> None:
        """Store a transition, overwriting the oldest one when full."""
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        """Uniform sample without replacement."""
        if batch_size > self.size:
            raise ConfigurationError(f"cannot sample {batch_size} of {self.size} transitions")
        idx = self._rng.choice(self.size, size=batch_size, replace=False)
        return Batch(
            self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]
        )


@dataclass
class TrainedPolicy:
    """Per-step actors and critics of one training run."""

    problem: str
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actors: list[MlpParams]
    critics: list[MlpParams]
    config_digest: str = ""
    reward_scale: float = settings.reward_scale

    @property
    def horizon(self) -> int:
        return len(self.actors)

    def act(self, k: int, state) -> float:
        out, _ = forward(self.actors[k], self.actor_spec, state)
        return float(out[0, 0])

    def q_value(self, k: int, state, action: float) -> float:
        out, _ = forward(self.critics[k], self.critic_spec, state, [action])
        return float(out[0, 0])

    def save(self, directory: str | Path) -> Path:
        """One checkpoint per (step, role) plus a small JSON index."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k, (actor, critic) in enumerate(zip(self.actors, self.critics)):
            save_checkpoint(directory / f"actor_{k:03d}.npz", self.actor_spec, actor)
            save_checkpoint(directory / f"critic_{k:03d}.npz", self.critic_spec, critic)
        index = {
            "problem": self.problem,
            "horizon": self.horizon,
            "config_digest": self.config_digest,
            "reward_scale": self.reward_scale,
        }
        (directory / POLICY_FILE).write_text(json.dumps(index, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "TrainedPolicy":
        directory = Path(directory)
        index_path = directory / POLICY_FILE
        if not index_path.exists():
            raise MissingArtifactError(
                f"no trained policy in {directory}; run `platoon-lab train` first"
            )
        index = json.loads(index_path.read_text())
        actors, critics = [], []
        for k in range(index["horizon"]):
            a_spec, actor = load_checkpoint(directory / f"actor_{k:03d}.npz")
            c_spec, critic = load_checkpoint(directory / f"critic_{k:03d}.npz")
            actors.append(actor)
            critics.append(critic)
        return cls(
            problem=index["problem"],
            actor_spec=a_spec,
            critic_spec=c_spec,
            actors=actors,
            critics=critics,
            config_digest=index["config_digest"],
            reward_scale=index["reward_scale"],
        )


@dataclass
class CurvePoint:
    episode: int
    mean_test_return: float
    std: float


@dataclass
class TrainingResult:
    policy: TrainedPolicy
    curve: list[CurvePoint]
    last_critic_loss: float = math.nan


@dataclass
class EvaluationResult:
    """Returns and ego traces of noise-free test episodes."""

    returns_raw: np.ndarray
    returns_scaled: np.ndarray
    traces: list[np.ndarray]  # each (K, 4): e_p, e_v, acc, u

    @property
    def mean_scaled(self) -> float:
        return float(np.mean(self.returns_scaled))


@dataclass
class QRecord:
    episode: int
    step: int
    estimate: float
    observed: float


def _fresh_copy(params: MlpParams, seed: int) -> MlpParams:
    """Same weights, new optimizer state."""
    return MlpParams(
        weights=[w.copy() for w in params.weights],
        biases=[b.copy() for b in params.biases],
        seed=seed,
    )


def _act(params: MlpParams, spec: MlpSpec, state) -> float:
    out, _ = forward(params, spec, state)
    return float(out[0, 0])


def run_episode(
    env: BaseEnvironment,
    decide: Callable[[int, np.ndarray], float],
    seed: int,
) -> tuple[list[np.ndarray], list[float], list[float], list[np.ndarray]]:
    """
    Play one full episode.

    Returns:
        Tuple (states, actions, unscaled rewards, ego [e_p, e_v, acc] per step)
    """
    state = env.reset(seed)
    states, actions, rewards, locals_ = [], [], [], []
    for k in range(env.horizon):
        u = float(np.clip(decide(k, state), env.u_min, env.u_max))
        states.append(state)
        locals_.append(env.ego_local())
        actions.append(u)
        state, r = env.step(u)
        rewards.append(r)
    return states, actions, rewards, locals_


def _evaluate_actors(
    env: BaseEnvironment, spec: MlpSpec, stage_actors: list[MlpParams], episodes: int, seed: int, scale: float
) -> np.ndarray:
    returns = []
    for i in range(episodes):
        _, _, rewards, _ = run_episode(
            env, lambda k, s: _act(stage_actors[k], spec, s), episode_seed(seed, 7, i)
        )
        returns.append(scale * sum(rewards))
    return np.array(returns)


def _update(
    k: int,
    horizon: int,
    batch: Batch,
    actor: MlpParams,
    critic: MlpParams,
    actors: list[MlpParams | None],
    critics: list[MlpParams | None],
    a_spec: MlpSpec,
    c_spec: MlpSpec,
    config: TrainerConfig,
) -> float:
    """One critic regression step followed by one deterministic policy-gradient step."""
    n = batch.states.shape[0]
    if k == horizon - 1:
        targets = batch.rewards
    else:
        next_actions, _ = forward(actors[k + 1], a_spec, batch.next_states)
        next_q, _ = forward(critics[k + 1], c_spec, batch.next_states, next_actions)
        targets = batch.rewards + (1.0 - batch.dones) * next_q[:, 0]

    q, cache = forward(critic, c_spec, batch.states, batch.actions)
    error = q[:, 0] - targets
    loss = float(np.mean(error**2))
    if not math.isfinite(loss):
        raise TrainingDivergenceError(
            f"critic loss became {loss} at step {k}", stage=k, critic_step=critic.step
        )
    sgd_update(critic, backward(critic, c_spec, cache, 2.0 * error / n), config.critic_learning_rate, config.optimizer)

    proposed, actor_cache = forward(actor, a_spec, batch.states)
    _, q_cache = forward(critic, c_spec, batch.states, proposed)
    action_grad = backward(critic, c_spec, q_cache, np.full(n, -1.0 / n)).action
    sgd_update(actor, backward(actor, a_spec, actor_cache, action_grad), config.actor_learning_rate, config.optimizer)
    return loss


def train(
    env: BaseEnvironment,
    config: TrainerConfig,
    seed: int = 0,
    problem: str = "",
    config_digest: str = "",
) -> TrainingResult:
    """
    Train one actor/critic pair per step by backward induction.

    Episodes of stage k reach step k with the already trained actor of step
    k+1 plus exploration noise (the in-training actor at the last step), then
    store the step-k transition. Curve points evaluate the composite policy in
    which steps without a trained actor borrow the in-training one.

    Args:
        env: Environment of the problem to solve
        config: Trainer hyper-parameters
        seed: Seed of this run
        problem: Problem tag stored in the policy
        config_digest: Digest stored in the policy

    Returns:
        TrainingResult with the policy and the training curve (scaled returns)

    Raises:
        TrainingDivergenceError: If a loss turns non-finite
    """
    horizon = env.horizon
    a_spec = actor_spec(env.state_dim, config.actor_hidden, env.u_max)
    c_spec = critic_spec(env.state_dim, config.critic_hidden)
    actors: list[MlpParams | None] = [None] * horizon
    critics: list[MlpParams | None] = [None] * horizon
    noise = OuNoise(config.ou_theta, config.ou_sigma, seed=episode_seed(seed, 1))
    curve: list[CurvePoint] = []
    episodes_done = 0
    loss = math.nan

    for k in range(horizon - 1, -1, -1):
        if k == horizon - 1 or not config.warm_start:
            actor = init_params(a_spec, episode_seed(seed, k, 1))
            critic = init_params(c_spec, episode_seed(seed, k, 2))
        else:
            actor = _fresh_copy(actors[k + 1], episode_seed(seed, k, 1))
            critic = _fresh_copy(critics[k + 1], episode_seed(seed, k, 2))
        behaviour = actors[k + 1] if k + 1 < horizon else actor
        buffer = ReplayBuffer(config.replay_capacity, env.state_dim, seed=episode_seed(seed, k, 3))

        for e in range(config.episodes_per_stage):
            noise.reset()
            if config.noise_decay:
                noise.scale = 1.0 - e / config.episodes_per_stage
            state = env.reset(episode_seed(seed, k, e, 4))
            for _ in range(k):
                state, _ = env.step(_act(behaviour, a_spec, state) + noise.sample())

            u = float(np.clip(_act(actor, a_spec, state) + noise.sample(), env.u_min, env.u_max))
            next_state, r = env.step(u)
            buffer.add(state, u, config.reward_scale * r, next_state, k == horizon - 1)

            if len(buffer) >= config.batch_size:
                for _ in range(config.updates_per_episode):
                    loss = _update(
                        k, horizon, buffer.sample(config.batch_size), actor, critic,
                        actors, critics, a_spec, c_spec, config,
                    )

            if (e + 1) % config.eval_interval == 0:
                stage_actors = [actor] * (k + 1) + actors[k + 1:]
                returns = _evaluate_actors(env, a_spec, stage_actors, config.eval_episodes, seed, config.reward_scale)
                point = CurvePoint(episodes_done + e + 1, float(returns.mean()), float(returns.std()))
                curve.append(point)
                logger.debug("step %d episode %d: %.5f", k, point.episode, point.mean_test_return)

        actors[k], critics[k] = actor, critic
        episodes_done += config.episodes_per_stage
        logger.info(
            "stage %d/%d trained: %d episodes, critic loss %.4e",
            horizon - k, horizon, config.episodes_per_stage, loss,
        )

    policy = TrainedPolicy(
        problem=problem,
        actor_spec=a_spec,
        critic_spec=c_spec,
        actors=actors,
        critics=critics,
        config_digest=config_digest,
        reward_scale=config.reward_scale,
    )
    return TrainingResult(policy=policy, curve=curve, last_critic_loss=loss)


def evaluate(policy: TrainedPolicy, env: BaseEnvironment, episodes: int, seed: int = 0) -> EvaluationResult:
    """
    Noise-free test episodes.

    Raises:
        ConfigurationError: If the policy horizon differs from the environment's
    """
    if policy.horizon != env.horizon:
        raise ConfigurationError(f"policy horizon {policy.horizon} != environment horizon {env.horizon}")
    raw, traces = [], []
    for i in range(episodes):
        _, actions, rewards, locals_ = run_episode(env, policy.act, episode_seed(seed, i))
        raw.append(sum(rewards))
        traces.append(np.column_stack([np.array(locals_), np.array(actions)]))
    raw = np.array(raw)
    return EvaluationResult(returns_raw=raw, returns_scaled=policy.reward_scale * raw, traces=traces)


def q_scatter(policy: TrainedPolicy, env: BaseEnvironment, episodes: int, seed: int = 0) -> list[QRecord]:
    """Critic estimates at visited (S_k, a_k) against realized scaled returns-to-go."""
    records = []
    for i in range(episodes):
        states, actions, rewards, _ = run_episode(env, policy.act, episode_seed(seed, i))
        to_go = policy.reward_scale * np.cumsum(rewards[::-1])[::-1]
        for k, (s, a) in enumerate(zip(states, actions)):
            records.append(QRecord(i, k, policy.q_value(k, s, a), float(to_go[k])))
    return records
