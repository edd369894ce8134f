"""Tests for the finite-horizon DDPG trainer."""

import numpy as np
import pytest

from app.core.errors import ConfigurationError, MissingArtifactError
from app.envs.base import BaseEnvironment
from app.envs.discrete import DiscreteSsdpEnvironment
from app.envs.platoon import TwoVehicleEnvironment
from app.schemas.experiment import TrainerConfig
from app.services import fh_ddpg
from app.services.exogenous import GaussianInputProcess
from app.services.fh_ddpg import Batch, OuNoise, ReplayBuffer, TrainedPolicy, evaluate, q_scatter, train
from app.services.network import actor_spec, critic_spec, init_params
from app.services.oracle import Ssdp, solve
from app.services.oracle_worlds import GridSpec, following_world, toy_world


def small_config(**overrides) -> TrainerConfig:
    values = {
        "episodes_per_stage": 20,
        "batch_size": 8,
        "replay_capacity": 100,
        "actor_hidden": [16, 16],
        "critic_hidden": [16, 16],
        "actor_learning_rate": 1e-3,
        "critic_learning_rate": 1e-3,
        "eval_interval": 10,
        "eval_episodes": 2,
    }
    values.update(overrides)
    return TrainerConfig(**values)


@pytest.fixture
def env():
    """Short two-vehicle P3 environment."""
    return TwoVehicleEnvironment("P3", horizon=3)


class TrackingEnvironment(BaseEnvironment):
    """One-step task rewarding -(u - 0.8 s)^2 for a uniform scalar state s."""

    gain = 0.8

    def __init__(self):
        super().__init__(horizon=1, u_min=-2.6, u_max=2.6)
        self.s = 0.0

    @property
    def state_dim(self) -> int:
        return 1

    def _reset(self, seed):
        self.s = float(np.random.default_rng(seed).uniform(-1.0, 1.0))
        return np.array([self.s])

    def _step(self, u):
        return np.array([self.s]), -((u - self.gain * self.s) ** 2)

    def ego_local(self):
        return np.array([self.s, 0.0, 0.0])


class TestOuNoise:
    """Tests for Ornstein-Uhlenbeck exploration noise."""

    def test_stationary_variance(self):
        """Test the long-run variance against sigma^2 / (2 theta - theta^2)."""
        noise = OuNoise(theta=0.15, sigma=0.5, seed=0)
        samples = np.array([noise.sample() for _ in range(200_000)])[1000:]
        assert samples.var() == pytest.approx(noise.stationary_variance(), rel=0.05)

    def test_reset(self):
        """Test that reset returns the process to zero."""
        noise = OuNoise(seed=1)
        for _ in range(10):
            noise.sample()
        noise.reset()
        assert noise.state == 0.0

    def test_zero_sigma_stays_at_zero(self):
        """Test that without diffusion the process never leaves zero."""
        noise = OuNoise(sigma=0.0)
        assert [noise.sample() for _ in range(5)] == [0.0] * 5

    def test_negative_parameters(self):
        """Test that negative theta is rejected."""
        with pytest.raises(ConfigurationError):
            OuNoise(theta=-0.1)


class TestReplayBuffer:
    """Tests for the FIFO transition store."""

    def test_fifo_overwrite(self):
        """Test that the oldest transition is replaced when full."""
        buffer = ReplayBuffer(capacity=3, state_dim=2)
        for i in range(5):
            buffer.add(np.full(2, i), float(i), float(i), np.full(2, i + 1), False)
        assert len(buffer) == 3
        assert sorted(buffer.actions.tolist()) == [2.0, 3.0, 4.0]

    def test_sample_without_replacement(self):
        """Test that a full-size batch returns every stored transition once."""
        buffer = ReplayBuffer(capacity=10, state_dim=1, seed=4)
        for i in range(10):
            buffer.add([i], float(i), 0.0, [i], False)
        batch = buffer.sample(10)
        assert sorted(batch.actions.tolist()) == [float(i) for i in range(10)]

    def test_sample_too_large(self):
        """Test that asking for more transitions than stored is an error."""
        buffer = ReplayBuffer(capacity=10, state_dim=1)
        buffer.add([0.0], 0.0, 0.0, [0.0], False)
        with pytest.raises(ConfigurationError):
            buffer.sample(2)


class TestTraining:
    """Tests for backward-induction training."""

    def test_one_network_pair_per_step(self, env):
        """Test that training yields K actors and K critics."""
        result = train(env, small_config(), seed=0, problem="P3")
        assert result.policy.horizon == 3
        assert len(result.policy.critics) == 3
        assert result.policy.actor_spec.input_dim == 5

    def test_curve_points(self, env):
        """Test that curve points are taken every eval_interval episodes across stages."""
        result = train(env, small_config(), seed=0)
        assert [p.episode for p in result.curve] == [10, 20, 30, 40, 50, 60]

    def test_deterministic(self, env):
        """Test that equal seeds give identical networks."""
        first = train(env, small_config(), seed=7).policy
        second = train(env, small_config(), seed=7).policy
        assert [a.checksum() for a in first.actors] == [a.checksum() for a in second.actors]

    def test_different_seeds_differ(self, env):
        """Test that the seed changes the trained networks."""
        first = train(env, small_config(), seed=1).policy
        second = train(env, small_config(), seed=2).policy
        assert first.actors[0].checksum() != second.actors[0].checksum()

    def test_save_and_load(self, env, tmp_path):
        """Test that a reloaded policy acts identically."""
        policy = train(env, small_config(), seed=0, problem="P3", config_digest="abc").policy
        policy.save(tmp_path / "policy")
        loaded = TrainedPolicy.load(tmp_path / "policy")

        state = env.reset(3)
        assert loaded.problem == "P3"
        assert loaded.config_digest == "abc"
        assert [loaded.act(k, state) for k in range(3)] == [policy.act(k, state) for k in range(3)]

    def test_stage_training_leaves_later_stages_alone(self, env, monkeypatch):
        """Test that updates of stage k never touch the networks of stages after k."""
        seen = {}
        update = fh_ddpg._update

        def recording(k, horizon, batch, actor, critic, actors, critics, *rest):
            later = tuple((a.checksum(), c.checksum()) for a, c in zip(actors[k + 1:], critics[k + 1:]))
            seen.setdefault(k, set()).add(later)
            return update(k, horizon, batch, actor, critic, actors, critics, *rest)

        monkeypatch.setattr(fh_ddpg, "_update", recording)
        policy = train(env, small_config(), seed=0).policy

        assert sorted(seen) == [0, 1, 2]
        final = [(a.checksum(), c.checksum()) for a, c in zip(policy.actors, policy.critics)]
        for k, checksums in seen.items():
            assert checksums == {tuple(final[k + 1:])}

    @pytest.mark.parametrize("k", [0, 1])
    def test_critic_loss_falls_on_a_fixed_batch(self, k):
        """Test that repeated updates on one batch shrink the TD loss against frozen targets."""
        rng = np.random.default_rng(0)
        states = rng.normal(size=(32, 2))
        actions = rng.uniform(-1.0, 1.0, size=32)
        batch = Batch(
            states=states,
            actions=actions,
            rewards=-(states[:, 0] ** 2) - 0.5 * actions**2,
            next_states=rng.normal(size=(32, 2)),
            dones=np.full(32, float(k == 1)),
        )
        a_spec, c_spec = actor_spec(2, (8,)), critic_spec(2, (16, 16))
        actors = [init_params(a_spec, 1), init_params(a_spec, 2)]
        critics = [init_params(c_spec, 3), init_params(c_spec, 4)]
        actor, critic = init_params(a_spec, 5), init_params(c_spec, 6)
        config = small_config(critic_learning_rate=1e-2)

        losses = [
            fh_ddpg._update(k, 2, batch, actor, critic, actors, critics, a_spec, c_spec, config)
            for _ in range(300)
        ]
        assert losses[-1] < 0.5 * losses[0]
        assert np.mean(losses[-20:]) < np.mean(losses[:20])

    def test_load_missing(self, tmp_path):
        """Test that loading from an empty directory names the train command."""
        with pytest.raises(MissingArtifactError, match="platoon-lab train"):
            TrainedPolicy.load(tmp_path)


class TestEvaluation:
    """Tests for noise-free evaluation."""

    def test_quiet_equilibrium_return_near_zero(self):
        """Test that without disturbance at equilibrium the return stays near zero."""
        env = TwoVehicleEnvironment(
            "P1", exogenous=GaussianInputProcess(std=0.0), initial_state=[0.0, 0.0, 0.0], horizon=5
        )
        policy = train(env, small_config(), seed=0).policy
        result = evaluate(policy, env, episodes=4, seed=0)
        assert abs(result.mean_scaled) < 0.05
        assert np.allclose(result.returns_scaled, policy.reward_scale * result.returns_raw)

    def test_traces_and_q_records(self, env):
        """Test trace shapes and one Q record per visited step."""
        policy = train(env, small_config(), seed=0).policy
        result = evaluate(policy, env, episodes=2, seed=0)
        records = q_scatter(policy, env, episodes=2, seed=0)

        assert len(result.traces) == 2
        assert result.traces[0].shape == (3, 4)
        assert len(records) == 6
        assert records[-1].step == 2

    def test_horizon_mismatch(self, env):
        """Test that a policy cannot be evaluated on a longer episode."""
        policy = train(env, small_config(), seed=0).policy
        with pytest.raises(ConfigurationError):
            evaluate(policy, TwoVehicleEnvironment("P3", horizon=4), episodes=1)


@pytest.mark.slow
class TestAgainstOracle:
    """Trainer sanity on a small discretized world."""

    def test_reaches_oracle_optimum(self):
        """Test that the evaluated return is within 5% of the exact optimum."""
        world = toy_world(horizon=3)
        observed = ("e_p", "e_v", "acc", "acc_pred", "u_pred")
        optimum = solve(Ssdp(world, observed)).j_star

        env = DiscreteSsdpEnvironment(world, observed, seed=0)
        config = small_config(
            episodes_per_stage=3000,
            batch_size=64,
            replay_capacity=5000,
            actor_hidden=[64, 64],
            critic_hidden=[64, 64],
            reward_scale=0.1,
            eval_interval=3000,
        )
        policy = train(env, config, seed=0).policy
        result = evaluate(policy, env, episodes=2000, seed=1)
        assert result.returns_raw.mean() >= optimum - 0.05 * abs(optimum)

    def test_single_step_reaches_analytic_action(self):
        """Test that with one step the actor learns the maximizer 0.8 s of -(u - 0.8 s)^2."""
        config = small_config(
            episodes_per_stage=3000,
            batch_size=64,
            replay_capacity=5000,
            actor_hidden=[32, 32],
            critic_hidden=[64, 64],
            reward_scale=1.0,
            eval_interval=3000,
        )
        policy = train(TrackingEnvironment(), config, seed=0).policy
        for s in np.linspace(-0.6, 0.6, 5):
            assert policy.act(0, np.array([s])) == pytest.approx(TrackingEnvironment.gain * s, abs=0.05)

    def test_terminal_q_tracks_returns(self):
        """Test that last-step critic estimates correlate above 0.9 with realized returns."""
        grid = GridSpec(error_levels=7, acc_levels=5, action_levels=9, dt=0.5, horizon=3)
        world = following_world(grid, initial=np.full((7, 7, 5, 5), 1.0 / 1225))
        env = DiscreteSsdpEnvironment(world, ("e_p", "e_v", "acc", "acc_pred", "u_pred"), seed=0)
        config = small_config(
            episodes_per_stage=3000,
            batch_size=64,
            replay_capacity=5000,
            actor_hidden=[64, 64],
            critic_hidden=[64, 64],
            reward_scale=0.1,
            eval_interval=3000,
        )
        policy = train(env, config, seed=0).policy
        terminal = [r for r in q_scatter(policy, env, episodes=500, seed=1) if r.step == 2]
        estimates = [r.estimate for r in terminal]
        observed = [r.observed for r in terminal]
        assert np.corrcoef(estimates, observed)[0, 1] > 0.9
