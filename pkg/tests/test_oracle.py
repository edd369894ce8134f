"""Tests for the exact dynamic programming oracle and its instance families."""

import numpy as np
import pytest

from app.core.errors import (
    ConfigurationError,
    InexactSolutionError,
    KernelNormalizationError,
    UnboundedOutcomeError,
)
from app.services.oracle import (
    Solution,
    Ssdp,
    World,
    augment,
    evaluate_policy,
    open_loop_optimum,
    select_mode,
    solve,
    terminal_jensen_gap,
)
from app.services.oracle_worlds import (
    FOLLOWING_OBSERVATIONS,
    GridSpec,
    capped_grid,
    check_theorems,
    following_world,
    product_world,
)


def switch_world(initial=(1.0, 0.0), horizon: int = 2) -> World:
    """Two states; action a moves to state a deterministically."""
    return World(
        next_index=np.array([[[0], [1]], [[0], [1]]]),
        prob=np.ones((2, 2, 1)),
        reward=np.array([[0.0, 1.0], [2.0, 0.0]]),
        initial=np.array(initial),
        horizon=horizon,
        features={"s": np.array([0.0, 1.0])},
    )


def random_world(seed: int, n_states: int = 3, n_actions: int = 2, horizon: int = 3) -> World:
    rng = np.random.default_rng(seed)
    return World(
        next_index=np.broadcast_to(np.arange(n_states), (n_states, n_actions, n_states)).copy(),
        prob=rng.dirichlet(np.ones(n_states), size=(n_states, n_actions)),
        reward=rng.normal(size=(n_states, n_actions)),
        initial=rng.dirichlet(np.ones(n_states)),
        horizon=horizon,
        features={"s": np.arange(n_states, dtype=np.float64)},
    )


class TestWorldValidation:
    """Tests for World construction checks."""

    def test_rows_must_sum_to_one(self):
        """Test that an unnormalized transition row is rejected."""
        with pytest.raises(KernelNormalizationError):
            World(
                next_index=np.zeros((1, 1, 2), dtype=np.int64),
                prob=np.array([[[0.5, 0.4]]]),
                reward=np.zeros((1, 1)),
                initial=np.ones(1),
                horizon=1,
            )

    def test_initial_must_sum_to_one(self):
        """Test that an unnormalized initial distribution is rejected."""
        with pytest.raises(KernelNormalizationError):
            switch_world(initial=(0.5, 0.4))

    def test_successor_out_of_range(self):
        """Test that successor indices must name existing states."""
        with pytest.raises(ConfigurationError):
            World(
                next_index=np.full((1, 1, 1), 3),
                prob=np.ones((1, 1, 1)),
                reward=np.zeros((1, 1)),
                initial=np.ones(1),
                horizon=1,
            )

    def test_reward_shape(self):
        """Test that the reward table must be (Z, A)."""
        with pytest.raises(ConfigurationError):
            World(
                next_index=np.zeros((2, 1, 1), dtype=np.int64),
                prob=np.ones((2, 1, 1)),
                reward=np.zeros((2, 2)),
                initial=np.array([1.0, 0.0]),
                horizon=1,
            )

    def test_unknown_observed_feature(self):
        """Test that an SSDP can only observe existing features."""
        with pytest.raises(ConfigurationError):
            Ssdp(switch_world(), ("velocity",))


class TestAugment:
    """Tests for folding hidden features into the observation."""

    def test_adds_feature_once(self):
        """Test that augmenting with an observed feature leaves the observation alone."""
        ssdp = augment(Ssdp(switch_world(), ()), "s")
        assert augment(ssdp, ["s"]).observed == ("s",)

    def test_too_many_outcomes(self):
        """Test that a feature with more values than supported is refused."""
        n = 70
        world = World(
            next_index=np.zeros((n, 1, 1), dtype=np.int64),
            prob=np.ones((n, 1, 1)),
            reward=np.zeros((n, 1)),
            initial=np.full(n, 1.0 / n),
            horizon=1,
            features={"x": np.arange(n, dtype=np.float64)},
        )
        with pytest.raises(UnboundedOutcomeError):
            augment(Ssdp(world, ()), "x")

    def test_non_finite_feature(self):
        """Test that infinite feature values are refused."""
        world = switch_world()
        world.features["y"] = np.array([0.0, np.inf])
        with pytest.raises(UnboundedOutcomeError):
            augment(Ssdp(world, ()), "y")


class TestSolve:
    """Tests for the solver modes against brute force."""

    def test_full_observation_matches_open_loop(self):
        """Test that the MDP optimum of a deterministic world is the best action sequence."""
        world = switch_world()
        solution = solve(Ssdp(world, ("s",)))
        assert solution.mode == "mdp"
        assert solution.exact
        assert solution.j_star == pytest.approx(3.0)
        assert open_loop_optimum(world, 0) == pytest.approx(3.0)

    def test_blind_policy_enumeration(self):
        """Test the memoryless optimum when nothing is observed."""
        world = switch_world(initial=(0.5, 0.5))
        blind = Ssdp(world, ())
        assert select_mode(blind) == "memoryless-enumeration"
        solution = solve(blind)
        assert solution.j_star == pytest.approx(2.5)
        assert solution.policy.tolist() == [[1], [0]]
        assert evaluate_policy(blind, solution.policy) == pytest.approx(solution.j_star)

    def test_observation_never_hurts(self):
        """Test that observing the state is worth at least the blind optimum."""
        world = switch_world(initial=(0.5, 0.5))
        blind = Ssdp(world, ())
        assert solve(augment(blind, "s")).j_star == pytest.approx(3.0)
        assert solve(augment(blind, "s")).j_star >= solve(blind).j_star

    def test_ascent_is_a_lower_bound(self):
        """Test that coordinate ascent is flagged inexact and never beats enumeration."""
        world = switch_world(initial=(0.5, 0.5))
        blind = Ssdp(world, ())
        ascent = solve(blind, mode="memoryless-ascent")
        assert not ascent.exact
        assert ascent.j_star <= solve(blind).j_star + 1e-12
        assert ascent.j_star == pytest.approx(2.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_mdp_matches_enumeration(self, seed):
        """Test backward induction against enumerating every Markov policy."""
        ssdp = Ssdp(random_world(seed), ("s",))
        exact = solve(ssdp)
        enumerated = solve(ssdp, mode="memoryless-enumeration")
        assert exact.j_star == pytest.approx(enumerated.j_star, abs=1e-9)
        assert evaluate_policy(ssdp, exact.policy) == pytest.approx(exact.j_star, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_belief_stationary_matches_enumeration(self, seed):
        """Test the redrawn-hidden-part solver against enumeration."""
        world = product_world(np.random.default_rng(seed), "redrawn_hidden")
        ssdp = Ssdp(world, ("s",))
        assert select_mode(ssdp) == "belief-stationary"
        exact = solve(ssdp)
        enumerated = solve(ssdp, mode="memoryless-enumeration")
        assert exact.j_star == pytest.approx(enumerated.j_star, abs=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_observation_markov_mode(self, seed):
        """Test that an irrelevant hidden part is detected and adds no value."""
        world = product_world(np.random.default_rng(seed), "irrelevant_hidden")
        ssdp = Ssdp(world, ("s",))
        assert select_mode(ssdp) == "observation-markov"
        assert solve(augment(ssdp, "w")).j_star == pytest.approx(solve(ssdp).j_star, abs=1e-9)

    def test_unknown_mode(self):
        """Test that an unknown solver mode is rejected."""
        with pytest.raises(ConfigurationError):
            solve(Ssdp(switch_world(), ("s",)), mode="value-iteration")

    def test_mdp_mode_needs_full_observation(self):
        """Test that forcing the MDP solver on a partial observation fails."""
        with pytest.raises(ConfigurationError):
            solve(Ssdp(switch_world(), ()), mode="mdp")

    def test_open_loop_needs_deterministic_world(self):
        """Test that open-loop enumeration refuses stochastic worlds."""
        with pytest.raises(ConfigurationError):
            open_loop_optimum(random_world(0), 0)


class TestBeliefMdp:
    """Tests for backward induction over information states."""

    def test_blind_world_matches_enumeration(self):
        """Test that without observations the history optimum is the best action sequence."""
        blind = Ssdp(switch_world(initial=(0.5, 0.5)), ())
        solution = solve(blind, mode="belief-mdp")
        assert solution.exact
        assert solution.j_star == pytest.approx(2.5)
        assert solution.policy.tolist() == [[1], [0]]

    @pytest.mark.parametrize("seed", range(3))
    def test_full_observation_matches_mdp(self, seed):
        """Test that trivial beliefs reproduce the MDP optimum."""
        ssdp = Ssdp(random_world(seed), ("s",))
        assert solve(ssdp, mode="belief-mdp").j_star == pytest.approx(solve(ssdp).j_star, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_between_memoryless_and_full_observation(self, seed):
        """Test that history is worth at least memorylessness and at most the hidden state."""
        world = product_world(np.random.default_rng(seed), "markov_hidden")
        ssdp = Ssdp(world, ("s",))
        history = solve(ssdp, mode="belief-mdp").j_star
        assert history >= solve(ssdp, mode="memoryless-enumeration").j_star - 1e-9
        assert history <= solve(augment(ssdp, "w")).j_star + 1e-9

    def test_node_limit(self):
        """Test that too many information states are refused."""
        blind = Ssdp(switch_world(initial=(0.5, 0.5)), ())
        with pytest.raises(UnboundedOutcomeError):
            solve(blind, mode="belief-mdp", max_nodes=1)

    def test_following_world_without_predecessor_acceleration(self):
        """Test that own-state observation of the following world is solved exactly."""
        world = following_world(GridSpec(), exo_std=1.0, follower_tau=0.4)
        assert select_mode(Ssdp(world, FOLLOWING_OBSERVATIONS["P1"])) == "belief-mdp"

    def test_coarse_following_world(self):
        """Test that the exact own-state optimum never beats observing the predecessor."""
        grid = GridSpec(error_levels=5, acc_levels=3, action_levels=3, horizon=3)
        world = following_world(grid, exo_std=1.0, follower_tau=0.4)
        own = Ssdp(world, FOLLOWING_OBSERVATIONS["P1"])
        solution = solve(own)
        assert solution.mode == "belief-mdp"
        assert solution.exact
        assert solve(augment(own, "acc_pred")).j_star >= solution.j_star - 1e-9


class TestJensenGap:
    """Tests for the terminal-step gap."""

    @pytest.mark.parametrize("seed", range(5))
    def test_non_negative(self, seed):
        """Test that the expected max is never below the max of the expectation."""
        world = product_world(np.random.default_rng(seed), "markov_hidden")
        assert terminal_jensen_gap(Ssdp(world, ("s",))) >= -1e-12

    def test_zero_when_fully_observed(self):
        """Test that there is no gap without hidden state."""
        assert terminal_jensen_gap(Ssdp(switch_world(), ("s",))) == pytest.approx(0.0)


class TestCheckTheorems:
    """Tests for the randomized ordering checks."""

    @pytest.mark.parametrize("family", ["markov_hidden", "redrawn_hidden", "irrelevant_hidden", "jensen"])
    def test_no_violations(self, family):
        """Test that small product-world families hold on a handful of instances."""
        check = check_theorems(family, count=5, seed=3)
        assert check.instances == 5
        assert check.violations == 0
        assert len(check.gaps) == 5

    def test_equality_family_within_tolerance(self):
        """Test that the irrelevant-hidden-state family shows no gap at all."""
        check = check_theorems("irrelevant_hidden", count=5, seed=1)
        assert max(abs(check.min_gap), abs(check.max_gap)) <= 1e-9

    def test_deterministic_for_seed(self):
        """Test that the same seed reproduces the same gaps."""
        assert check_theorems("markov_hidden", 3, seed=7).gaps == check_theorems("markov_hidden", 3, seed=7).gaps

    def test_threads_give_same_gaps(self):
        """Test that a thread pool does not change the instances."""
        assert check_theorems("markov_hidden", 4, seed=2, jobs=2).gaps == check_theorems("markov_hidden", 4, seed=2).gaps

    def test_unknown_family(self):
        """Test that unknown families are rejected."""
        with pytest.raises(ConfigurationError):
            check_theorems("markov9", 1)

    def test_positive_count(self):
        """Test that at least one instance is required."""
        with pytest.raises(ConfigurationError):
            check_theorems("markov_hidden", 0)

    @pytest.mark.slow
    def test_redrawn_hidden_strict_witness(self):
        """Test that some instance gains from the hidden part when it is correlated with the reward."""
        check = check_theorems("redrawn_hidden", count=30, seed=0)
        assert check.passed
        assert check.strict_witness

    @pytest.mark.slow
    @pytest.mark.parametrize("family", ["pred_acceleration", "pred_control", "vehicles_ahead", "vehicles_behind"])
    def test_platoon_families(self, family):
        """Test the following and platoon families on a coarse grid."""
        grid = GridSpec(error_levels=5, acc_levels=3, action_levels=3, horizon=3)
        check = check_theorems(family, count=2, seed=0, grid=grid)
        assert check.passed

    def test_refuses_bounds(self, monkeypatch):
        """Test that a solution flagged inexact stops the check."""
        bound = Solution(0.0, np.zeros((1, 1), dtype=np.int64), np.zeros((1, 1)), "memoryless-ascent", False)
        monkeypatch.setattr("app.services.oracle_worlds.solve", lambda ssdp: bound)
        with pytest.raises(InexactSolutionError):
            check_theorems("markov_hidden", 1)

    def test_belief_families_run_on_coarser_grids(self):
        """Test that only the belief-solved families are coarsened."""
        grid = GridSpec()
        assert capped_grid(grid, "pred_control") == grid
        coarse = capped_grid(grid, "pred_acceleration")
        assert (coarse.error_levels, coarse.acc_levels, coarse.horizon) == (7, 5, 3)
