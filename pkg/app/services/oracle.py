"""Exact finite-horizon dynamic programming on discretized SSDPs.

A `World` is a finite Markov process over a joint state z that holds both what
a decision maker sees and what stays hidden from it. Its kernel is stored in
state-action pair form: a sparse matrix of shape (Z*A, Z) whose row z*A + a is
the next-state distribution after action a in state z. An `Ssdp` is a world
plus the names of the features its decision maker observes.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from app.core.config import settings
from app.core.errors import (
    ConfigurationError,
    KernelNormalizationError,
    UnboundedOutcomeError,
)

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9
STRUCTURE_TOLERANCE = 1e-12
BELIEF_DECIMALS = 12

SOLVER_MODES = (
    "mdp",
    "observation-markov",
    "belief-stationary",
    "memoryless-enumeration",
    "belief-mdp",
    "memoryless-ascent",
)


@dataclass
class World:
    """
    Tabulated finite-horizon process over joint states.

    Args:
        next_index: Array (Z, A, M) of successor indices per outcome
        prob: Array (Z, A, M) of outcome probabilities
        reward: Array (Z, A) of immediate rewards
        initial: Initial distribution over Z
        horizon: Number of decision steps K
        features: Named arrays over Z from which observations are assembled
        action_values: Physical value of every action index
    """

    next_index: np.ndarray
    prob: np.ndarray
    reward: np.ndarray
    initial: np.ndarray
    horizon: int
    features: dict[str, np.ndarray] = field(default_factory=dict)
    action_values: np.ndarray | None = None

    def __post_init__(self):
        self.next_index = np.asarray(self.next_index, dtype=np.int64)
        self.prob = np.asarray(self.prob, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        n_states, n_actions, _ = self.next_index.shape

        if self.prob.shape != self.next_index.shape:
            raise ConfigurationError("prob and next_index must have the same shape")
        if self.reward.shape != (n_states, n_actions):
            raise ConfigurationError(f"reward must have shape ({n_states}, {n_actions})")
        if self.initial.shape != (n_states,):
            raise ConfigurationError(f"initial distribution must have length {n_states}")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be at least 1, got {self.horizon}")
        if self.next_index.min() < 0 or self.next_index.max() >= n_states:
            raise ConfigurationError("successor index out of range")

        row_sums = self.prob.sum(axis=2)
        worst = float(np.abs(row_sums - 1.0).max())
        if worst > NORMALIZATION_TOLERANCE or (self.prob < 0).any():
            raise KernelNormalizationError(
                f"transition rows must sum to 1; worst deviation {worst:.3e}", deviation=worst
            )
        if abs(self.initial.sum() - 1.0) > NORMALIZATION_TOLERANCE:
            raise KernelNormalizationError("initial distribution must sum to 1")

        if self.action_values is None:
            self.action_values = np.arange(n_actions, dtype=np.float64)
        for name, values in self.features.items():
            if np.shape(values) != (n_states,):
                raise ConfigurationError(f"feature {name} must have one value per state")

    @property
    def n_states(self) -> int:
        return self.next_index.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_index.shape[1]

    @cached_property
    def kernel(self) -> sparse.csr_matrix:
        """Sparse (Z*A, Z) transition matrix; duplicate successors are summed."""
        n_states, n_actions, n_outcomes = self.next_index.shape
        rows = np.repeat(np.arange(n_states * n_actions), n_outcomes)
        matrix = sparse.coo_matrix(
            (self.prob.ravel(), (rows, self.next_index.ravel())),
            shape=(n_states * n_actions, n_states),
        )
        return matrix.tocsr()

    def expect(self, values: np.ndarray) -> np.ndarray:
        """E[values(z') | z, a] as an array (Z, A)."""
        return (self.kernel @ values).reshape(self.n_states, self.n_actions)


@dataclass
class Ssdp:
    """A world seen through a set of observed features."""

    world: World
    observed: tuple[str, ...]

    def __post_init__(self):
        self.observed = tuple(self.observed)
        unknown = [name for name in self.observed if name not in self.world.features]
        if unknown:
            raise ConfigurationError(f"unknown features {unknown}")

    @cached_property
    def _observation(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.observed:
            return np.zeros((1, 0)), np.zeros(self.world.n_states, dtype=np.int64)
        table = np.column_stack([self.world.features[name] for name in self.observed])
        levels, inverse = np.unique(table, axis=0, return_inverse=True)
        return levels, inverse.reshape(-1)

    @property
    def observation(self) -> np.ndarray:
        """Observation index of every joint state."""
        return self._observation[1]

    @property
    def observation_values(self) -> np.ndarray:
        """Feature values of every observation index, shape (S, len(observed))."""
        return self._observation[0]

    @property
    def n_observations(self) -> int:
        return self._observation[0].shape[0]


@dataclass
class Solution:
    """Optimal (or best found) observation-measurable policy of an SSDP."""

    j_star: float
    policy: np.ndarray  # (K, S) action indices; -1 where never reached
    values: np.ndarray  # (K, S) expected value-to-go given the observation
    mode: str
    exact: bool


def augment(ssdp: Ssdp, features: str | list[str] | tuple[str, ...]) -> Ssdp:
    """
    Fold hidden features into the observation.

    Raises:
        UnboundedOutcomeError: If a feature is non-finite or takes too many values
    """
    if isinstance(features, str):
        features = [features]
    for name in features:
        if name not in ssdp.world.features:
            raise ConfigurationError(f"unknown feature {name}")
        values = ssdp.world.features[name]
        if not np.all(np.isfinite(values)):
            raise UnboundedOutcomeError(f"feature {name} has non-finite outcomes")
        n_outcomes = np.unique(values).size
        if n_outcomes > settings.oracle_max_outcomes:
            raise UnboundedOutcomeError(
                f"feature {name} takes {n_outcomes} values; at most "
                f"{settings.oracle_max_outcomes} are supported"
            )
    added = tuple(name for name in features if name not in ssdp.observed)
    return Ssdp(world=ssdp.world, observed=ssdp.observed + added)


def _one_hot(index: np.ndarray, width: int) -> sparse.csr_matrix:
    n = index.size
    return sparse.csr_matrix((np.ones(n), (np.arange(n), index)), shape=(n, width))


def _group_mean(values: np.ndarray, groups: np.ndarray, weights: np.ndarray, n_groups: int) -> np.ndarray:
    """Weighted mean of the rows of `values` (Z, A) within each group."""
    total = np.zeros((n_groups, values.shape[1]))
    np.add.at(total, groups, values * weights[:, None])
    mass = np.bincount(groups, weights=weights, minlength=n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        return total / mass[:, None]


def _representatives(observation: np.ndarray, n_observations: int) -> np.ndarray:
    """Smallest joint index of every observation."""
    _, first = np.unique(observation, return_index=True)
    if first.size != n_observations:
        raise ConfigurationError("observation indices must cover 0..S-1")
    return first


def observation_kernel(ssdp: Ssdp) -> sparse.csr_matrix:
    """Probability of the next observation given (z, a), shape (Z*A, S)."""
    return ssdp.world.kernel @ _one_hot(ssdp.observation, ssdp.n_observations)


def is_observation_markov(ssdp: Ssdp) -> bool:
    """Hidden features influence neither the observed transition nor the reward."""
    world = ssdp.world
    obs = ssdp.observation
    rep = _representatives(obs, ssdp.n_observations)[obs]
    if not np.allclose(world.reward, world.reward[rep], rtol=0, atol=STRUCTURE_TOLERANCE):
        return False
    p_obs = observation_kernel(ssdp)
    rows = (rep[:, None] * world.n_actions + np.arange(world.n_actions)).ravel()
    difference = p_obs - p_obs[rows]
    return difference.nnz == 0 or float(abs(difference).max()) <= STRUCTURE_TOLERANCE


def stationary_belief(ssdp: Ssdp) -> np.ndarray | None:
    """
    Return q(z | s) if the hidden part is redrawn from a fixed conditional.

    The check is T(z' | z, a) = P(s' | z, a) q(z' | s') on every reachable
    successor, with the same q describing the initial distribution. Returns None
    when the structure does not hold.
    """
    world = ssdp.world
    obs = ssdp.observation
    n_obs = ssdp.n_observations

    column_mass = np.asarray(world.kernel.sum(axis=0)).ravel()
    obs_mass = np.bincount(obs, weights=column_mass, minlength=n_obs)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(obs_mass[obs] > 0, column_mass / obs_mass[obs], 0.0)

    p_obs = observation_kernel(ssdp).tocsr()
    kernel = world.kernel.tocoo()
    predicted = np.asarray(p_obs[kernel.row, obs[kernel.col]]).ravel() * q[kernel.col]
    if not np.allclose(kernel.data, predicted, rtol=0, atol=NORMALIZATION_TOLERANCE):
        return None

    initial_mass = np.bincount(obs, weights=world.initial, minlength=n_obs)
    with np.errstate(invalid="ignore", divide="ignore"):
        q0 = np.where(initial_mass[obs] > 0, world.initial / initial_mass[obs], 0.0)
    # Observations never reached after step 0 keep the initial conditional.
    unreached = obs_mass[obs] == 0
    q = np.where(unreached, q0, q)
    consistent = (initial_mass[obs] == 0) | (obs_mass[obs] == 0) | np.isclose(q0, q, atol=NORMALIZATION_TOLERANCE)
    if not consistent.all():
        return None
    return q


def _backward(
    world: World, stage_reward, stage_expect, n_rows: int
) -> tuple[np.ndarray, np.ndarray]:
    values = np.zeros((world.horizon + 1, n_rows))
    policy = np.zeros((world.horizon, n_rows), dtype=np.int64)
    for k in range(world.horizon - 1, -1, -1):
        q = stage_reward + stage_expect(values[k + 1])
        policy[k] = q.argmax(axis=1)
        values[k] = q.max(axis=1)
    return values[:-1], policy


def _solve_mdp(ssdp: Ssdp) -> Solution:
    world = ssdp.world
    obs = ssdp.observation
    values, policy = _backward(world, world.reward, world.expect, world.n_states)
    order = _representatives(obs, ssdp.n_observations)
    j_star = float(world.initial @ values[0])
    return Solution(j_star, policy[:, order], values[:, order], "mdp", True)


def _solve_on_observations(ssdp: Ssdp, belief_next: np.ndarray, belief_initial: np.ndarray, mode: str) -> Solution:
    """Backward induction over observations where z | s follows a known conditional."""
    world = ssdp.world
    obs = ssdp.observation
    n_obs = ssdp.n_observations
    lift = _one_hot(obs, n_obs)

    def averaged(table: np.ndarray, belief: np.ndarray) -> np.ndarray:
        totals = np.zeros((n_obs, table.shape[1]))
        np.add.at(totals, obs, table * belief[:, None])
        return totals

    values = np.zeros((world.horizon + 1, n_obs))
    policy = np.zeros((world.horizon, n_obs), dtype=np.int64)
    for k in range(world.horizon - 1, -1, -1):
        belief = belief_initial if k == 0 else belief_next
        q_joint = world.reward + world.expect(lift @ values[k + 1])
        q_obs = averaged(q_joint, belief)
        policy[k] = q_obs.argmax(axis=1)
        values[k] = q_obs.max(axis=1)

    initial_obs = np.bincount(obs, weights=world.initial, minlength=n_obs)
    return Solution(float(initial_obs @ values[0]), policy, values[:-1], mode, True)


def evaluate_policy(ssdp: Ssdp, policy: np.ndarray) -> float:
    """Expected return of an observation-measurable policy table (K, S)."""
    world = ssdp.world
    obs = ssdp.observation
    values = np.zeros(world.n_states)
    rows = np.arange(world.n_states)
    for k in range(world.horizon - 1, -1, -1):
        actions = policy[k][obs]
        values = world.reward[rows, actions] + world.expect(values)[rows, actions]
    return float(world.initial @ values)


def _forward_occupancy(world: World, obs: np.ndarray, policy_k: np.ndarray, d: np.ndarray) -> np.ndarray:
    actions = policy_k[obs]
    pair_mass = sparse.csr_matrix(
        (d, (np.arange(world.n_states), np.arange(world.n_states) * world.n_actions + actions)),
        shape=(world.n_states, world.n_states * world.n_actions),
    )
    return np.asarray((pair_mass @ world.kernel).sum(axis=0)).ravel()


def _solve_memoryless_enumeration(ssdp: Ssdp) -> Solution:
    world = ssdp.world
    n_obs = ssdp.n_observations
    best_value, best_policy = -np.inf, None
    for table in itertools.product(range(world.n_actions), repeat=n_obs * world.horizon):
        policy = np.array(table, dtype=np.int64).reshape(world.horizon, n_obs)
        value = evaluate_policy(ssdp, policy)
        if value > best_value + STRUCTURE_TOLERANCE:
            best_value, best_policy = value, policy
    values = _memoryless_values(ssdp, best_policy)
    return Solution(best_value, best_policy, values, "memoryless-enumeration", True)


def _memoryless_values(ssdp: Ssdp, policy: np.ndarray) -> np.ndarray:
    """Occupancy-weighted value-to-go per observation; NaN where unreachable."""
    world = ssdp.world
    obs = ssdp.observation
    rows = np.arange(world.n_states)
    joint = np.zeros((world.horizon + 1, world.n_states))
    for k in range(world.horizon - 1, -1, -1):
        actions = policy[k][obs]
        joint[k] = world.reward[rows, actions] + world.expect(joint[k + 1])[rows, actions]

    values = np.full((world.horizon, ssdp.n_observations), np.nan)
    d = world.initial.copy()
    for k in range(world.horizon):
        mass = np.bincount(obs, weights=d, minlength=ssdp.n_observations)
        weighted = np.bincount(obs, weights=d * joint[k], minlength=ssdp.n_observations)
        reached = mass > 0
        values[k, reached] = weighted[reached] / mass[reached]
        d = _forward_occupancy(world, obs, policy[k], d)
    return values


def _solve_memoryless_ascent(ssdp: Ssdp, max_sweeps: int) -> Solution:
    """
    Coordinate ascent over stage policies.

    Each stage update maximizes the exact return with the other stages held
    fixed, so the return never decreases and the result is a lower bound on
    the optimum over observation-measurable policies.
    """
    world = ssdp.world
    obs = ssdp.observation
    n_obs = ssdp.n_observations
    rows = np.arange(world.n_states)
    uniform = np.ones(world.n_states)

    # Start from the fully observed optimum averaged within each observation.
    full_values, _ = _backward(world, world.reward, world.expect, world.n_states)
    policy = np.zeros((world.horizon, n_obs), dtype=np.int64)
    for k in range(world.horizon):
        next_values = full_values[k + 1] if k + 1 < world.horizon else np.zeros(world.n_states)
        q = world.reward + world.expect(next_values)
        policy[k] = np.nan_to_num(_group_mean(q, obs, uniform, n_obs), nan=0.0).argmax(axis=1)

    value = evaluate_policy(ssdp, policy)
    for sweep in range(max_sweeps):
        # Values of the current tail policies, computed before the forward pass.
        tail = np.zeros((world.horizon + 1, world.n_states))
        for k in range(world.horizon - 1, -1, -1):
            actions = policy[k][obs]
            tail[k] = world.reward[rows, actions] + world.expect(tail[k + 1])[rows, actions]

        changed = False
        d = world.initial.copy()
        for k in range(world.horizon):
            q = world.reward + world.expect(tail[k + 1])
            totals = np.zeros((n_obs, world.n_actions))
            np.add.at(totals, obs, q * d[:, None])
            current = totals[np.arange(n_obs), policy[k]]
            best = totals.argmax(axis=1)
            improve = totals[np.arange(n_obs), best] > current + STRUCTURE_TOLERANCE
            if improve.any():
                policy[k] = np.where(improve, best, policy[k])
                changed = True
            d = _forward_occupancy(world, obs, policy[k], d)

        new_value = evaluate_policy(ssdp, policy)
        logger.debug("memoryless ascent sweep %d: %.12f", sweep, new_value)
        value = new_value
        if not changed:
            break

    logger.warning(
        "observation-measurable optimum of %s approximated by coordinate ascent (lower bound)",
        ",".join(ssdp.observed) or "<nothing>",
    )
    return Solution(value, policy, _memoryless_values(ssdp, policy), "memoryless-ascent", False)


def _observation_slots(ssdp: Ssdp) -> tuple[np.ndarray, np.ndarray]:
    """Joint states of every observation padded with -1, and each joint state's slot."""
    obs = ssdp.observation
    n_states = ssdp.world.n_states
    counts = np.bincount(obs, minlength=ssdp.n_observations)
    order = np.argsort(obs, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.empty(n_states, dtype=np.int64)
    slot[order] = np.arange(n_states) - starts[obs[order]]
    members = np.full((ssdp.n_observations, counts.max()), -1, dtype=np.int64)
    members[obs, slot] = np.arange(n_states)
    return members, slot


@dataclass
class _BeliefLayer:
    """Information states reachable at one step and the edges leaving them."""

    obs: np.ndarray  # (N,) observation index
    belief: np.ndarray  # (N, H) distribution over the observation's joint states
    parent: np.ndarray | None = None  # edges: (E,) node, action, child node, probability
    action: np.ndarray | None = None
    child: np.ndarray | None = None
    mass: np.ndarray | None = None


def _joint_belief(layer: _BeliefLayer, members: np.ndarray, n_states: int) -> sparse.csr_matrix:
    rows, slots = np.nonzero(layer.belief)
    cols = members[layer.obs[rows], slots]
    return sparse.csr_matrix((layer.belief[rows, slots], (rows, cols)), shape=(layer.obs.size, n_states))


def _expand(ssdp: Ssdp, layer: _BeliefLayer, members: np.ndarray, slot: np.ndarray) -> _BeliefLayer:
    """Bayes-update every (information state, action, next observation) and merge duplicates."""
    world = ssdp.world
    obs, n_obs = ssdp.observation, ssdp.n_observations
    joint = _joint_belief(layer, members, world.n_states)

    parents, actions, child_obs, beliefs, masses = [], [], [], [], []
    for a in range(world.n_actions):
        kernel_a = world.kernel[np.arange(world.n_states) * world.n_actions + a]
        nxt = (joint @ kernel_a).tocoo()
        nxt.sum_duplicates()
        keep = nxt.data > 0
        row, col, data = nxt.row[keep].astype(np.int64), nxt.col[keep], nxt.data[keep]
        pairs, inverse = np.unique(row * n_obs + obs[col], return_inverse=True)
        mass = np.bincount(inverse, weights=data, minlength=pairs.size)
        belief = np.zeros((pairs.size, members.shape[1]))
        belief[inverse, slot[col]] = data / mass[inverse]
        parents.append(pairs // n_obs)
        actions.append(np.full(pairs.size, a, dtype=np.int64))
        child_obs.append(pairs % n_obs)
        beliefs.append(belief)
        masses.append(mass)

    child_obs = np.concatenate(child_obs)
    beliefs = np.concatenate(beliefs)
    keys = np.column_stack([child_obs, np.round(beliefs, BELIEF_DECIMALS)])
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    layer.parent = np.concatenate(parents)
    layer.action = np.concatenate(actions)
    layer.child = inverse.reshape(-1)
    layer.mass = np.concatenate(masses)
    return _BeliefLayer(obs=child_obs[first], belief=beliefs[first])


def _solve_belief_mdp(ssdp: Ssdp, max_nodes: int) -> Solution:
    """
    Backward induction over reachable information states (observation, belief).

    The belief is the posterior over the joint states behind the current
    observation given the observation and action history. The result is the
    optimum over history-dependent policies, which is never below the optimum
    over policies of the current observation alone.

    Raises:
        UnboundedOutcomeError: If a step reaches more than `max_nodes` information states
    """
    world = ssdp.world
    obs, n_obs = ssdp.observation, ssdp.n_observations
    members, slot = _observation_slots(ssdp)

    start_mass = np.bincount(obs, weights=world.initial, minlength=n_obs)
    reached = np.flatnonzero(start_mass > 0)
    row_of = np.full(n_obs, -1, dtype=np.int64)
    row_of[reached] = np.arange(reached.size)
    states = np.flatnonzero(world.initial > 0)
    belief = np.zeros((reached.size, members.shape[1]))
    belief[row_of[obs[states]], slot[states]] = world.initial[states] / start_mass[obs[states]]
    layers = [_BeliefLayer(obs=reached, belief=belief)]

    for k in range(world.horizon - 1):
        layers.append(_expand(ssdp, layers[-1], members, slot))
        n_nodes = layers[-1].obs.size
        logger.debug("belief layer %d: %d information states", k + 1, n_nodes)
        if n_nodes > max_nodes:
            raise UnboundedOutcomeError(
                f"step {k + 1} reaches {n_nodes} information states; at most {max_nodes} are supported",
                nodes=n_nodes,
            )

    node_values: list[np.ndarray] = [np.zeros(0)] * world.horizon
    node_policy: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * world.horizon
    following = None
    for k in range(world.horizon - 1, -1, -1):
        layer = layers[k]
        q = _joint_belief(layer, members, world.n_states) @ world.reward
        if following is not None:
            np.add.at(q, (layer.parent, layer.action), layer.mass * following[layer.child])
        node_policy[k] = q.argmax(axis=1)
        node_values[k] = q.max(axis=1)
        following = node_values[k]

    # Reach probabilities under the optimal policy summarize it per observation.
    policy = np.full((world.horizon, n_obs), -1, dtype=np.int64)
    values = np.full((world.horizon, n_obs), np.nan)
    reach = start_mass[reached]
    for k, layer in enumerate(layers):
        mass = np.bincount(layer.obs, weights=reach, minlength=n_obs)
        weighted = np.bincount(layer.obs, weights=reach * node_values[k], minlength=n_obs)
        seen = mass > 0
        values[k, seen] = weighted[seen] / mass[seen]
        likeliest = np.lexsort((-reach, layer.obs))
        heads = likeliest[np.r_[True, layer.obs[likeliest][1:] != layer.obs[likeliest][:-1]]]
        policy[k, layer.obs[heads]] = node_policy[k][heads]
        if k + 1 < len(layers):
            taken = layer.action == node_policy[k][layer.parent]
            reach = np.bincount(
                layer.child[taken],
                weights=reach[layer.parent[taken]] * layer.mass[taken],
                minlength=layers[k + 1].obs.size,
            )

    j_star = float(start_mass[reached] @ node_values[0])
    return Solution(j_star, policy, values, "belief-mdp", True)


def select_mode(ssdp: Ssdp, enumeration_limit: int = settings.oracle_enumeration_limit) -> str:
    """Choose the cheapest exact solver the SSDP's structure allows."""
    world = ssdp.world
    if ssdp.n_observations == world.n_states:
        return "mdp"
    if is_observation_markov(ssdp):
        return "observation-markov"
    if stationary_belief(ssdp) is not None:
        return "belief-stationary"
    exponent = ssdp.n_observations * world.horizon
    if exponent * np.log(world.n_actions) <= np.log(enumeration_limit):
        return "memoryless-enumeration"
    return "belief-mdp"


def solve(
    ssdp: Ssdp,
    mode: str | None = None,
    enumeration_limit: int = settings.oracle_enumeration_limit,
    max_sweeps: int = settings.oracle_max_sweeps,
    max_nodes: int = settings.oracle_max_belief_nodes,
) -> Solution:
    """
    Optimal expected return over policies a_k = mu_k(s_k) of the observation.

    When no memoryless solver is exact and enumeration is out of reach, the
    belief-mdp mode returns the optimum over policies of the observation
    history, an upper bound on the memoryless optimum.

    Args:
        ssdp: World plus observed features
        mode: Force a solver mode; selected from the structure when None
        enumeration_limit: Largest number of policy tables to enumerate
        max_sweeps: Sweep budget of coordinate ascent, which only runs when forced
        max_nodes: Largest number of information states per step in belief-mdp mode

    Returns:
        Solution with J*, the policy table and values per (step, observation)
    """
    mode = mode or select_mode(ssdp, enumeration_limit)
    if mode not in SOLVER_MODES:
        raise ConfigurationError(f"unknown solver mode {mode}; choose from {SOLVER_MODES}")
    logger.debug("solving %s with %s", ssdp.observed, mode)

    world = ssdp.world
    obs = ssdp.observation
    if mode == "mdp":
        if ssdp.n_observations != world.n_states:
            raise ConfigurationError("mdp mode needs an injective observation")
        return _solve_mdp(ssdp)
    if mode == "observation-markov":
        # Any belief gives the same answer; use the initial conditional where defined.
        mass = np.bincount(obs, weights=world.initial, minlength=ssdp.n_observations)
        uniform = 1.0 / np.bincount(obs, minlength=ssdp.n_observations)[obs]
        with np.errstate(invalid="ignore", divide="ignore"):
            belief = np.where(mass[obs] > 0, world.initial / mass[obs], uniform)
        return _solve_on_observations(ssdp, uniform, belief, mode)
    if mode == "belief-stationary":
        q = stationary_belief(ssdp)
        if q is None:
            raise ConfigurationError("hidden features are not redrawn from a fixed conditional")
        mass = np.bincount(obs, weights=world.initial, minlength=ssdp.n_observations)
        with np.errstate(invalid="ignore", divide="ignore"):
            q0 = np.where(mass[obs] > 0, world.initial / mass[obs], q)
        return _solve_on_observations(ssdp, q, q0, mode)
    if mode == "memoryless-enumeration":
        return _solve_memoryless_enumeration(ssdp)
    if mode == "belief-mdp":
        return _solve_belief_mdp(ssdp, max_nodes)
    return _solve_memoryless_ascent(ssdp, max_sweeps)


def open_loop_optimum(world: World, start: int) -> float:
    """Best return over action sequences from a start state of a deterministic world."""
    if not np.all(world.prob.max(axis=2) > 1 - NORMALIZATION_TOLERANCE):
        raise ConfigurationError("open-loop enumeration needs a deterministic world")
    successor = world.next_index[np.arange(world.n_states)[:, None], np.arange(world.n_actions), world.prob.argmax(axis=2)]
    best = -np.inf
    for actions in itertools.product(range(world.n_actions), repeat=world.horizon):
        z, total = start, 0.0
        for a in actions:
            total += world.reward[z, a]
            z = successor[z, a]
        best = max(best, total)
    return float(best)


def terminal_jensen_gap(ssdp: Ssdp) -> float:
    """
    Smallest per-observation gap E[max_a R] - max_a E[R] at the last step.

    The expectation is over the initial conditional of the hidden part; the
    gap is non-negative for every observation.
    """
    world = ssdp.world
    obs = ssdp.observation
    mass = np.bincount(obs, weights=world.initial, minlength=ssdp.n_observations)
    reached = mass > 0
    belief = np.where(mass[obs] > 0, world.initial / np.where(mass[obs] > 0, mass[obs], 1.0), 0.0)
    expected_max = np.bincount(obs, weights=belief * world.reward.max(axis=1), minlength=ssdp.n_observations)
    totals = np.zeros((ssdp.n_observations, world.n_actions))
    np.add.at(totals, obs, world.reward * belief[:, None])
    gap = expected_max - totals.max(axis=1)
    return float(gap[reached].min())
