"""Discretized worlds and randomized instance families for the DP oracle."""

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, InexactSolutionError
from app.services.dynamics import follower_step_arrays, leader_step_arrays
from app.services.exogenous import discretize_gaussian
from app.services.oracle import Ssdp, World, augment, solve, terminal_jensen_gap

logger = logging.getLogger(__name__)

FAMILIES = (
    "markov_hidden",
    "redrawn_hidden",
    "irrelevant_hidden",
    "pred_acceleration",
    "pred_control",
    "vehicles_ahead",
    "vehicles_behind",
    "jensen",
)
EQUALITY_FAMILIES = {"irrelevant_hidden", "vehicles_behind"}
EQUALITY_TOLERANCE = 1e-9
STRICT_GAIN = 0.01

# Families whose poorer problem is solved on a belief MDP run on coarser grids.
BELIEF_GRID_LIMITS = {
    "pred_acceleration": {"error_levels": 7, "acc_levels": 5, "action_levels": 5, "horizon": 3},
    "vehicles_ahead": {"error_levels": 3, "acc_levels": 3, "action_levels": 3, "horizon": 3},
}

OWN = ("e_p", "e_v", "acc")
FOLLOWING_OBSERVATIONS = {
    "P1": OWN,
    "P2": OWN + ("acc_pred",),
    "P3": OWN + ("acc_pred", "u_pred"),
}
PLATOON_OBSERVATIONS = {
    "P4": OWN + ("acc_1", "u_1"),
    "P5": OWN + ("acc_1", "u_1", "e_p_1", "e_v_1", "acc_0", "u_0"),
    "P6": OWN + ("acc_1", "u_1", "e_p_1", "e_v_1", "acc_0", "u_0", "e_p_3", "e_v_3", "acc_3"),
}


@dataclass(frozen=True)
class GridSpec:
    """Discretization shared by every problem compared on one world."""

    error_levels: int = 13
    acc_levels: int = 7
    action_levels: int = 7
    error_range: float = 3.0
    acc_range: float = settings.acc_max
    u_max: float = settings.u_max
    dt: float = 0.5
    horizon: int = 5
    alpha: float = settings.reward_alpha
    beta: float = settings.reward_beta

    def __post_init__(self):
        if min(self.error_levels, self.acc_levels, self.action_levels) < 1:
            raise ConfigurationError("grid level counts must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")

    @property
    def errors(self) -> np.ndarray:
        return np.linspace(-self.error_range, self.error_range, self.error_levels)

    @property
    def accelerations(self) -> np.ndarray:
        return np.linspace(-self.acc_range, self.acc_range, self.acc_levels)

    @property
    def actions(self) -> np.ndarray:
        return np.linspace(-self.u_max, self.u_max, self.action_levels)


def snap(values, grid: np.ndarray) -> np.ndarray:
    """Index of the nearest grid level of every value."""
    midpoints = (grid[1:] + grid[:-1]) / 2
    return np.digitize(values, midpoints)


def _quadratic_reward(e_p: np.ndarray, e_v: np.ndarray, actions: np.ndarray, grid: GridSpec) -> np.ndarray:
    return -(e_p[:, None] ** 2 + grid.alpha * e_v[:, None] ** 2 + grid.beta * actions[None, :] ** 2)


def following_world(
    grid: GridSpec = GridSpec(),
    exo_std: float = settings.exo_std,
    follower_tau: float = settings.follower_tau,
    leader_tau: float = settings.leader_tau,
    time_gap: float = settings.time_gap,
    initial: np.ndarray | None = None,
) -> World:
    """
    Vehicle-following world over z = (e_p, e_v, acc, acc_pred, u_pred).

    The predecessor input u_pred is redrawn every step from a three-point
    approximation of the clipped Gaussian, independently of everything else.

    Args:
        initial: Distribution over (e_p, e_v, acc, acc_pred) grid cells; the
            start point nearest [2.5, 2.5, 0, 0] when None
    """
    e, acc, actions = grid.errors, grid.accelerations, grid.actions
    u_values, u_probs = discretize_gaussian(0.0, exo_std, -grid.u_max, grid.u_max)
    shape = (e.size, e.size, acc.size, acc.size, u_values.size)
    i_ep, i_ev, i_acc, i_accp, i_up = (ix.ravel() for ix in np.indices(shape))
    n_states, n_actions, n_outcomes = i_ep.size, actions.size, u_values.size

    e_p, e_v, a_own, a_pred, u_pred = e[i_ep], e[i_ev], acc[i_acc], acc[i_accp], u_values[i_up]
    next_accp = snap(
        leader_step_arrays(a_pred, u_pred, leader_tau, grid.dt, -grid.acc_range, grid.acc_range), acc
    )

    ep_next, ev_next, acc_next = follower_step_arrays(
        e_p[:, None], e_v[:, None], a_own[:, None], actions[None, :], a_pred[:, None],
        follower_tau, time_gap, grid.dt, -grid.acc_range, grid.acc_range,
    )
    cells = np.ravel_multi_index(
        (snap(ep_next, e), snap(ev_next, e), snap(acc_next, acc), np.broadcast_to(next_accp[:, None], (n_states, n_actions))),
        shape[:4],
    )
    next_index = cells[:, :, None] * n_outcomes + np.arange(n_outcomes)[None, None, :]
    prob = np.broadcast_to(u_probs, (n_states, n_actions, n_outcomes)).copy()

    if initial is None:
        initial = np.zeros(shape[:4])
        start = (snap(2.5, e), snap(2.5, e), snap(0.0, acc), snap(0.0, acc))
        initial[start] = 1.0
    initial = np.asarray(initial, dtype=np.float64).reshape(-1)
    if initial.size != np.prod(shape[:4]):
        raise ConfigurationError("initial distribution must cover the (e_p, e_v, acc, acc_pred) grid")
    initial = (initial[:, None] * u_probs[None, :]).ravel()

    return World(
        next_index=next_index,
        prob=prob,
        reward=_quadratic_reward(e_p, e_v, actions, grid),
        initial=initial,
        horizon=grid.horizon,
        features={"e_p": e_p, "e_v": e_v, "acc": a_own, "acc_pred": a_pred, "u_pred": u_pred},
        action_values=actions,
    )


@dataclass(frozen=True)
class LinearController:
    """u = gains . features, clipped and snapped onto the action grid."""

    gains: tuple[float, ...]

    def __call__(self, grid: GridSpec, *features: np.ndarray) -> np.ndarray:
        if len(features) != len(self.gains):
            raise ConfigurationError(f"expected {len(self.gains)} features, got {len(features)}")
        raw = sum(g * f for g, f in zip(self.gains, features))
        actions = grid.actions
        return actions[snap(np.clip(raw, -grid.u_max, grid.u_max), actions)]


def random_controller(rng: np.random.Generator, n_features: int) -> LinearController:
    """Stabilizing-signed gains on (e_p, e_v, acc) plus feed-forward terms."""
    gains = [rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0), rng.uniform(-0.5, 0.0)]
    gains += list(rng.uniform(0.0, 1.0, size=n_features - 3))
    return LinearController(tuple(float(g) for g in gains))


def platoon_world(
    grid: GridSpec,
    predecessor: LinearController,
    follower: LinearController | None = None,
    exo_std: float = settings.exo_std,
    taus: Sequence[float] = (settings.leader_tau, 0.5, 0.25, 0.2),
    time_gap: float = settings.time_gap,
    initial: np.ndarray | None = None,
) -> World:
    """
    Platoon world with ego vehicle 2.

    The joint state is (acc_0, u_0, x_1, x_2) and, when a follower controller is
    given, x_3 as well. Vehicle 1 acts on (x_1, acc_0, u_0) and vehicle 3 on
    (x_3, acc_2); neither reads the ego's decision.
    """
    e, acc, actions = grid.errors, grid.accelerations, grid.actions
    u_values, u_probs = discretize_gaussian(0.0, exo_std, -grid.u_max, grid.u_max)
    n_vehicles = 4 if follower is not None else 3
    if len(taus) < n_vehicles:
        raise ConfigurationError(f"need {n_vehicles} time constants, got {len(taus)}")

    shape = (acc.size, u_values.size) + (e.size, e.size, acc.size) * (n_vehicles - 1)
    idx = [ix.ravel() for ix in np.indices(shape)]
    n_states, n_actions, n_outcomes = idx[0].size, actions.size, u_values.size

    acc0, u0 = acc[idx[0]], u_values[idx[1]]
    x = {j: (e[idx[3 * j - 1]], e[idx[3 * j]], acc[idx[3 * j + 1]]) for j in range(1, n_vehicles)}
    u1 = predecessor(grid, *x[1], acc0, u0)

    acc0_next = leader_step_arrays(acc0, u0, taus[0], grid.dt, -grid.acc_range, grid.acc_range)
    x1_next = follower_step_arrays(*x[1], u1, acc0, taus[1], time_gap, grid.dt, -grid.acc_range, grid.acc_range)
    x2_next = follower_step_arrays(
        x[2][0][:, None], x[2][1][:, None], x[2][2][:, None], actions[None, :], x[1][2][:, None],
        taus[2], time_gap, grid.dt, -grid.acc_range, grid.acc_range,
    )

    def cell(values, levels, broadcast=True):
        index = snap(values, levels)
        return np.broadcast_to(index[:, None], (n_states, n_actions)) if broadcast else index

    parts = [
        cell(acc0_next, acc),
        None,  # next u_0 is the outcome
        cell(x1_next[0], e), cell(x1_next[1], e), cell(x1_next[2], acc),
        snap(x2_next[0], e), snap(x2_next[1], e), snap(x2_next[2], acc),
    ]
    features = {
        "e_p": x[2][0], "e_v": x[2][1], "acc": x[2][2],
        "acc_0": acc0, "u_0": u0,
        "e_p_1": x[1][0], "e_v_1": x[1][1], "acc_1": x[1][2], "u_1": u1,
    }
    if follower is not None:
        u3 = follower(grid, *x[3], x[2][2])
        x3_next = follower_step_arrays(*x[3], u3, x[2][2], taus[3], time_gap, grid.dt, -grid.acc_range, grid.acc_range)
        parts += [cell(x3_next[0], e), cell(x3_next[1], e), cell(x3_next[2], acc)]
        features.update({"e_p_3": x[3][0], "e_v_3": x[3][1], "acc_3": x[3][2]})

    next_index = np.empty((n_states, n_actions, n_outcomes), dtype=np.int64)
    for m in range(n_outcomes):
        parts[1] = np.full((n_states, n_actions), m)
        next_index[:, :, m] = np.ravel_multi_index(tuple(parts), shape)
    prob = np.broadcast_to(u_probs, (n_states, n_actions, n_outcomes)).copy()

    if initial is None:
        start = [snap(0.0, acc), 0] + [snap(1.5, e), snap(-1.0, e), snap(0.0, acc)] * (n_vehicles - 1)
        initial = np.zeros(shape)
        for m, p in enumerate(u_probs):
            start[1] = m
            initial[tuple(start)] = p
    initial = np.asarray(initial, dtype=np.float64).reshape(-1)

    return World(
        next_index=next_index,
        prob=prob,
        reward=_quadratic_reward(x[2][0], x[2][1], actions, grid),
        initial=initial,
        horizon=grid.horizon,
        features=features,
        action_values=actions,
    )


def product_world(
    rng: np.random.Generator,
    structure: str,
    n_observed: int = 3,
    n_hidden: int = 2,
    n_actions: int = 2,
    horizon: int = 3,
) -> World:
    """
    Random world over z = (s, w) with the exogenous structure of one theorem.

    structure:
        "markov_hidden": w' depends on (s, w); s' depends on (s, w, a)
        "redrawn_hidden": w' depends on s' only; s' depends on (s, w, a)
        "irrelevant_hidden": w' depends on s' only; neither s' nor the reward reads w
    """
    if structure not in ("markov_hidden", "redrawn_hidden", "irrelevant_hidden"):
        raise ConfigurationError(f"unknown structure {structure}")
    n_s, n_w, n_a = n_observed, n_hidden, n_actions
    s_idx, w_idx = np.divmod(np.arange(n_s * n_w), n_w)

    if structure == "irrelevant_hidden":
        p_s = rng.dirichlet(np.ones(n_s), size=(n_s, n_a))[s_idx]
        reward = rng.normal(size=(n_s, n_a))[s_idx]
    else:
        p_s = rng.dirichlet(np.ones(n_s), size=(n_s, n_w, n_a))[s_idx, w_idx]
        reward = rng.normal(size=(n_s, n_w, n_a))[s_idx, w_idx]

    if structure == "markov_hidden":
        p_w = rng.dirichlet(np.ones(n_w), size=(n_s, n_w))[s_idx, w_idx]  # (Z, W)
        prob = p_s[:, :, :, None] * p_w[:, None, None, :]
        initial = rng.dirichlet(np.ones(n_s * n_w))
    else:
        q = rng.dirichlet(np.ones(n_w), size=n_s)  # q[s', w']
        prob = p_s[:, :, :, None] * q[None, None, :, :]
        initial = (rng.dirichlet(np.ones(n_s))[:, None] * q).ravel()

    outcomes = np.arange(n_s * n_w)
    next_index = np.broadcast_to(outcomes, (n_s * n_w, n_a, n_s * n_w)).copy()
    return World(
        next_index=next_index,
        prob=prob.reshape(n_s * n_w, n_a, n_s * n_w),
        reward=reward,
        initial=initial,
        horizon=horizon,
        features={"s": s_idx.astype(np.float64), "w": w_idx.astype(np.float64)},
    )


def toy_world(horizon: int = 3, exo_std: float = settings.exo_std) -> World:
    """Coarse following world used to check the trainer against the oracle."""
    grid = GridSpec(error_levels=7, acc_levels=5, action_levels=9, dt=0.5, horizon=horizon)
    return following_world(grid, exo_std=exo_std)


@dataclass
class TheoremCheck:
    """Outcome of one family of randomized ordering checks."""

    family: str
    instances: int
    violations: int
    max_gap: float
    min_gap: float
    strict_witness: bool | None = None
    gaps: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.strict_witness is not False


def capped_grid(grid: GridSpec, family: str) -> GridSpec:
    """The grid a family is checked on, coarsened where a belief MDP is solved."""
    limits = BELIEF_GRID_LIMITS.get(family, {})
    return replace(grid, **{name: min(getattr(grid, name), cap) for name, cap in limits.items()})


def exact_j_star(ssdp: Ssdp) -> float:
    """
    J* of an SSDP, refusing bounds.

    Raises:
        InexactSolutionError: If the selected solver only bounds the optimum
    """
    solution = solve(ssdp)
    if not solution.exact:
        raise InexactSolutionError(f"{solution.mode} only bounds J* of {ssdp.observed}", mode=solution.mode)
    return solution.j_star


def _ordering_gap(base: Ssdp, added: Sequence[str]) -> float:
    return exact_j_star(augment(base, list(added))) - exact_j_star(base)


def _instance_gap(family: str, seed_seq: np.random.SeedSequence, grid: GridSpec) -> float:
    """J*(richer observation) - J*(poorer observation) for one random instance."""
    rng = np.random.Generator(np.random.PCG64(seed_seq))

    if family in ("markov_hidden", "redrawn_hidden", "irrelevant_hidden", "jensen"):
        structure = "markov_hidden" if family == "jensen" else family
        world = product_world(rng, structure)
        base = Ssdp(world, ("s",))
        if family == "jensen":
            return terminal_jensen_gap(base)
        return _ordering_gap(base, ["w"])

    if family in ("pred_acceleration", "pred_control"):
        grid = capped_grid(grid, family)
        shape = (grid.error_levels, grid.error_levels, grid.acc_levels, grid.acc_levels)
        initial = rng.dirichlet(np.full(int(np.prod(shape)), 0.5))
        world = following_world(
            grid,
            exo_std=float(rng.uniform(0.3, 1.5)),
            follower_tau=float(rng.uniform(0.2, 0.6)),
            initial=initial,
        )
        poorer, richer = ("P1", "P2") if family == "pred_acceleration" else ("P2", "P3")
        base = Ssdp(world, FOLLOWING_OBSERVATIONS[poorer])
        return _ordering_gap(base, FOLLOWING_OBSERVATIONS[richer][len(FOLLOWING_OBSERVATIONS[poorer]):])

    platoon_grid = capped_grid(
        GridSpec(
            error_levels=3, acc_levels=3, action_levels=5, error_range=grid.error_range,
            dt=grid.dt, horizon=grid.horizon, alpha=grid.alpha, beta=grid.beta,
        ),
        family,
    )
    predecessor = random_controller(rng, 5)
    if family == "vehicles_ahead":
        world = platoon_world(platoon_grid, predecessor, exo_std=float(rng.uniform(0.3, 1.5)))
        world.initial = rng.dirichlet(np.full(world.n_states, 0.5))
        base = Ssdp(world, PLATOON_OBSERVATIONS["P4"])
        return _ordering_gap(base, PLATOON_OBSERVATIONS["P5"][len(PLATOON_OBSERVATIONS["P4"]):])

    if family == "vehicles_behind":
        follower = random_controller(rng, 4)
        world = platoon_world(platoon_grid, predecessor, follower, exo_std=float(rng.uniform(0.3, 1.5)))
        world.initial = rng.dirichlet(np.full(world.n_states, 0.5))
        base = Ssdp(world, PLATOON_OBSERVATIONS["P5"])
        return _ordering_gap(base, PLATOON_OBSERVATIONS["P6"][len(PLATOON_OBSERVATIONS["P5"]):])

    raise ConfigurationError(f"unknown family {family}; choose from {FAMILIES}")


def check_theorems(
    family: str,
    count: int,
    seed: int = 0,
    grid: GridSpec = GridSpec(),
    jobs: int = 1,
) -> TheoremCheck:
    """
    Solve `count` random instances of a family and count ordering violations.

    Ordering families require J*(augmented) >= J*(original) - 1e-9, equality
    families |J*(augmented) - J*(original)| <= 1e-9 and the Jensen family a
    non-negative terminal gap. For redrawn_hidden at least one instance must show a
    strict gain above 0.01.

    Raises:
        InexactSolutionError: If an instance could only be bounded
    """
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown family {family}; choose from {FAMILIES}")
    if count < 1:
        raise ConfigurationError(f"count must be at least 1, got {count}")

    children = np.random.SeedSequence(seed).spawn(count)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            gaps = list(pool.map(lambda child: _instance_gap(family, child, grid), children))
    else:
        gaps = [_instance_gap(family, child, grid) for child in children]

    gaps_array = np.array(gaps)
    if family in EQUALITY_FAMILIES:
        violations = int((np.abs(gaps_array) > EQUALITY_TOLERANCE).sum())
    else:
        violations = int((gaps_array < -EQUALITY_TOLERANCE).sum())
    witness = bool((gaps_array > STRICT_GAIN).any()) if family == "redrawn_hidden" else None

    check = TheoremCheck(
        family=family,
        instances=count,
        violations=violations,
        max_gap=float(gaps_array.max()),
        min_gap=float(gaps_array.min()),
        strict_witness=witness,
        gaps=[float(g) for g in gaps],
    )
    log = logger.info if check.passed else logger.warning
    log("%s: %d instances, %d violations, gap in [%.3e, %.3e]", family, count, violations, check.min_gap, check.max_gap)
    return check
