"""Conditional KL divergence as the value of V2X information sets.

For a target control u_{i-1,k+1}, the estimate at step k is the plug-in value
of E[log p(target | A_k) - log p(target | B_k)] where B is a sub-list of the
variables in A. All variables are quantized onto fixed histogram bins first.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from app.core.config import settings
from app.core.errors import ConditioningMisuseError, ConfigurationError, MissingPolicyError
from app.services.dynamics import VehicleParams
from app.services.exogenous import GaussianInputProcess, episode_seed
from app.services.problems import (
    Controller,
    PlatoonSnapshot,
    ProblemId,
    advance,
    layout_for,
    open_step,
)

logger = logging.getLogger(__name__)

KL_PROBLEMS = ("P4", "PF2", "PLF", "TPF", "TPLF", "P5")


@dataclass(frozen=True)
class QuantizationScheme:
    """Equal-width bins per variable; values outside the range fall in the edge bins."""

    bins: int = settings.kl_bins
    error_range: tuple[float, float] = settings.kl_error_range
    control_range: tuple[float, float] = settings.kl_control_range
    overrides: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigurationError(f"bins must be positive, got {self.bins}")
        for lo, hi in [self.error_range, self.control_range] + [o[1:] for o in self.overrides]:
            if not lo < hi:
                raise ConfigurationError(f"empty quantization range [{lo}, {hi}]")

    def range_for(self, name: str) -> tuple[float, float]:
        for variable, lo, hi in self.overrides:
            if variable == name:
                return lo, hi
        if name.startswith(("e_p", "e_v")):
            return self.error_range
        return self.control_range

    def edges(self, name: str) -> np.ndarray:
        lo, hi = self.range_for(name)
        return np.linspace(lo, hi, self.bins + 1)

    def quantize(self, name: str, values) -> np.ndarray:
        """Bin index in 0..bins-1 of every value."""
        return np.digitize(np.asarray(values, dtype=np.float64), self.edges(name)[1:-1])

    def describe(self) -> dict:
        return {
            "bins": self.bins,
            "error_range": list(self.error_range),
            "control_range": list(self.control_range),
            "overrides": [list(o) for o in self.overrides],
        }


@dataclass
class RolloutDataset:
    """Per-variable arrays of shape (episodes, steps)."""

    values: dict[str, np.ndarray]
    episodes: int
    steps: int

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.values[name]
        except KeyError:
            raise ConfigurationError(f"dataset has no variable {name}") from None

    @classmethod
    def from_arrays(cls, values: Mapping[str, np.ndarray]) -> "RolloutDataset":
        arrays = {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in values.items()}
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1:
            raise ConfigurationError(f"all variables need the same shape, got {shapes}")
        episodes, steps = shapes.pop()
        return cls(values=arrays, episodes=episodes, steps=steps)


@dataclass
class KlEstimate:
    kl: float
    samples: int
    low_confidence: bool


@dataclass
class KlCurve:
    """Per-step estimates for one information set."""

    problem: str
    steps: list[int] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    samples: list[int] = field(default_factory=list)
    low_confidence: list[bool] = field(default_factory=list)
    episodes: int = 0

    def mean(self, start: int = 0) -> float:
        return float(np.mean(self.kl[start:])) if self.kl[start:] else 0.0


def collect_rollouts(
    controllers: Controller,
    vehicle_params: Sequence[VehicleParams],
    leader_process: GaussianInputProcess,
    episodes: int,
    seed: int = 0,
    initial_state: Sequence[float] = tuple(settings.platoon_initial_state),
    horizon: int = settings.horizon,
    dt: float = settings.dt,
) -> RolloutDataset:
    """
    Simulate the vehicles ahead of an ego and record their states and controls.

    `vehicle_params` lists the leader and the predecessors 1..i-1 only; every
    predecessor decides through `controllers`. Records cover steps 0..K so the
    control at step k+1 is available for every k < K.

    Returns:
        Dataset with e_p_j, e_v_j, acc_j, u_j for every vehicle j
    """
    n_vehicles = len(vehicle_params)
    if n_vehicles < 1:
        raise ConfigurationError("need at least the leader")
    if episodes < 1:
        raise ConfigurationError(f"episodes must be positive, got {episodes}")
    if n_vehicles > 1 and controllers is None:
        raise MissingPolicyError("predecessors need controllers")

    steps = horizon + 1
    states = np.zeros((episodes, steps, n_vehicles, 3))
    controls = np.zeros((episodes, steps, n_vehicles))
    for e in range(episodes):
        leader_process.reset(episode_seed(seed, e))
        rows = [[0.0, 0.0, 0.0]] + [list(initial_state)] * (n_vehicles - 1)
        snapshot = PlatoonSnapshot(k=0, states=np.array(rows))
        for k in range(steps):
            open_step(snapshot, leader_process.draw(), n_vehicles, controllers, vehicle_params)
            states[e, k] = snapshot.states
            controls[e, k] = snapshot.controls
            if k < horizon:
                snapshot = advance(snapshot, vehicle_params, dt)

    values = {}
    for j in range(n_vehicles):
        values[f"e_p_{j}"] = states[:, :, j, 0]
        values[f"e_v_{j}"] = states[:, :, j, 1]
        values[f"acc_{j}"] = states[:, :, j, 2]
        values[f"u_{j}"] = controls[:, :, j]
    return RolloutDataset(values=values, episodes=episodes, steps=steps)


def _cell_ids(columns: list[np.ndarray], n: int) -> np.ndarray:
    if not columns:
        return np.zeros(n, dtype=np.int64)
    _, inverse = np.unique(np.column_stack(columns), axis=0, return_inverse=True)
    return inverse.reshape(-1)


def _conditional_log_prob(condition: np.ndarray, target: np.ndarray) -> np.ndarray:
    """log of the empirical p(target_i | condition_i) for every sample."""
    _, joint = np.unique(np.column_stack([condition, target]), axis=0, return_inverse=True)
    joint = joint.reshape(-1)
    joint_counts = np.bincount(joint)[joint]
    condition_counts = np.bincount(condition)[condition]
    return np.log(joint_counts / condition_counts)


def estimate_conditional_kl(
    dataset: RolloutDataset,
    conditioning_a: Sequence[str],
    conditioning_b: Sequence[str],
    target: str,
    scheme: QuantizationScheme,
    step: int,
    min_samples: int = settings.kl_min_samples,
) -> KlEstimate:
    """
    Plug-in estimate of the conditional KL divergence at one step, in nats.

    Args:
        dataset: Rollout records
        conditioning_a: Richer information set
        conditioning_b: Poorer information set, a subset of A
        target: Variable whose value at step+1 is predicted
        scheme: Histogram bins
        step: Step k of the conditioning variables

    Raises:
        ConditioningMisuseError: If B is not a subset of A
    """
    missing = sorted(set(conditioning_b) - set(conditioning_a))
    if missing:
        raise ConditioningMisuseError(f"{missing} are in B but not in A")
    if not 0 <= step < dataset.steps - 1:
        raise ConfigurationError(f"step {step} has no successor in {dataset.steps} recorded steps")

    n = dataset.episodes
    quantized = {name: scheme.quantize(name, dataset[name][:, step]) for name in conditioning_a}
    t = scheme.quantize(target, dataset[target][:, step + 1])
    a_ids = _cell_ids([quantized[name] for name in conditioning_a], n)
    b_ids = _cell_ids([quantized[name] for name in conditioning_b], n)

    log_ratio = _conditional_log_prob(a_ids, t) - _conditional_log_prob(b_ids, t)
    return KlEstimate(kl=float(log_ratio.mean()), samples=n, low_confidence=n < min_samples)


def information_set(
    problem: ProblemId | str,
    ego: int,
    n_vehicles: int | None = None,
    drop_leader_constants: bool = False,
) -> list[str]:
    """V2X variables a problem delivers to the ego."""
    layout = layout_for(problem, ego, n_vehicles, drop_leader_constants)
    return [c.name for c in layout.v2x_components]


def kl_curve(
    dataset: RolloutDataset,
    conditioning_a: Sequence[str],
    conditioning_b: Sequence[str],
    target: str,
    scheme: QuantizationScheme,
    problem: str,
    min_samples: int = settings.kl_min_samples,
) -> KlCurve:
    curve = KlCurve(problem=problem, episodes=dataset.episodes)
    for k in range(dataset.steps - 1):
        estimate = estimate_conditional_kl(
            dataset, conditioning_a, conditioning_b, target, scheme, k, min_samples
        )
        curve.steps.append(k)
        curve.kl.append(estimate.kl)
        curve.samples.append(estimate.samples)
        curve.low_confidence.append(estimate.low_confidence)
    if any(curve.low_confidence):
        logger.warning("%s: KL estimated from %d samples per step (low confidence)", problem, dataset.episodes)
    return curve


def kl_ranking(
    dataset: RolloutDataset,
    ego: int,
    scheme: QuantizationScheme,
    problems: Sequence[str] = KL_PROBLEMS,
    reference: str = "P5",
    min_samples: int = settings.kl_min_samples,
) -> dict[str, KlCurve]:
    """
    KL curve of every information set against the reference set.

    The target is the predecessor's next control u_{ego-1, k+1}.
    """
    richer = information_set(reference, ego)
    target = f"u_{ego - 1}"
    curves = {}
    for problem in problems:
        poorer = information_set(problem, ego)
        curves[problem] = kl_curve(dataset, richer, poorer, target, scheme, problem, min_samples)
        logger.info("%s vs %s: mean KL %.4f nats", problem, reference, curves[problem].mean())
    return curves
