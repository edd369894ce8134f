"""Gaussian models of the uncontrolled control inputs (predecessor or leader)."""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm

from app.core.config import settings
from app.core.errors import ConfigurationError

BIT_GENERATOR = "PCG64"


def make_generator(seed: int) -> np.random.Generator:
    """Create the PCG64 generator used for every random stream in the lab."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class GaussianInputProcess:
    """
    I.i.d. clipped Gaussian control input.

    The process owns its generator; one instance must only be sampled by one
    worker at a time.
    """

    mean: float = settings.exo_mean
    std: float = settings.exo_std
    clip_lo: float = settings.u_min
    clip_hi: float = settings.u_max
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.std < 0 or not math.isfinite(self.std):
            raise ConfigurationError(f"std must be a finite non-negative number, got {self.std}")
        if not self.clip_lo <= self.clip_hi:
            raise ConfigurationError(f"clip range [{self.clip_lo}, {self.clip_hi}] is empty")
        self.reset()

    def reset(self, seed: int | None = None) -> None:
        """Restart the stream, optionally from a new seed."""
        if seed is not None:
            self.seed = seed
        self._rng = make_generator(self.seed)

    def draw(self) -> float:
        """Draw one clipped sample."""
        value = self.mean + self.std * self._rng.standard_normal()
        return float(min(max(value, self.clip_lo), self.clip_hi))

    def draw_many(self, n: int) -> np.ndarray:
        """Draw n consecutive clipped samples as an array."""
        if n < 1:
            raise ConfigurationError(f"n must be at least 1, got {n}")
        raw = self.mean + self.std * self._rng.standard_normal(n)
        return np.clip(raw, self.clip_lo, self.clip_hi)

    def describe(self) -> dict:
        """Metadata written next to every result that depends on this process."""
        return {
            "mean": self.mean,
            "std": self.std,
            "clip": [self.clip_lo, self.clip_hi],
            "seed": self.seed,
            "bit_generator": BIT_GENERATOR,
            "clipping": "clip",
        }


def sample_sequence(proc: GaussianInputProcess, k_steps: int) -> list[float]:
    """
    Draw k_steps consecutive samples from the process stream.

    Args:
        proc: Input process; its generator advances by k_steps draws
        k_steps: Number of samples

    Returns:
        List of clipped samples
    """
    if k_steps < 1:
        raise ConfigurationError(f"k_steps must be at least 1, got {k_steps}")
    return proc.draw_many(k_steps).tolist()


def clipped_normal_moments(mean: float, std: float, lo: float, hi: float) -> tuple[float, float]:
    """
    Closed-form mean and standard deviation of a normal variable clipped to [lo, hi].

    Returns:
        Tuple (mean, std) of the clipped variable
    """
    if std == 0:
        value = min(max(mean, lo), hi)
        return value, 0.0
    a = (lo - mean) / std
    b = (hi - mean) / std
    cdf_a, cdf_b = norm.cdf(a), norm.cdf(b)
    pdf_a, pdf_b = norm.pdf(a), norm.pdf(b)
    inside = cdf_b - cdf_a

    first_inside = mean * inside + std * (pdf_a - pdf_b)
    second_inside = (
        mean**2 * inside
        + 2 * mean * std * (pdf_a - pdf_b)
        + std**2 * (inside + a * pdf_a - b * pdf_b)
    )
    first = lo * cdf_a + hi * (1 - cdf_b) + first_inside
    second = lo**2 * cdf_a + hi**2 * (1 - cdf_b) + second_inside
    return float(first), float(math.sqrt(max(second - first**2, 0.0)))


def discretize_gaussian(
    mean: float, std: float, lo: float, hi: float, n_points: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Hermite approximation of a clipped Gaussian input.

    With n_points=3 the nodes are mean and mean +/- sqrt(3)*std with weights
    1/6, 2/3, 1/6.

    Returns:
        Tuple (values, probabilities)
    """
    if n_points < 1:
        raise ConfigurationError(f"n_points must be at least 1, got {n_points}")
    if std == 0 or n_points == 1:
        return np.array([min(max(mean, lo), hi)]), np.array([1.0])
    nodes, weights = hermegauss(n_points)
    values = np.clip(mean + std * nodes, lo, hi)
    probabilities = weights / weights.sum()
    return values, probabilities


def episode_seed(*keys: int) -> int:
    """Derive an independent 32-bit seed from a tuple of integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
