"""Pydantic models for experiment configuration, manifests and reports."""

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings
from app.core.errors import ConfigurationError


class DynamicsConfig(BaseModel):
    """Vehicle constants and episode timing."""

    dt: float = Field(default=settings.dt, gt=0, description="Step length in seconds")
    horizon: int = Field(default=settings.horizon, ge=1, description="Decision steps per episode")
    leader_tau: float = Field(default=settings.leader_tau, gt=0)
    follower_tau: float = Field(default=settings.follower_tau, gt=0, description="Two-vehicle ego tau")
    platoon_taus: list[float] = Field(default_factory=lambda: list(settings.platoon_taus))
    time_gap: float = Field(default=settings.time_gap, ge=0)
    leader_speed: float = Field(default=settings.leader_speed, ge=0, description="Leader speed at the first traced step")
    u_max: float = Field(default=settings.u_max, gt=0)
    alpha: float = Field(default=settings.reward_alpha, gt=0)
    beta: float = Field(default=settings.reward_beta, gt=0)
    ego: int = Field(default=settings.platoon_ego, ge=1, description="Ego vehicle of the platoon study")
    two_vehicle_initial_state: list[float] = Field(
        default_factory=lambda: list(settings.two_vehicle_initial_state)
    )
    platoon_initial_state: list[float] = Field(
        default_factory=lambda: list(settings.platoon_initial_state)
    )
    drop_leader_constants: bool = False

    @field_validator("platoon_taus")
    @classmethod
    def positive_taus(cls, value: list[float]) -> list[float]:
        if not value or any(t <= 0 for t in value):
            raise ValueError("platoon_taus must be a non-empty list of positive time constants")
        return value

    @field_validator("two_vehicle_initial_state", "platoon_initial_state")
    @classmethod
    def three_components(cls, value: list[float]) -> list[float]:
        if len(value) != 3:
            raise ValueError("initial states are [e_p, e_v, acc]")
        return value

    @model_validator(mode="after")
    def ego_inside_platoon(self) -> "DynamicsConfig":
        if self.ego > len(self.platoon_taus):
            raise ValueError(f"ego {self.ego} is not one of {len(self.platoon_taus)} followers")
        return self


class ExogenousConfig(BaseModel):
    """Clipped Gaussian input of the leader or predecessor."""

    mean: float = settings.exo_mean
    std: float = Field(default=settings.exo_std, ge=0)
    seed: int = 0


class TrainerConfig(BaseModel):
    """FH-DDPG hyper-parameters."""

    episodes_per_stage: int = Field(default=settings.episodes_per_stage, ge=1)
    updates_per_episode: int = Field(default=1, ge=1)
    batch_size: int = Field(default=settings.batch_size, ge=1)
    replay_capacity: int = Field(default=settings.replay_capacity, ge=1)
    actor_learning_rate: float = Field(default=settings.actor_learning_rate, gt=0)
    critic_learning_rate: float = Field(default=settings.critic_learning_rate, gt=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    actor_hidden: list[int] = Field(default_factory=lambda: list(settings.actor_hidden))
    critic_hidden: list[int] = Field(default_factory=lambda: list(settings.critic_hidden))
    reward_scale: float = Field(default=settings.reward_scale, gt=0)
    ou_theta: float = Field(default=settings.ou_theta, ge=0)
    ou_sigma: float = Field(default=settings.ou_sigma, ge=0)
    noise_decay: bool = False
    warm_start: bool = True
    eval_interval: int = Field(default=settings.eval_interval, ge=1)
    eval_episodes: int = Field(default=settings.eval_episodes_during_training, ge=1)

    @model_validator(mode="after")
    def batch_fits_buffer(self) -> "TrainerConfig":
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size cannot exceed replay_capacity")
        return self


class KlConfig(BaseModel):
    """Quantization and sample budget of the KL analysis."""

    bins: int = Field(default=settings.kl_bins, ge=1)
    error_range: tuple[float, float] = settings.kl_error_range
    control_range: tuple[float, float] = settings.kl_control_range
    episodes: int = Field(default=settings.test_episodes, ge=1)
    min_samples: int = Field(default=settings.kl_min_samples, ge=1)
    bias_allowance: float = Field(default=settings.kl_bias_allowance, ge=0)


class OracleConfig(BaseModel):
    """Grids and instance counts of the theorem suite."""

    instances: int = Field(default=50, ge=1)
    families: list[str] = Field(
        default_factory=lambda: [
            "markov_hidden", "redrawn_hidden", "irrelevant_hidden", "pred_acceleration", "pred_control", "vehicles_ahead", "vehicles_behind", "jensen",
        ]
    )
    error_levels: int = Field(default=13, ge=1)
    acc_levels: int = Field(default=7, ge=1)
    action_levels: int = Field(default=7, ge=1)
    dt: float = Field(default=0.5, gt=0)
    horizon: int = Field(default=5, ge=1, le=10)


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce one run."""

    format_version: int = settings.file_format_version
    scenario: Literal["two_vehicle", "platoon", "theorems", "kl"] = "two_vehicle"
    problems: list[str] = Field(default_factory=lambda: ["P1", "P2", "P3"])
    seeds: int = Field(default=settings.seeds, ge=1)
    base_seed: int = 0
    test_episodes: int = Field(default=settings.test_episodes, ge=1)
    trace_seed: int = 12345
    jobs: int = Field(default=settings.default_jobs, ge=1)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    exogenous: ExogenousConfig = Field(default_factory=ExogenousConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    kl: KlConfig = Field(default_factory=KlConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    output_dir: str = settings.output_root

    @field_validator("problems")
    @classmethod
    def known_problems(cls, value: list[str]) -> list[str]:
        unknown = [p for p in value if p not in settings.available_problems]
        if unknown:
            raise ValueError(f"unknown problems {unknown}; available: {settings.available_problems}")
        return value

    def canonical_json(self, exclude: set[str] | None = None) -> str:
        """Sorted-key JSON used for hashing; `jobs` and `output_dir` never change results."""
        data = self.model_dump(mode="json", exclude={"jobs", "output_dir"} | (exclude or set()))
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def digest(self, exclude: set[str] | None = None) -> str:
        return hashlib.sha256(self.canonical_json(exclude).encode()).hexdigest()

    def follower_digest(self) -> str:
        """Digest of the parts that shape followers trained under P4."""
        data = {
            "dynamics": self.dynamics.model_dump(mode="json"),
            "exogenous": self.exogenous.model_dump(mode="json"),
            "trainer": self.trainer.model_dump(mode="json"),
            "base_seed": self.base_seed,
        }
        data["dynamics"].pop("ego")
        data["dynamics"].pop("leader_speed")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    """
    Load an ExperimentConfig from a JSON manifest or a YAML file.

    A manifest written by a previous run carries its config under "config".
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    if isinstance(data, dict) and "config" in data and "config_digest" in data:
        data = data["config"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValueError as e:
        raise ConfigurationError(f"invalid config {path}: {e}") from e


class ProblemSummary(BaseModel):
    """Table-shaped statistics of one problem across seeds."""

    problem: str
    runs: list[float] = Field(..., description="Mean scaled test return of every seed")
    mean: float
    best: float
    std_error: float
    info_bytes: int
    complete: bool = True


class RunReport(BaseModel):
    """Per-problem summaries plus the files they were computed from."""

    run_name: str
    config_digest: str
    scenario: str
    problems: list[ProblemSummary]
    files: dict[str, str] = Field(default_factory=dict)
    incomplete: list[str] = Field(default_factory=list)
    failures: list[str] = Field(default_factory=list)


class Manifest(BaseModel):
    """Everything written next to the results of a run."""

    format_version: int = settings.file_format_version
    config_digest: str
    config: ExperimentConfig
    bit_generator: str = "PCG64"
    seed_derivation: str = "numpy.random.SeedSequence"
    files: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
