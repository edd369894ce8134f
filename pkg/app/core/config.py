"""Application configuration."""

import os

from pydantic import BaseModel


class Settings(BaseModel):
    """Application settings."""

    app_name: str = "Platoon V2X Lab"
    version: str = "0.1.0"

    # Output artifacts
    output_root: str = os.environ.get("PLATOON_OUTPUT_ROOT", "runs")
    log_level: str = os.environ.get("PLATOON_LOG_LEVEL", "INFO")
    default_jobs: int = int(os.environ.get("PLATOON_JOBS", "1"))
    file_format_version: int = 1

    # Platoon environment (technical constraints and operational parameters)
    dt: float = 0.1
    horizon: int = 100
    leader_tau: float = 0.45
    follower_tau: float = 0.5
    time_gap: float = 0.3
    # Reference leader speed for absolute positions in traces
    leader_speed: float = 20.0
    standstill_distance: float = 2.0
    vehicle_length: float = 4.0
    u_min: float = -2.6
    u_max: float = 2.6
    # Not stated numerically for acceleration; mirror the control bounds.
    acc_min: float = -2.6
    acc_max: float = 2.6
    reward_alpha: float = 0.1
    reward_beta: float = 0.1

    # Heterogeneous platoon, followers 1..5
    platoon_taus: list[float] = [0.5, 0.25, 0.2, 0.1, 0.3]
    platoon_ego: int = 4
    two_vehicle_initial_state: list[float] = [2.5, 2.5, 0.0]
    platoon_initial_state: list[float] = [1.5, -1.0, 0.0]

    # Exogenous input process
    exo_mean: float = 0.0
    exo_std: float = 0.3

    # FH-DDPG hyper-parameters
    actor_hidden: list[int] = [400, 300, 100]
    critic_hidden: list[int] = [400, 300, 100]
    actor_learning_rate: float = 1e-5
    critic_learning_rate: float = 1e-4
    replay_capacity: int = 20000
    batch_size: int = 128
    reward_scale: float = 5e-3
    ou_theta: float = 0.15
    ou_sigma: float = 0.5
    episodes_per_stage: int = 500
    eval_interval: int = 100
    eval_episodes_during_training: int = 10

    # Experiment protocol
    seeds: int = 5
    test_episodes: int = 200

    # Quantization for the KL estimator
    kl_bins: int = 8
    kl_error_range: tuple[float, float] = (-3.0, 3.0)
    kl_control_range: tuple[float, float] = (-2.6, 2.6)
    kl_min_samples: int = 20
    kl_bias_allowance: float = 0.01

    # Exact dynamic programming oracle
    oracle_enumeration_limit: int = 200_000
    oracle_max_sweeps: int = 50
    oracle_max_outcomes: int = 64
    oracle_max_belief_nodes: int = 400_000
    api_max_theorem_instances: int = 20

    # Available problem tags and plot kinds
    available_problems: list[str] = ["P1", "P2", "P3", "P4", "PF2", "PLF", "TPF", "TPLF", "P5", "P6"]
    available_plots: set[str] = {"curves", "q_scatter", "trace", "kl"}


settings = Settings()
