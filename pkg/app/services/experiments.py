"""End-to-end experiments: training sweeps, theorem suite and KL curves.

Every experiment writes into its own run directory under the configured
output root: versioned CSV files plus a manifest holding the full config.
"""

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from app.core.errors import ConfigurationError, MissingArtifactError, TrainingDivergenceError
from app.envs.platoon import PlatoonEnvironment
from app.schemas.experiment import ExperimentConfig, RunReport
from app.services.artifacts import (
    RESULT_FILES,
    read_csv,
    read_manifest,
    summarize_returns,
    summary_frame,
    write_csv,
    write_manifest,
)
from app.services.dynamics import VehicleParams, reconstruct_absolute
from app.services.exogenous import GaussianInputProcess, episode_seed
from app.services.fh_ddpg import POLICY_FILE, TrainedPolicy, evaluate, q_scatter, run_episode, train
from app.services.kl import KL_PROBLEMS, QuantizationScheme, collect_rollouts, kl_ranking
from app.services.oracle_worlds import GridSpec, check_theorems
from app.services.problems import PLATOON_PROBLEMS, TWO_VEHICLE_PROBLEMS, RewardParams, info_bytes
from app.services.simulation import ControllerTable, PolicyController

logger = logging.getLogger(__name__)

FOLLOWER_PROBLEM = "P4"
Q_SCATTER_EPISODES = 10
EVAL_SEED_KEY = 99
FOLLOWER_SEED_KEY = 500


@dataclass
class JobResult:
    """Outcome of training and evaluating one (problem, seed) pair."""

    problem: str
    seed_index: int
    returns: pd.DataFrame | None = None
    curve: pd.DataFrame | None = None
    q_records: pd.DataFrame | None = None
    trace: pd.DataFrame | None = None
    error: str | None = None


@dataclass
class Workload:
    """Size of a training sweep, for dry runs."""

    jobs: int
    training_episodes_per_job: int
    environment_steps_per_job: int
    gradient_updates_per_job: int
    test_episodes: int
    follower_trainings: int = 0
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "jobs": self.jobs,
            "training_episodes_per_job": self.training_episodes_per_job,
            "environment_steps_per_job": self.environment_steps_per_job,
            "gradient_updates_per_job": self.gradient_updates_per_job,
            "test_episodes": self.test_episodes,
            "follower_trainings": self.follower_trainings,
            "notes": self.notes,
        }


def run_directory(config: ExperimentConfig, run_name: str | None = None) -> Path:
    return Path(config.output_dir) / (run_name or config.scenario)


def vehicle_params(config: ExperimentConfig, taus: Iterable[float]) -> list[VehicleParams]:
    """Leader plus one follower per time constant, sharing the config's bounds."""
    d = config.dynamics
    bounds = {"h": d.time_gap, "u_min": -d.u_max, "u_max": d.u_max}
    return [VehicleParams(tau=d.leader_tau, **bounds)] + [VehicleParams(tau=t, **bounds) for t in taus]


def reward_params(config: ExperimentConfig) -> RewardParams:
    return RewardParams(
        alpha=config.dynamics.alpha, beta=config.dynamics.beta, scale=config.trainer.reward_scale
    )


def leader_process(config: ExperimentConfig, seed: int = 0) -> GaussianInputProcess:
    u_max = config.dynamics.u_max
    return GaussianInputProcess(
        mean=config.exogenous.mean,
        std=config.exogenous.std,
        clip_lo=-u_max,
        clip_hi=u_max,
        seed=episode_seed(config.exogenous.seed, seed),
    )


def follower_cache_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / "followers" / config.follower_digest()[:16]


def load_followers(cache_dir: Path, vehicles: Iterable[int]) -> ControllerTable:
    """Controllers of followers trained under P4, one per requested vehicle."""
    controllers = {}
    for j in vehicles:
        policy = TrainedPolicy.load(cache_dir / f"vehicle_{j}")
        controllers[j] = PolicyController(policy, FOLLOWER_PROBLEM, j)
    return ControllerTable(controllers)


def build_environment(
    config: ExperimentConfig,
    problem: str,
    seed: int = 0,
    ego: int | None = None,
    n_vehicles: int | None = None,
    follower_dir: Path | None = None,
) -> PlatoonEnvironment:
    """
    Environment of one problem in the config's scenario.

    The two-vehicle scenario is the platoon of a predecessor and ego 1. In the
    platoon scenario every vehicle other than the ego is driven by its cached
    P4 follower; `n_vehicles` truncates the platoon (used to train the chain).
    """
    d = config.dynamics
    if config.scenario == "two_vehicle":
        return PlatoonEnvironment(
            problem=problem,
            vehicle_params=vehicle_params(config, [d.follower_tau]),
            ego=1,
            leader_process=leader_process(config, seed),
            initial_state=d.two_vehicle_initial_state,
            horizon=d.horizon,
            dt=d.dt,
            reward_params=reward_params(config),
        )

    ego = d.ego if ego is None else ego
    params = vehicle_params(config, d.platoon_taus)[: n_vehicles or None]
    others = [j for j in range(1, len(params)) if j != ego]
    controllers = None
    if others:
        if follower_dir is None:
            raise MissingArtifactError("platoon environments need trained followers; run `platoon-lab platoon` first")
        controllers = load_followers(follower_dir, others)
    return PlatoonEnvironment(
        problem=problem,
        vehicle_params=params,
        ego=ego,
        leader_process=leader_process(config, seed),
        controllers=controllers,
        initial_state=d.platoon_initial_state,
        horizon=d.horizon,
        dt=d.dt,
        reward_params=reward_params(config),
        drop_leader_constants=d.drop_leader_constants,
    )


def estimate_workload(config: ExperimentConfig) -> Workload:
    """Count episodes, environment steps and updates without training anything."""
    t = config.trainer
    horizon = config.dynamics.horizon
    episodes = horizon * t.episodes_per_stage
    # Stage k episodes run k prefix steps plus the stored transition.
    steps = t.episodes_per_stage * horizon * (horizon + 1) // 2
    updates = 2 * episodes * t.updates_per_episode
    workload = Workload(
        jobs=len(config.problems) * config.seeds,
        training_episodes_per_job=episodes,
        environment_steps_per_job=steps,
        gradient_updates_per_job=updates,
        test_episodes=len(config.problems) * config.seeds * config.test_episodes,
    )
    if config.scenario == "platoon":
        cache = follower_cache_dir(config)
        cached = [(cache / f"vehicle_{j}" / POLICY_FILE).exists() for j in range(1, len(config.dynamics.platoon_taus) + 1)]
        workload.follower_trainings = cached.count(False)
        workload.notes.append(f"follower cache {cache}")
    return workload


def _map_jobs(fn: Callable, jobs_args: list[tuple], jobs: int) -> list:
    """Run independent jobs, in a process pool when more than one worker is allowed."""
    if jobs <= 1 or len(jobs_args) <= 1:
        return [fn(*args) for args in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*jobs_args)))


def _trace_frame(
    env: PlatoonEnvironment, policy: TrainedPolicy, seed: int, problem: str, leader_speed: float
) -> pd.DataFrame:
    _, actions, rewards, locals_ = run_episode(env, policy.act, seed)
    locals_ = np.array(locals_)
    states, _ = env.trace_arrays()
    positions, speeds = reconstruct_absolute(
        states, env.simulator.vehicle_params, env.simulator.dt, leader_speed=leader_speed
    )
    ego = env.layout.ego
    return pd.DataFrame(
        {
            "problem": problem,
            "step": np.arange(len(actions)),
            "e_p": locals_[:, 0],
            "e_v": locals_[:, 1],
            "acc": locals_[:, 2],
            "u": actions,
            "reward_raw": rewards,
            "position": positions[:, ego],
            "speed": speeds[:, ego],
        }
    )


def train_and_evaluate(config_json: str, problem: str, seed_index: int, run_dir: str, follower_dir: str | None) -> JobResult:
    """
    One job of a sweep: train, save the policy, evaluate and collect curves.

    Takes plain strings so it can run in a worker process. Divergence is
    returned as an error instead of raised so the sweep can continue.
    """
    config = ExperimentConfig.model_validate_json(config_json)
    follower_path = Path(follower_dir) if follower_dir else None
    seed = episode_seed(config.base_seed, seed_index)
    env = build_environment(config, problem, seed, follower_dir=follower_path)
    try:
        result = train(env, config.trainer, seed=seed, problem=problem, config_digest=config.digest())
    except TrainingDivergenceError as e:
        logger.warning("%s seed %d diverged: %s", problem, seed_index, e.message)
        return JobResult(problem, seed_index, error=e.message)
    policy = result.policy
    policy.save(Path(run_dir) / "policies" / problem / f"seed_{seed_index}")

    evaluation = evaluate(policy, env, config.test_episodes, seed=episode_seed(config.base_seed, EVAL_SEED_KEY))
    returns = pd.DataFrame(
        {
            "problem": problem,
            "seed_index": seed_index,
            "episode": np.arange(config.test_episodes),
            "return_raw": evaluation.returns_raw,
            "return_scaled": evaluation.returns_scaled,
        }
    )
    curve = pd.DataFrame(
        {
            "problem": problem,
            "seed_index": seed_index,
            "episode": [p.episode for p in result.curve],
            "mean_test_return": [p.mean_test_return for p in result.curve],
            "std": [p.std for p in result.curve],
        }
    )
    records = q_scatter(policy, env, min(Q_SCATTER_EPISODES, config.test_episodes), seed=episode_seed(seed, EVAL_SEED_KEY))
    q_frame = pd.DataFrame(
        {
            "problem": problem,
            "seed_index": seed_index,
            "episode": [r.episode for r in records],
            "step": [r.step for r in records],
            "estimate": [r.estimate for r in records],
            "observed": [r.observed for r in records],
        }
    )
    trace = _trace_frame(env, policy, config.trace_seed, problem, config.dynamics.leader_speed) if seed_index == 0 else None
    logger.info("%s seed %d: mean scaled test return %.5f", problem, seed_index, evaluation.mean_scaled)
    return JobResult(problem, seed_index, returns, curve, q_frame, trace)


@dataclass
class FollowerTraining:
    """Cached followers plus the vehicles that could not be trained."""

    cache: Path
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures


def train_followers(config: ExperimentConfig) -> FollowerTraining:
    """
    Train every platoon follower under P4, front to back, or reuse the cache.

    Vehicle j trains in the platoon truncated behind it, with vehicles 1..j-1
    driven by the followers already trained. A diverged follower is recorded
    in the cache manifest and the vehicles behind it are left untrained.
    """
    cache = follower_cache_dir(config)
    n_followers = len(config.dynamics.platoon_taus)
    training = FollowerTraining(cache)
    for j in range(1, n_followers + 1):
        target = cache / f"vehicle_{j}"
        if (target / POLICY_FILE).exists():
            logger.info("follower %d: cache hit in %s", j, target)
            continue
        seed = episode_seed(config.base_seed, FOLLOWER_SEED_KEY, j)
        env = build_environment(config, FOLLOWER_PROBLEM, seed, ego=j, n_vehicles=j + 1, follower_dir=cache)
        logger.info("follower %d: training under %s", j, FOLLOWER_PROBLEM)
        try:
            result = train(env, config.trainer, seed=seed, problem=FOLLOWER_PROBLEM, config_digest=config.follower_digest())
        except TrainingDivergenceError as e:
            logger.warning("follower %d diverged: %s", j, e.message)
            training.failures[j] = f"diverged: {e.message}"
            for behind in range(j + 1, n_followers + 1):
                training.failures[behind] = f"untrained: follower {j} diverged"
            break
        result.policy.save(target)

    trained = [
        f"vehicle_{j}/{POLICY_FILE}" for j in range(1, n_followers + 1) if (cache / f"vehicle_{j}" / POLICY_FILE).exists()
    ]
    notes = [f"follower {j} {reason}" for j, reason in sorted(training.failures.items())]
    write_manifest(cache, config, trained, notes)
    return training


def _failed_report(run_dir: Path, config: ExperimentConfig, notes: list[str]) -> RunReport:
    """Report of a sweep in which no job produced results."""
    write_manifest(run_dir, config, [], notes)
    for note in notes:
        logger.warning("%s: %s", run_dir.name, note)
    return RunReport(
        run_name=run_dir.name,
        config_digest=config.digest(),
        scenario=config.scenario,
        problems=[],
        files={},
        incomplete=list(config.problems),
        failures=notes,
    )


def _run_sweep(
    config: ExperimentConfig, run_name: str | None, follower_dir: Path | None, blocked: str | None = None
) -> RunReport:
    run_dir = run_directory(config, run_name)
    digest = config.digest()
    logger.info("%s run %s: %d problems x %d seeds (config %s)", config.scenario, run_dir, len(config.problems), config.seeds, digest[:12])

    if blocked is not None:
        return _failed_report(run_dir, config, [f"failed: {problem}: {blocked}" for problem in config.problems])

    jobs_args = [
        (config.model_dump_json(), problem, s, str(run_dir), str(follower_dir) if follower_dir else None)
        for problem in config.problems
        for s in range(config.seeds)
    ]
    results: list[JobResult] = _map_jobs(train_and_evaluate, jobs_args, config.jobs)

    failed = [r for r in results if r.error]
    ok = [r for r in results if not r.error]
    notes = [f"diverged: {r.problem} seed {r.seed_index}: {r.error}" for r in failed]
    if not ok:
        return _failed_report(run_dir, config, notes)

    budget = {"episodes_per_stage": config.trainer.episodes_per_stage, "training_episodes": config.trainer.episodes_per_stage * config.dynamics.horizon}
    files = {
        "returns": write_csv(run_dir / "returns.csv", pd.concat([r.returns for r in ok]), digest),
        "curves": write_csv(run_dir / "curves.csv", pd.concat([r.curve for r in ok]), digest, budget),
        "q_scatter": write_csv(run_dir / "q_scatter.csv", pd.concat([r.q_records for r in ok]), digest),
    }
    traces = [r.trace for r in ok if r.trace is not None]
    if traces:
        files["trace"] = write_csv(run_dir / "trace.csv", pd.concat(traces), digest, {"trace_seed": config.trace_seed})

    write_manifest(run_dir, config, [p.name for p in files.values()], notes)
    return report(run_dir)


def run_two_vehicle(config: ExperimentConfig, run_name: str | None = None) -> RunReport:
    """Train and evaluate P1/P2/P3 (or the configured subset) behind a Gaussian predecessor."""
    config = config.model_copy(update={"scenario": "two_vehicle"})
    unknown = [p for p in config.problems if p not in TWO_VEHICLE_PROBLEMS]
    if unknown:
        raise ConfigurationError(f"{unknown} are not two-vehicle problems")
    return _run_sweep(config, run_name, None)


def run_platoon(config: ExperimentConfig, run_name: str | None = None) -> RunReport:
    """Train the ego of the platoon under every configured problem, behind cached P4 followers."""
    config = config.model_copy(update={"scenario": "platoon"})
    unknown = [p for p in config.problems if p not in PLATOON_PROBLEMS]
    if unknown:
        raise ConfigurationError(f"{unknown} are not platoon problems")
    followers = train_followers(config)
    blocked = None if followers.complete else f"followers {sorted(followers.failures)} were not trained"
    return _run_sweep(config, run_name, followers.cache, blocked)


def _info_table(config: ExperimentConfig, problems: Iterable[str]) -> dict[str, int]:
    d = config.dynamics
    if config.scenario == "platoon":
        n_vehicles = len(d.platoon_taus) + 1
        return {p: info_bytes(p, d.ego, n_vehicles, d.drop_leader_constants) for p in problems}
    return {p: info_bytes(p, 1) for p in problems}


def report(run_dir: str | Path) -> RunReport:
    """
    Recompute per-problem statistics from a run's raw return file.

    A problem with fewer evaluated seeds than configured is incomplete.
    Writes summary.csv next to the returns.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    config = manifest.config
    returns, header = read_csv(run_dir / RESULT_FILES["returns"][0], RESULT_FILES["returns"][1])
    if header["config_digest"] != manifest.config_digest:
        raise ConfigurationError(f"returns.csv in {run_dir} belongs to another config")

    seeds_seen = returns.groupby("problem")["seed_index"].nunique()
    incomplete = {p for p in config.problems if seeds_seen.get(p, 0) < config.seeds}
    for problem in sorted(incomplete):
        logger.warning("%s is incomplete: %d of %d seeds", problem, seeds_seen.get(problem, 0), config.seeds)

    summaries = summarize_returns(returns, _info_table(config, config.problems), incomplete)
    summary_path = write_csv(run_dir / "summary.csv", summary_frame(summaries), manifest.config_digest)
    files = {name: str(run_dir / name) for name in manifest.files}
    files["summary"] = str(summary_path)
    return RunReport(
        run_name=run_dir.name,
        config_digest=manifest.config_digest,
        scenario=config.scenario,
        problems=summaries,
        files=files,
        incomplete=sorted(incomplete),
        failures=manifest.notes,
    )


def run_theorem_suite(config: ExperimentConfig, run_name: str | None = None) -> pd.DataFrame:
    """Check every configured theorem family and write theorems.csv."""
    config = config.model_copy(update={"scenario": "theorems"})
    o = config.oracle
    grid = GridSpec(
        error_levels=o.error_levels,
        acc_levels=o.acc_levels,
        action_levels=o.action_levels,
        u_max=config.dynamics.u_max,
        dt=o.dt,
        horizon=o.horizon,
        alpha=config.dynamics.alpha,
        beta=config.dynamics.beta,
    )
    rows = []
    for family in o.families:
        check = check_theorems(family, o.instances, seed=config.base_seed, grid=grid, jobs=config.jobs)
        rows.append(
            {
                "family": check.family,
                "instances": check.instances,
                "violations": check.violations,
                "min_gap": check.min_gap,
                "max_gap": check.max_gap,
                "strict_witness": "" if check.strict_witness is None else check.strict_witness,
                "passed": check.passed,
            }
        )
    frame = pd.DataFrame(rows)
    run_dir = run_directory(config, run_name)
    path = write_csv(run_dir / "theorems.csv", frame, config.digest())
    write_manifest(run_dir, config, [path.name])
    return frame


def run_kl(config: ExperimentConfig, run_name: str | None = None) -> pd.DataFrame:
    """
    KL curves of every platoon information set against P5 for the configured ego.

    Needs the cached followers of a platoon run to drive the predecessors.

    Raises:
        MissingArtifactError: If the followers were never trained
    """
    config = config.model_copy(update={"scenario": "kl"})
    d = config.dynamics
    cache = follower_cache_dir(config)
    predecessors = range(1, d.ego)
    missing = [j for j in predecessors if not (cache / f"vehicle_{j}" / POLICY_FILE).exists()]
    if missing:
        raise MissingArtifactError(
            f"no trained followers {missing} in {cache}; run `platoon-lab platoon` with the same config first"
        )

    params = vehicle_params(config, d.platoon_taus)[: d.ego]
    dataset = collect_rollouts(
        load_followers(cache, predecessors),
        params,
        leader_process(config, EVAL_SEED_KEY),
        config.kl.episodes,
        seed=episode_seed(config.base_seed, EVAL_SEED_KEY),
        initial_state=d.platoon_initial_state,
        horizon=d.horizon,
        dt=d.dt,
    )
    scheme = QuantizationScheme(
        bins=config.kl.bins, error_range=tuple(config.kl.error_range), control_range=tuple(config.kl.control_range)
    )
    problems = [p for p in KL_PROBLEMS if p in config.problems] or list(KL_PROBLEMS)
    curves = kl_ranking(dataset, d.ego, scheme, problems, min_samples=config.kl.min_samples)

    frame = pd.concat(
        [
            pd.DataFrame(
                {
                    "problem": problem,
                    "step": curve.steps,
                    "kl_nats": curve.kl,
                    "samples": curve.samples,
                    "bins": scheme.bins,
                    "low_confidence": curve.low_confidence,
                }
            )
            for problem, curve in curves.items()
        ]
    )
    run_dir = run_directory(config, run_name)
    notes = {"bins": scheme.bins, "reference": "P5", "bias_allowance": config.kl.bias_allowance, "target": f"u_{d.ego - 1}"}
    path = write_csv(run_dir / "kl.csv", frame, config.digest(), notes)
    write_manifest(run_dir, config, [path.name])
    return frame


def train_policy(config: ExperimentConfig, problem: str, seed_index: int = 0, out_dir: str | Path | None = None) -> Path:
    """Train a single (problem, seed) policy and save it with the run manifest."""
    out_dir = Path(out_dir) if out_dir else run_directory(config) / "policies" / problem / f"seed_{seed_index}"
    follower_dir = None
    if config.scenario == "platoon":
        followers = train_followers(config)
        if not followers.complete:
            raise TrainingDivergenceError(f"followers {sorted(followers.failures)} were not trained", failures=followers.failures)
        follower_dir = followers.cache
    seed = episode_seed(config.base_seed, seed_index)
    env = build_environment(config, problem, seed, follower_dir=follower_dir)
    result = train(env, config.trainer, seed=seed, problem=problem, config_digest=config.digest())
    result.policy.save(out_dir)
    if result.curve:
        curve = pd.DataFrame(
            {
                "problem": problem,
                "seed_index": seed_index,
                "episode": [p.episode for p in result.curve],
                "mean_test_return": [p.mean_test_return for p in result.curve],
                "std": [p.std for p in result.curve],
            }
        )
        write_csv(out_dir / "curves.csv", curve, config.digest())
    write_manifest(out_dir, config, [POLICY_FILE])
    return out_dir


def evaluate_policy_dir(policy_dir: str | Path, episodes: int | None = None) -> pd.DataFrame:
    """
    Evaluate a saved policy in the environment of its own manifest.

    Raises:
        MissingArtifactError: If the directory holds no policy or manifest
    """
    policy_dir = Path(policy_dir)
    manifest = read_manifest(policy_dir)
    config = manifest.config
    policy = TrainedPolicy.load(policy_dir)
    follower_dir = follower_cache_dir(config) if config.scenario == "platoon" else None
    env = build_environment(config, policy.problem, follower_dir=follower_dir)
    episodes = episodes or config.test_episodes
    evaluation = evaluate(policy, env, episodes, seed=episode_seed(config.base_seed, EVAL_SEED_KEY))
    returns = pd.DataFrame(
        {
            "problem": policy.problem,
            "seed_index": 0,
            "episode": np.arange(episodes),
            "return_raw": evaluation.returns_raw,
            "return_scaled": evaluation.returns_scaled,
        }
    )
    write_csv(policy_dir / "returns.csv", returns, manifest.config_digest)
    logger.info("%s: mean scaled return %.5f over %d episodes", policy.problem, evaluation.mean_scaled, episodes)
    return returns
