"""Command-line entry point: `platoon-lab <command> [options]`."""

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from app.core.config import settings
from app.core.errors import ConfigurationError, PlatoonLabError
from app.schemas.experiment import ExperimentConfig, load_config
from app.services import experiments
from app.services.problems import PLATOON_PROBLEMS, TWO_VEHICLE_PROBLEMS
from app.services.renderer import get_available_plots, write_plots

logger = logging.getLogger("app.cli")

SCENARIO_OF_COMMAND = {
    "two-vehicle": "two_vehicle",
    "platoon": "platoon",
    "check-theorems": "theorems",
    "kl": "kl",
}
DEFAULT_PROBLEMS = {
    "two_vehicle": [p.value for p in TWO_VEHICLE_PROBLEMS],
    "platoon": [p.value for p in PLATOON_PROBLEMS],
}


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON experiment config")
    parser.add_argument("--manifest", help="Manifest of a previous run to reproduce")
    parser.add_argument("--out", help=f"Output root (default {settings.output_root})")
    parser.add_argument("--problem", action="append", help="Problem tag; repeat for several")
    parser.add_argument("--seeds", type=int, help="Number of training seeds")
    parser.add_argument("--episodes-per-stage", type=int, help="Training episodes per backward stage")
    parser.add_argument("--jobs", type=int, help="Parallel workers")
    parser.add_argument("--run-name", help="Run directory name under the output root")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoon-lab", description="Platoon control under V2X information sets.")
    parser.add_argument("--log-level", default=settings.log_level, help="Root log level")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("two-vehicle", "Train and evaluate P1/P2/P3 behind a Gaussian predecessor"),
        ("platoon", "Train the platoon ego under every information topology"),
        ("check-theorems", "Check the ordering theorems on random discretized worlds"),
        ("kl", "KL divergence curves of the information sets"),
    ):
        command = sub.add_parser(name, help=help_text)
        _add_config_options(command)
        command.add_argument("--dry-run", action="store_true", help="Print the config and workload only")

    train = sub.add_parser("train", help="Train a single policy")
    _add_config_options(train)
    train.add_argument("--scenario", choices=["two_vehicle", "platoon"], default="two_vehicle")
    train.add_argument("--seed-index", type=int, default=0)
    train.add_argument("--dry-run", action="store_true")

    evaluate = sub.add_parser("eval", help="Evaluate a saved policy")
    evaluate.add_argument("policy_dir", help="Directory written by `train`")
    evaluate.add_argument("--episodes", type=int, help="Test episodes (default from the manifest)")

    report = sub.add_parser("report", help="Recompute the summary table of a run")
    report.add_argument("run_dir")

    plot = sub.add_parser("plot", help="Render PNG plots of a run")
    plot.add_argument("run_dir")
    plot.add_argument("--kind", action="append", choices=get_available_plots(), help="Plot kind; default all available")
    plot.add_argument("--width", type=int, default=1200)
    return parser


def config_from_args(args: argparse.Namespace, scenario: str) -> ExperimentConfig:
    """
    Start from a manifest, a config file or the defaults, then apply flags.

    A manifest is reproduced as is; only the output root may change.
    """
    if args.manifest and args.config:
        raise ConfigurationError("use either --manifest or --config, not both")
    source = args.manifest or args.config
    config = load_config(source) if source else ExperimentConfig(scenario=scenario, problems=DEFAULT_PROBLEMS.get(scenario, ["P1", "P2", "P3"]))

    data = config.model_dump()
    data["scenario"] = scenario if not args.manifest else config.scenario
    if args.out:
        data["output_dir"] = args.out
    if args.jobs:
        data["jobs"] = args.jobs
    if not args.manifest:
        if args.problem:
            data["problems"] = args.problem
        if args.seeds:
            data["seeds"] = args.seeds
        if args.episodes_per_stage:
            data["trainer"]["episodes_per_stage"] = args.episodes_per_stage
    try:
        return ExperimentConfig.model_validate(data)
    except ValueError as e:
        raise ConfigurationError(f"invalid options: {e}") from e


def _dry_run(config: ExperimentConfig) -> None:
    print(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True))
    print(f"config_digest: {config.digest()}")
    if config.scenario in ("two_vehicle", "platoon"):
        print(json.dumps({"workload": experiments.estimate_workload(config).as_dict()}, indent=2))


def _print_report(report) -> None:
    print(f"run {report.run_name} ({report.scenario}), config {report.config_digest[:12]}")
    print(f"{'problem':<8}{'mean':>12}{'best':>12}{'std_error':>12}{'info':>6}")
    for s in report.problems:
        flag = "" if s.complete else "  (incomplete)"
        print(f"{s.problem:<8}{s.mean:>12.4f}{s.best:>12.4f}{s.std_error:>12.4f}{s.info_bytes:>6}{flag}")
    for note in report.failures:
        print(note)


def run(args: argparse.Namespace) -> int:
    if args.command == "eval":
        returns = experiments.evaluate_policy_dir(args.policy_dir, args.episodes)
        print(f"{returns['problem'].iloc[0]}: mean scaled return {returns['return_scaled'].mean():.5f}")
        return 0
    if args.command == "report":
        _print_report(experiments.report(args.run_dir))
        return 0
    if args.command == "plot":
        for path in write_plots(args.run_dir, args.kind, args.width):
            print(path)
        return 0

    scenario = args.scenario if args.command == "train" else SCENARIO_OF_COMMAND[args.command]
    config = config_from_args(args, scenario)
    if args.dry_run:
        _dry_run(config)
        return 0

    if args.command == "train":
        problem = config.problems[0]
        out = Path(args.out) / args.run_name if args.out and args.run_name else None
        print(experiments.train_policy(config, problem, args.seed_index, out))
    elif args.command == "two-vehicle":
        _print_report(experiments.run_two_vehicle(config, args.run_name))
    elif args.command == "platoon":
        _print_report(experiments.run_platoon(config, args.run_name))
    elif args.command == "check-theorems":
        frame = experiments.run_theorem_suite(config, args.run_name)
        print(frame.to_string(index=False))
        if not frame["passed"].all():
            return 1
    elif args.command == "kl":
        frame = experiments.run_kl(config, args.run_name)
        print(frame.groupby("problem", sort=False)["kl_nats"].mean().to_string())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except PlatoonLabError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
