"""Versioned CSV and manifest files of experiment runs."""

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigurationError, MissingArtifactError
from app.schemas.experiment import ExperimentConfig, Manifest, ProblemSummary

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FLOAT_FORMAT = "%.17g"

# CSV files of a run and the command that produces each
RESULT_FILES = {
    "returns": ("returns.csv", "two-vehicle"),
    "curves": ("curves.csv", "two-vehicle"),
    "q_scatter": ("q_scatter.csv", "two-vehicle"),
    "trace": ("trace.csv", "two-vehicle"),
    "summary": ("summary.csv", "report"),
    "theorems": ("theorems.csv", "check-theorems"),
    "kl": ("kl.csv", "kl"),
}


def write_csv(path: str | Path, frame: pd.DataFrame, config_digest: str, notes: dict | None = None) -> Path:
    """
    Write a frame preceded by `# key: value` header lines.

    Every file carries the format version and the config digest of the run
    that produced it.
    """
    if not config_digest:
        raise ConfigurationError(f"refusing to write {path} without a config digest")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": settings.file_format_version, "config_digest": config_digest}
    header.update(notes or {})
    lines = [f"# {key}: {value}\n" for key, value in header.items()]
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    path.write_text("".join(lines) + body)
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def read_header(path: str | Path) -> dict[str, str]:
    header = {}
    with Path(path).open() as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
    return header


def read_csv(path: str | Path, command: str | None = None) -> tuple[pd.DataFrame, dict[str, str]]:
    """
    Read a result file and its header.

    Raises:
        MissingArtifactError: If the file does not exist
        ConfigurationError: If the file has no digest or an unknown format version
    """
    path = Path(path)
    if not path.exists():
        hint = f"; run `platoon-lab {command}` first" if command else ""
        raise MissingArtifactError(f"missing result file {path}{hint}")
    header = read_header(path)
    if "config_digest" not in header:
        raise ConfigurationError(f"{path} has no config digest header")
    if int(header.get("format_version", -1)) != settings.file_format_version:
        raise ConfigurationError(f"{path} has unsupported format version {header.get('format_version')}")
    return pd.read_csv(path, comment="#"), header


def read_result(run_dir: str | Path, kind: str) -> pd.DataFrame:
    """Read one of the standard result files of a run directory."""
    if kind not in RESULT_FILES:
        raise ConfigurationError(f"unknown result kind {kind}; choose from {list(RESULT_FILES)}")
    name, command = RESULT_FILES[kind]
    frame, _ = read_csv(Path(run_dir) / name, command)
    return frame


def write_manifest(
    run_dir: str | Path,
    config: ExperimentConfig,
    files: list[str],
    notes: list[str] | None = None,
) -> Path:
    manifest = Manifest(
        config_digest=config.digest(),
        config=config,
        files=sorted(files),
        notes=notes or [],
    )
    path = Path(run_dir) / MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(run_dir: str | Path) -> Manifest:
    path = Path(run_dir) / MANIFEST_FILE
    if not path.exists():
        raise MissingArtifactError(f"no manifest in {run_dir}; run an experiment command first")
    return Manifest.model_validate_json(path.read_text())


def summarize_returns(
    returns: pd.DataFrame,
    info: dict[str, int] | None = None,
    incomplete: set[str] | None = None,
) -> list[ProblemSummary]:
    """
    Per-problem statistics over seeds.

    Each seed contributes the mean scaled return of its test episodes; the
    standard error is the sample standard deviation of those means over the
    square root of the number of seeds.
    """
    info = info or {}
    incomplete = incomplete or set()
    summaries = []
    for problem, group in returns.groupby("problem", sort=False):
        runs = group.groupby("seed_index", sort=True)["return_scaled"].mean().to_numpy()
        n = runs.size
        std_error = float(np.std(runs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        summaries.append(
            ProblemSummary(
                problem=str(problem),
                runs=[float(r) for r in runs],
                mean=float(runs.mean()),
                best=float(runs.max()),
                std_error=std_error,
                info_bytes=int(info.get(str(problem), 0)),
                complete=str(problem) not in incomplete,
            )
        )
    return summaries


def summary_frame(summaries: list[ProblemSummary]) -> pd.DataFrame:
    """Table-shaped view: one row per problem, one column per seed."""
    rows = []
    for s in summaries:
        row = {"problem": s.problem}
        row.update({f"run_{i + 1}": r for i, r in enumerate(s.runs)})
        row.update(
            {"mean": s.mean, "best": s.best, "std_error": s.std_error, "info_bytes": s.info_bytes, "complete": s.complete}
        )
        rows.append(row)
    return pd.DataFrame(rows)
