"""Run summary and plot endpoints."""

import base64
from pathlib import Path

from fastapi import APIRouter, HTTPException, Query

from app.core.config import settings
from app.core.errors import MissingArtifactError, PlatoonLabError
from app.schemas.api import PlotResponse
from app.schemas.experiment import RunReport
from app.services.experiments import report
from app.services.renderer import render_plot

router = APIRouter()


def _run_dir(run_name: str) -> Path:
    if not run_name or "/" in run_name or "\\" in run_name or run_name.startswith("."):
        raise HTTPException(
            status_code=400,
            detail={"error": "INVALID_RUN", "message": f"Invalid run name: {run_name!r}"},
        )
    return Path(settings.output_root) / run_name


@router.get("/runs/{run_name}/summary", response_model=RunReport)
def get_summary(run_name: str):
    """Per-problem statistics recomputed from the run's raw return file."""
    run_dir = _run_dir(run_name)
    try:
        return report(run_dir)
    except MissingArtifactError as e:
        raise HTTPException(status_code=404, detail=e.to_detail())
    except PlatoonLabError as e:
        raise HTTPException(status_code=400, detail=e.to_detail())


@router.post("/runs/{run_name}/plots/{kind}", response_model=PlotResponse)
def create_plot(
    run_name: str,
    kind: str,
    width: int = Query(default=1200, ge=100, le=4000, description="Output width in pixels"),
    smoothing: float = Query(default=0.0, ge=0.0, le=1.0, description="Curve smoothing 0.0-1.0"),
):
    """Render one plot of a run as a base64 encoded PNG."""
    if kind not in settings.available_plots:
        raise HTTPException(
            status_code=400,
            detail={
                "error": "INVALID_PLOT",
                "message": f"Unknown plot: {kind}. Available plots: {', '.join(sorted(settings.available_plots))}",
            },
        )
    run_dir = _run_dir(run_name)
    try:
        result = render_plot(run_dir, kind, width, smoothing)
    except MissingArtifactError as e:
        raise HTTPException(status_code=404, detail=e.to_detail())
    except PlatoonLabError as e:
        raise HTTPException(status_code=400, detail=e.to_detail())

    return PlotResponse(
        image=base64.b64encode(result.image_bytes).decode("utf-8"),
        kind=kind,
        width=result.width,
        height=result.height,
    )
