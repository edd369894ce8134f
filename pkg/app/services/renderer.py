"""Renderer service for result plots."""

from pathlib import Path

from app.core.errors import ConfigurationError
from app.plots.base import BasePlot, RenderResult
from app.plots.curves import CurvesPlot
from app.plots.kl import KlPlot
from app.plots.q_scatter import QScatterPlot
from app.plots.trace import TracePlot
from app.services.artifacts import read_manifest, read_result

# Registry of available plots
PLOT_REGISTRY: dict[str, type[BasePlot]] = {
    "curves": CurvesPlot,
    "q_scatter": QScatterPlot,
    "trace": TracePlot,
    "kl": KlPlot,
}


def get_available_plots() -> list[str]:
    """Get list of available plot names."""
    return list(PLOT_REGISTRY.keys())


def render_plot(
    run_dir: str | Path,
    kind: str = "curves",
    width: int = 1200,
    smoothing: float = 0.0,
) -> RenderResult:
    """
    Render one plot of a run from its CSV files.

    Args:
        run_dir: Run directory holding the result files
        kind: Plot name
        width: Output width in pixels
        smoothing: Curve smoothing factor 0.0-1.0

    Returns:
        RenderResult containing PNG bytes and dimensions

    Raises:
        ConfigurationError: If the plot is not recognized
        MissingArtifactError: If the run lacks the plot's result file
    """
    if kind not in PLOT_REGISTRY:
        raise ConfigurationError(f"Unknown plot: {kind}. Available: {get_available_plots()}")

    plot_class = PLOT_REGISTRY[kind]
    options = {"width": width, "smoothing": smoothing}
    if plot_class is TracePlot:
        options["dt"] = read_manifest(run_dir).config.dynamics.dt
    renderer = plot_class(**options)

    return renderer.render(read_result(run_dir, plot_class.source))


def write_plots(run_dir: str | Path, kinds: list[str] | None = None, width: int = 1200) -> list[Path]:
    """Render plots to PNG files next to the CSVs; `kinds=None` renders every plot the run has data for."""
    run_dir = Path(run_dir)
    written = []
    for kind in kinds or get_available_plots():
        source = PLOT_REGISTRY.get(kind)
        if kinds is None and source is not None and not (run_dir / f"{source.source}.csv").exists():
            continue
        result = render_plot(run_dir, kind, width)
        path = run_dir / f"{kind}.png"
        path.write_bytes(result.image_bytes)
        written.append(path)
    return written
