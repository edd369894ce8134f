"""Base class for result plots."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from io import BytesIO

import matplotlib
matplotlib.use("Agg")  # Use non-GUI backend for server use
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter1d

from app.core.errors import ConfigurationError


@dataclass
class RenderResult:
    """Result of rendering a plot."""

    image_bytes: bytes  # PNG bytes
    width: int
    height: int


class BasePlot(ABC):
    """Abstract base class for plots of one result file."""

    # Color per problem, in the order problems are usually listed
    PALETTE = [
        "#1F77B4", "#D62728", "#2CA02C", "#9467BD", "#FF7F0E",
        "#8C564B", "#E377C2", "#17BECF", "#7F7F7F", "#BCBD22",
    ]

    # Result file the plot is drawn from and the columns it needs
    source = ""
    required_columns: tuple[str, ...] = ()

    def __init__(self, width: int = 1200, smoothing: float = 0.0, aspect_ratio: float = 1.618):
        """
        Initialize the plot renderer.

        Args:
            width: Output width in pixels
            smoothing: Curve smoothing factor 0.0-1.0
            aspect_ratio: Width-to-height ratio for output image
        """
        self.width = width
        self.height = int(width / aspect_ratio)
        self.smoothing = smoothing
        self.dpi = 100

    def color(self, index: int) -> str:
        return self.PALETTE[index % len(self.PALETTE)]

    def smooth(self, values: np.ndarray) -> np.ndarray:
        """Apply Gaussian smoothing to a curve."""
        if self.smoothing <= 0 or values.size < 3:
            return values
        return gaussian_filter1d(values, sigma=self.smoothing * 10, mode="nearest")

    def check_columns(self, frame: pd.DataFrame) -> None:
        missing = [c for c in self.required_columns if c not in frame.columns]
        if missing:
            raise ConfigurationError(f"{self.source} is missing columns {missing}")

    def figure(self, rows: int = 1, cols: int = 1, **kwargs):
        return plt.subplots(rows, cols, figsize=(self.width / self.dpi, self.height / self.dpi), **kwargs)

    def render(self, frame: pd.DataFrame) -> RenderResult:
        """Validate the frame, draw it and encode the figure."""
        self.check_columns(frame)
        fig = self.draw(frame)
        return RenderResult(image_bytes=self._save_figure_to_bytes(fig), width=self.width, height=self.height)

    @abstractmethod
    def draw(self, frame: pd.DataFrame) -> plt.Figure:
        """
        Draw the figure.

        Args:
            frame: Rows of the plot's result file

        Returns:
            The matplotlib figure
        """
        pass

    def _save_figure_to_bytes(self, fig: plt.Figure) -> bytes:
        """Save matplotlib figure to PNG bytes."""
        buf = BytesIO()
        fig.savefig(buf, format="png", dpi=self.dpi, bbox_inches="tight", pad_inches=0.1)
        buf.seek(0)
        plt.close(fig)
        return buf.read()
