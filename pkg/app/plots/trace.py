"""Single test episode of the ego vehicle."""

import pandas as pd

from app.plots.base import BasePlot

PANELS = (("e_p", "gap error (m)"), ("e_v", "velocity error (m/s)"), ("acc", "acceleration (m/s²)"), ("u", "control (m/s²)"))


class TracePlot(BasePlot):
    """Four stacked panels, one line per problem, sharing the time axis."""

    source = "trace"
    required_columns = ("problem", "step") + tuple(name for name, _ in PANELS)

    def __init__(self, width: int = 1200, smoothing: float = 0.0, aspect_ratio: float = 1.0, dt: float = 0.1):
        super().__init__(width=width, smoothing=smoothing, aspect_ratio=aspect_ratio)
        self.dt = dt

    def draw(self, frame: pd.DataFrame):
        fig, axes = self.figure(len(PANELS), 1, sharex=True)
        for i, (problem, group) in enumerate(frame.groupby("problem", sort=False)):
            t = group["step"].to_numpy() * self.dt
            for ax, (column, label) in zip(axes, PANELS):
                ax.plot(t, group[column].to_numpy(), color=self.color(i), linewidth=1.5, label=str(problem))
                ax.set_ylabel(label)
        for ax in axes:
            ax.grid(alpha=0.3)
        axes[0].legend(loc="upper right")
        axes[-1].set_xlabel("time (s)")
        return fig
