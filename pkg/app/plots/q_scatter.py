"""Critic estimates against realized returns-to-go."""

import numpy as np
import pandas as pd

from app.plots.base import BasePlot


class QScatterPlot(BasePlot):
    source = "q_scatter"
    required_columns = ("problem", "estimate", "observed")

    def draw(self, frame: pd.DataFrame):
        problems = list(dict.fromkeys(frame["problem"]))
        fig, axes = self.figure(1, len(problems), squeeze=False, sharex=True, sharey=True)
        lo = float(np.minimum(frame["estimate"].min(), frame["observed"].min()))
        hi = float(np.maximum(frame["estimate"].max(), frame["observed"].max()))
        for i, (ax, problem) in enumerate(zip(axes[0], problems)):
            rows = frame[frame["problem"] == problem]
            ax.scatter(rows["observed"], rows["estimate"], s=4, alpha=0.4, color=self.color(i))
            ax.plot([lo, hi], [lo, hi], color="black", linewidth=1, linestyle="--")
            ax.set_title(str(problem))
            ax.set_xlabel("observed return-to-go")
        axes[0][0].set_ylabel("critic estimate")
        return fig
