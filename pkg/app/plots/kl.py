"""KL divergence of each information set from the full one, per step."""

import pandas as pd

from app.plots.base import BasePlot


class KlPlot(BasePlot):
    source = "kl"
    required_columns = ("problem", "step", "kl_nats")

    def draw(self, frame: pd.DataFrame):
        fig, ax = self.figure()
        for i, (problem, group) in enumerate(frame.groupby("problem", sort=False)):
            ax.plot(group["step"], self.smooth(group["kl_nats"].to_numpy()), color=self.color(i), linewidth=1.5, label=str(problem))
            if "low_confidence" in group and group["low_confidence"].astype(bool).any():
                weak = group[group["low_confidence"].astype(bool)]
                ax.scatter(weak["step"], weak["kl_nats"], marker="x", color=self.color(i), s=12)
        ax.set_xlabel("time step")
        ax.set_ylabel("KL divergence (nats)")
        ax.grid(alpha=0.3)
        ax.legend()
        return fig
