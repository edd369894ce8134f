"""Training curves - mean test return against training episodes."""

import numpy as np
import pandas as pd

from app.plots.base import BasePlot


class CurvesPlot(BasePlot):
    """
    One line per problem: the mean over seeds of the periodic test return,
    with a shaded band of one standard error.
    """

    source = "curves"
    required_columns = ("problem", "seed_index", "episode", "mean_test_return")

    def draw(self, frame: pd.DataFrame):
        fig, ax = self.figure()
        for i, (problem, group) in enumerate(frame.groupby("problem", sort=False)):
            by_episode = group.groupby("episode")["mean_test_return"]
            episodes = by_episode.mean().index.to_numpy()
            mean = self.smooth(by_episode.mean().to_numpy())
            counts = by_episode.count().to_numpy()
            spread = by_episode.std(ddof=1).fillna(0.0).to_numpy() / np.sqrt(counts)
            ax.plot(episodes, mean, color=self.color(i), linewidth=2, label=str(problem))
            ax.fill_between(episodes, mean - spread, mean + spread, color=self.color(i), alpha=0.2)

        ax.set_xlabel("training episodes")
        ax.set_ylabel("average test return")
        ax.grid(alpha=0.3)
        ax.legend()
        return fig
