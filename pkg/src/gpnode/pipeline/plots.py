"""Static SVG figures: forecast bands per variable and parameter box plots."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_forecasts(result, obs, out_dir, truth=None, map_path=None, prefix="forecast"):
    """One SVG per variable: data, posterior mean, +-2 sd band, optional truth and MAP.

    ``truth`` and ``map_path`` are arrays shaped like ``result.mean``.
    Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mean, sd = result.mean, result.sd
    written = []
    for d, name in enumerate(result.names):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ax.fill_between(result.t, mean[:, d] - 2 * sd[:, d], mean[:, d] + 2 * sd[:, d],
                        color="tab:orange", alpha=0.3, lw=0, label="mean +- 2 sd")
        ax.plot(result.t, mean[:, d], color="tab:orange", lw=1.5, label="posterior mean")
        if truth is not None:
            ax.plot(result.t, truth[:, d], "b--", lw=1.2, label="truth")
        if map_path is not None:
            ax.plot(result.t, map_path[:, d], color="tab:green", lw=1.0, label="MAP")
        v = obs[name]
        if v.observed:
            ax.plot(v.times, v.values, "k.", ms=4, label="data")
        ax.set_xlabel("t")
        ax.set_ylabel(name)
        ax.legend(fontsize=7, loc="best")
        fig.tight_layout()
        path = out_dir / f"{prefix}_{name}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def plot_boxes(draws, names, path, truth=None):
    """Box plot (min/max whiskers, quartiles, median) of the chosen parameters."""
    draws = np.asarray(draws, float)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(names)), 3.5))
    ax.boxplot([draws[:, j] for j in range(len(names))], whis=(0, 100), showfliers=False)
    ax.set_xticks(range(1, len(names) + 1))
    ax.set_xticklabels(names, rotation=60, fontsize=7)
    if truth is not None:
        for j, n in enumerate(names):
            if n in truth:
                ax.plot(j + 1, truth[n], "b*", ms=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
