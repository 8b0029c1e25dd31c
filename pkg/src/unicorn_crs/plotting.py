"""Figures written next to the JSON/CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.2),
    "axes.spines.top": False,
    "axes.spines.right": False,
}

# no timestamps, so identical inputs give identical files
_META = {"Software": None}


def plot_sr_curves(curves: Mapping[str, Mapping[int, float]], path: str | Path, title: str = "") -> Path:
    """SR@t against turn t, one line per policy."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name, sr in curves.items():
            turns = sorted(sr)
            ax.plot(turns, [sr[t] for t in turns], marker="o", markersize=3, label=name)
        ax.set_xlabel("turn t")
        ax.set_ylabel("SR@t")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)
    return Path(path)


def plot_training(episodes: Sequence[int], success_avg: Sequence[float], rewards: Sequence[float],
                  path: str | Path) -> Path:
    with plt.rc_context(_STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.5))
        top.plot(episodes, success_avg, lw=1)
        top.set_ylabel("success (moving avg)")
        top.set_ylim(-0.02, 1.02)
        bottom.plot(episodes, rewards, lw=0.5, alpha=0.7)
        bottom.set_ylabel("episode reward")
        bottom.set_xlabel("episode")
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)
    return Path(path)
