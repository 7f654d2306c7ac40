"""Figures for simulation reports, rendered to files with the Agg backend."""
from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def box_stats(samples) -> dict:
    """Quantiles drawn by a boxplot (whiskers at the extremes)."""
    q = np.percentile(np.asarray(samples, dtype=float), [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), q))


def state_boxplots(groups: dict, out_path, labels=None, title="State trajectory"):
    """One panel per switching path; boxes of each state coordinate over time.

    ``groups`` maps a path name to an array ``(samples, N+1, n_x)``.
    """
    plt = _pyplot()
    names = list(groups)
    fig, axes = plt.subplots(1, len(names), figsize=(4.2 * len(names), 3.6), sharey=True,
                             squeeze=False)
    for ax, name in zip(axes[0], names):
        X = np.asarray(groups[name])
        n_t, n_x = X.shape[1], X.shape[2]
        width = 0.8 / n_x
        for i in range(n_x):
            pos = np.arange(n_t) + (i - (n_x - 1) / 2) * width
            bp = ax.boxplot([X[:, t, i] for t in range(n_t)], positions=pos, widths=width * 0.9,
                            whis=(0, 100), patch_artist=True, manage_ticks=False)
            for patch in bp["boxes"]:
                patch.set_facecolor(f"C{i}")
                patch.set_alpha(0.5)
            ax.plot([], [], color=f"C{i}", lw=6, alpha=0.5,
                    label=(labels[i] if labels else f"x_{i + 1}"))
        ax.set_xticks(range(n_t))
        ax.set_xlabel("t")
        ax.set_title(f"path {name} (n={X.shape[0]})")
    axes[0][0].set_ylabel("holding")
    axes[0][0].legend(loc="best", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def bar_by_path(names, values, out_path, level=None, ylabel="value", title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.bar(range(len(names)), values, color="C0")
    if level is not None:
        ax.axhline(level, color="C3", ls="--", lw=1, label=f"bound {level:g}")
        ax.legend(loc="best", fontsize=8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=0)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
