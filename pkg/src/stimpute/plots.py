"""Static SVG plots of probabilistic imputations."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_node(path, steps, result, node: int, observed, cond_mask, truth=None, title: str = "") -> None:
    """One sensor: conditioning observations as crosses, reference values at
    target cells as dots, median line and the 0.05-0.95 band."""
    # fixed salt keeps svg element ids, and so the file, stable across reruns
    with plt.rc_context({"svg.hashsalt": "stimpute"}):
        _draw(path, steps, result, node, observed, cond_mask, truth, title)


def _draw(path, steps, result, node, observed, cond_mask, truth, title):
    fig, ax = plt.subplots(figsize=(6, 2.4))
    x = np.arange(len(steps))
    ax.fill_between(x, result.q05[node], result.q95[node], color="tab:green", alpha=0.25, linewidth=0, label="5-95%")
    ax.plot(x, result.median[node], color="tab:green", linewidth=1.5, label="median")
    cond = cond_mask[node] > 0
    ax.plot(x[cond], observed[node][cond], "kx", markersize=4, label="observed")
    if truth is not None:
        hidden = ~cond
        ax.plot(x[hidden], truth[node][hidden], "o", color="tab:red", markersize=3, label="truth")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("step")
    ax.legend(fontsize=7, loc="upper right", ncol=4)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
