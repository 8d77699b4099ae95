"""Optional PNG figures rendered from the CSV outputs (``--plot``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_traces(traces: dict[str, list[tuple[int, float, float]]], path, title: str = "loss under attack") -> Path:
    """Mean loss per PGD iteration with a +-1 std band, one line per trace."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in traces.items():
        it = [r[0] for r in rows]
        m = [r[1] for r in rows]
        s = [r[2] for r in rows]
        ax.plot(it, m, marker="o", ms=3, label=label)
        ax.fill_between(it, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)], alpha=0.2)
    ax.set_xlabel("PGD iteration")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_sweep(rows: list[tuple[float, float]], path, label: str = "model") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r[0] for r in rows], [100 * r[1] for r in rows], marker="o", label=label)
    ax.set_xlabel("epsilon (pixels)")
    ax.set_ylabel("top-1 error (%)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
