"""SVG figures for regret curves and budget sweeps.

Figures are written with a fixed hash salt and no date stamp so reruns
produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "robust-lcb",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
}

COLORS = {"robust-lcb": "#c0392b", "linsem-ucb": "#2471a3", "ucb1": "#7d7d7d"}


def _figsize(scale: float = 1.0) -> tuple[float, float]:
    width = 5.0 * scale
    return width, width * (np.sqrt(5.0) - 1.0) / 2.0


def _save(fig, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"failed writing figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def plot_curves(summaries, path) -> Path:
    """Mean cumulative regret against t with a one standard error band per policy."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        for name, s in summaries.items():
            color = COLORS.get(name)
            ax.plot(s.rounds, s.mean, label=name, color=color)
            ax.fill_between(s.rounds, s.mean - s.stderr, s.mean + s.stderr, color=color,
                            alpha=0.2, linewidth=0)
        ax.set_xlabel("round t")
        ax.set_ylabel("cumulative regret")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_sweep(rows: list[dict], path) -> Path:
    """Final regret against the deviation budget C, log-scaled x when C spans decades."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        for name in dict.fromkeys(r["policy"] for r in rows):
            pts = sorted((r["C"], r["final_regret"], r["stderr"]) for r in rows if r["policy"] == name)
            C, y, e = (np.array(v) for v in zip(*pts))
            ax.errorbar(C, y, yerr=e, marker="o", markersize=3, capsize=2, label=name,
                        color=COLORS.get(name))
        positive = [r["C"] for r in rows if r["C"] > 0]
        if positive and max(positive) / min(positive) >= 100:
            ax.set_xscale("symlog", linthresh=min(positive))
        ax.set_xlabel("deviation budget C")
        ax.set_ylabel("final cumulative regret")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
