"""Figures rendered to files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .objectives import quadratic_optimum, three_client_quadratics, two_client_quadratics  # noqa: E402
from .simulator import History  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, directory, name) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _series(hist: History, attr: str):
    pts = [(r.round, getattr(r, attr)) for r in hist.records if getattr(r, attr) is not None]
    if not pts:
        return np.array([]), np.array([])
    rounds, vals = zip(*pts)
    return np.array(rounds), np.array(vals, dtype=float)


def plot_run(hist: History, directory, name: str = "run") -> list[Path]:
    """Accuracy curve plus the three mechanism panels (pair cosine, model distance, moves)."""
    out = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(*_series(hist, "eval_accuracy"))
        ax.set_xlabel("round")
        ax.set_ylabel("eval accuracy")
        ax.set_title(name)
        out.append(_save(fig, directory, f"{name}_accuracy"))

        fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
        axes[0].plot(*_series(hist, "pair_cosine"))
        axes[0].set_ylabel("cosine between tracked displacements")
        axes[1].plot(*_series(hist, "pair_model_distance"))
        axes[1].set_ylabel("distance between tracked local models")
        axes[2].plot(*_series(hist, "global_move"), label="global")
        local = [(r.round, np.mean(list(r.local_moves.values()))) for r in hist.records]
        axes[2].plot(*zip(*local), label="mean local")
        axes[2].set_ylabel("moving distance")
        axes[2].legend()
        for ax in axes:
            ax.set_xlabel("round")
        out.append(_save(fig, directory, f"{name}_mechanism"))
    return out


def plot_toy(histories: Mapping[str, History], variant: str, directory) -> Path:
    """Global-model trajectories on the quadratic scene, later rounds darker."""
    parts = two_client_quadratics() if variant == "two_client" else three_client_quadratics()
    opt = quadratic_optimum(parts)
    cmaps = ["Blues", "Oranges", "Greens", "Purples", "Reds"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        for (label, hist), cmap in zip(histories.items(), cmaps):
            xy = np.array(hist.models)
            shade = np.linspace(0.3, 1.0, len(xy))
            ax.scatter(xy[:, 0], xy[:, 1], c=shade, cmap=cmap, s=10, vmin=0, vmax=1, label=label)
        for p in parts:
            ax.plot(*p.center, "k^", ms=6)
        ax.plot(*opt, "r*", ms=12, label="global optimum")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        ax.legend(loc="best")
        return _save(fig, directory, f"toy_{variant}")


def plot_compare(report: dict, hists: Sequence[History], directory) -> list[Path]:
    rows = report["methods"]
    names = [r["name"] for r in rows]
    out = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, hist in zip(names, hists):
            ax.plot(*_series(hist, "eval_accuracy"), label=name)
        if report["target"] is not None:
            ax.axhline(report["target"], color="k", ls="--", lw=0.8, label="target")
        ax.set_xlabel("round")
        ax.set_ylabel("eval accuracy")
        ax.legend()
        out.append(_save(fig, directory, "compare_accuracy"))

        fig, ax = plt.subplots()
        counts = [r["rounds_to_target"] for r in rows]
        caps = [r["rounds_cap"] for r in rows]
        heights = [c if c is not None else cap for c, cap in zip(counts, caps)]
        bars = ax.bar(names, heights, color=["C0" if c is not None else "0.7" for c in counts])
        for bar, c in zip(bars, counts):
            ax.annotate("not reached" if c is None else str(c),
                        (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("rounds to target")
        out.append(_save(fig, directory, "compare_rounds"))
    return out
