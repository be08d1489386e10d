# diagram_svg.py — static SVG bifurcation diagrams (α horizontal, W* vertical)

import logging
from typing import Dict, Iterable, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from continuation import FOLD, HOPF, MARGINAL, STABLE, TRANSCRITICAL, Branch, BranchPoint
from run_log import log_step

logger = logging.getLogger(__name__)

# fixed hash salt and no date stamp: identical input gives identical bytes
matplotlib.rcParams["svg.hashsalt"] = "agepi"
matplotlib.rcParams["svg.fonttype"] = "none"

EVENT_STYLE = {
    TRANSCRITICAL: dict(marker="o", color="tab:red", label="transcritical"),
    FOLD: dict(marker="s", color="tab:green", label="fold"),
    HOPF: dict(marker="o", color="black", label="Hopf"),
}


def _runs(points: Sequence[BranchPoint]) -> List[List[BranchPoint]]:
    """Consecutive points with one stability status; neighbouring runs share an end point."""
    runs: List[List[BranchPoint]] = []
    for p in points:
        if p.status == MARGINAL:
            if runs:
                runs[-1].append(p)
            continue
        if runs and runs[-1][0].status == p.status:
            runs[-1].append(p)
        else:
            start = [runs[-1][-1]] if runs else []
            runs.append(start + [p])
    return runs


def _draw_branch(ax, branch: Branch, color: str) -> None:
    for run in _runs(branch.points):
        status = next(p.status for p in run if p.status != MARGINAL) if any(
            p.status != MARGINAL for p in run) else MARGINAL
        ax.plot([p.alpha for p in run], [p.W_star for p in run], color=color, linewidth=1.4,
                linestyle="-" if status == STABLE else "--")
    for event in branch.bifurcations:
        style = EVENT_STYLE[event.kind]
        ax.plot([event.alpha], [event.W_star], linestyle="none", marker=style["marker"],
                color=style["color"], markersize=5, zorder=3)


def render_diagram(families: Dict[str, Iterable[Branch]], path: str, title: str = "") -> None:
    """One SVG with every branch of every family; solid = stable, dashed = unstable."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, branches) in enumerate(families.items()):
        color = colors[i % len(colors)]
        for branch in branches:
            _draw_branch(ax, branch, color)
        if label:
            ax.plot([], [], color=color, label=label)
    for style in EVENT_STYLE.values():
        ax.plot([], [], linestyle="none", marker=style["marker"], color=style["color"], label=style["label"])

    ax.set_xlabel("alpha")
    ax.set_ylabel("W*")
    ax.set_ylim(bottom=0.0)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small", frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    log_step(f"[CLI] diagram written to {path}")
