"""Report figures: box trajectories, guidance schedule, metric summaries."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from layervid.scene import SceneSpec  # noqa: E402

if TYPE_CHECKING:
    from layervid.metrics import MetricsReport
    from layervid.pipeline import SceneResult

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 100,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_tracks(scene: SceneSpec, path: str | Path) -> Path:
    """Draw every layer's interpolated boxes on the unit frame, key-frames solid."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        colors = plt.cm.tab10.colors
        for i, (layer, track) in enumerate(zip(scene.layers, scene.tracks())):
            c = colors[i % len(colors)]
            for n, box in enumerate(track.boxes, start=1):
                key = track.is_key(n)
                ax.add_patch(
                    Rectangle(
                        (box.x0, box.y0), box.x1 - box.x0, box.y1 - box.y0,
                        fill=False, ec=c, lw=1.4 if key else 0.6, alpha=1.0 if key else 0.35,
                    )
                )
            centers = [b.center for b in track.boxes]
            ax.plot([p[0] for p in centers], [p[1] for p in centers], "-o", color=c, ms=2, lw=1,
                    label=f"{i + 1}: {layer.prompt}")
        ax.set_xlim(0, 1)
        ax.set_ylim(1, 0)
        ax.set_aspect("equal")
        ax.set_title(scene.background_prompt)
        if scene.layers:
            ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.06), fontsize=7, frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_schedule(result: "SceneResult", scene: SceneSpec, path: str | Path) -> Path:
    """One row per layer: cross-attention guidance, OAS weighting and condition source per step."""
    rows = [(f"layer {a.layer_index}", a.trace) for a in result.layers]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 0.6 + 0.5 * max(len(rows), 1)))
        for r, (_, trace) in enumerate(rows):
            for tr in trace:
                x = scene.steps - tr.step
                ax.add_patch(Rectangle((x, r), 1, 0.3, color="tab:orange" if tr.condition == "blend" else "tab:blue", lw=0))
                if tr.active("TT_AS"):
                    ax.add_patch(Rectangle((x, r + 0.35), 1, 0.25, color="tab:green", lw=0))
                if tr.active("ST"):
                    ax.add_patch(Rectangle((x, r + 0.65), 1, 0.25, color="tab:red", lw=0))
        ax.set_xlim(0, scene.steps)
        ax.set_ylim(0, max(len(rows), 1))
        ax.set_yticks([r + 0.5 for r in range(len(rows))], [name for name, _ in rows])
        ax.set_xlabel("inference step (t = T first)")
        handles = [Rectangle((0, 0), 1, 1, color=c) for c in ("tab:red", "tab:green", "tab:blue", "tab:orange")]
        ax.legend(handles, ["guided cross-attn", "oriented sharing", "cond: background", "cond: blend"],
                  ncol=4, fontsize=7, loc="lower center", bbox_to_anchor=(0.5, 1.0), frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(report: "MetricsReport", path: str | Path) -> Path:
    """Bar chart of the aggregate metrics plus per-object mIoU."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7, 3))
        names = ["mIoU", "AP50", "Cov", "CD"]
        values = [report.miou, report.ap50, report.coverage, report.cd if report.cd is not None else 0.0]
        bars = ax0.bar(names, values, color=["tab:blue", "tab:blue", "tab:blue", "tab:gray"])
        if report.cd is None:
            ax0.text(bars[3].get_x() + bars[3].get_width() / 2, 0.02, "n/a", ha="center", fontsize=7)
        ax0.set_ylim(0, max(1.0, max(values)))
        ax0.set_title("aggregate")
        labels = [f"{o['video']}/{o['object']}" for o in report.per_object]
        ax1.bar(range(len(labels)), [o["miou"] for o in report.per_object], color="tab:blue")
        ax1.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
        ax1.set_ylim(0, 1)
        ax1.set_title("mIoU per video/object")
        fig.tight_layout()
        return _save(fig, path)
