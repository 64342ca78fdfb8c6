"""Figure rendering for run reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (5 ** 0.5 - 1) / 2
FIG_WIDTH = 4.5
PALETTE = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=PALETTE),
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.family": "serif",
    "font.size": 8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "figure.figsize": (FIG_WIDTH, FIG_WIDTH * GOLDEN),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path):
    # no software/date metadata, so reruns produce identical files
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_run(rounds, out_dir, title: str = "") -> list[Path]:
    """Weighted loss and accuracy against cumulative simulated latency."""
    out = Path(out_dir)
    x = [r[4] for r in rounds]
    paths = []
    with plt.rc_context(STYLE):
        for col, label, name in ((1, "weighted training loss", "loss_vs_latency.png"),
                                 (2, "weighted test accuracy", "accuracy_vs_latency.png")):
            fig, ax = plt.subplots()
            ax.plot(x, [r[col] for r in rounds], marker="o")
            ax.set_xlabel("cumulative latency (s)")
            ax.set_ylabel(label)
            if title:
                ax.set_title(title)
            _save(fig, out / name)
            paths.append(out / name)
    return paths


def plot_compare(traces: dict, out_path, metric: str = "acc") -> Path:
    """Overlay several runs' accuracy (or loss) traces."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, tr in traces.items():
            ax.plot(tr.cum_latency, tr.acc if metric == "acc" else tr.loss, label=label)
        ax.set_xlabel("cumulative latency (s)")
        ax.set_ylabel("weighted test accuracy" if metric == "acc" else "weighted training loss")
        ax.legend()
        _save(fig, Path(out_path))
    return Path(out_path)
