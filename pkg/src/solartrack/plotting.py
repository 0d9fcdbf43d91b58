"""Per-metric iteration curves rendered to SVG (or any matplotlib format)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# stable element ids so reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "solartrack"

METRIC_LABELS = {
    "iou_mean": "IoU",
    "fscore_iou": "F-score (IoU)",
    "af1": "AF1-Score",
    "ota": "OTA",
    "iogt_mean": "IoGT",
    "fscore_iogt": "F-score (IoGT)",
    "atb_mean": "ATB",
}


def plot_metric(iterations, values, label: str, path, title: str = ""):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(iterations, values, marker="o", markersize=3, linewidth=1.2, color="tab:blue")
    ax.set_xlabel("Iteration")
    ax.set_ylabel(label)
    if title:
        ax.set_title(title)
    ax.grid(True, linewidth=0.4, alpha=0.6)
    fig.tight_layout()
    fmt = Path(path).suffix.lstrip(".") or "svg"
    fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
    plt.close(fig)


def plot_sweep(rows, out_dir, model_name: str = "", fmt: str = "svg") -> list[Path]:
    """One line chart per metric; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    its = [r.iteration for r in rows]
    paths = []
    for key, label in METRIC_LABELS.items():
        p = out / f"{key}.{fmt}"
        plot_metric(its, [getattr(r.report, key) for r in rows], label, p,
                    f"{model_name} {label}".strip())
        paths.append(p)
    return paths
