"""Validation curves, per-subject bar charts and label overlays."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402

from dataio.volumes import LabelMask, Volume  # noqa: E402
from evaluation.report import MetricReport  # noqa: E402

CURVE_LABELS = {"u1": "U1", "u2_sc": "U2∘SC", "u3": "U3"}

# RGB per class id; background stays transparent
CLASS_COLOURS = np.array(
    [[0, 0, 0], [220, 60, 60], [60, 180, 75], [60, 110, 220], [240, 200, 40]],
    dtype=np.uint8,
)


def plot_validation_curves(history: Sequence[Dict], stage_t: int, path) -> Path:
    """
    Per-epoch validation DSC of U1, U2∘SC and U3 with a marker at T.

    Writes <path>.png and <path>.csv; epochs without validation are skipped.
    """
    path = Path(path).with_suffix(".png")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(history))
    columns = [c for c in CURVE_LABELS if c in frame.columns]
    if frame.empty or not columns:
        raise ValueError("History holds no validation scores to plot")
    frame = frame[["epoch", *columns]].dropna(subset=columns, how="all")
    frame.to_csv(path.with_suffix(".csv"), index=False)

    fig, ax = plt.subplots(figsize=(7, 4))
    for column in columns:
        ax.plot(frame["epoch"], frame[column], label=CURVE_LABELS[column])
    ax.axvline(stage_t, color="grey", linestyle="--", linewidth=1, label=f"T={stage_t}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean DSC (target)")
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_subject_bars(reports: Dict[str, MetricReport], path, metric: str = "DSC") -> Path:
    """Grouped bars of each subject's mean score, one bar per setting. Also writes the CSV."""
    path = Path(path).with_suffix(".png")
    path.parent.mkdir(parents=True, exist_ok=True)
    if not reports:
        raise ValueError("No reports to plot")

    columns = {}
    for name, report in reports.items():
        rows = report.per_subject[report.per_subject["metric"] == metric]
        columns[name] = rows.set_index("subject")["mean"]
    table = pd.DataFrame(columns)
    table.to_csv(path.with_suffix(".csv"), index_label="subject")

    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(table) * len(columns)), 4))
    table.plot.bar(ax=ax, width=0.8)
    ax.set_ylabel(f"subject mean {metric}")
    if metric == "DSC":
        ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _colourize(gray: np.ndarray, labels: Optional[np.ndarray], alpha: float) -> np.ndarray:
    rgb = np.repeat((np.clip(gray, 0, 1) * 255).astype(np.float32)[..., None], 3, axis=2)
    if labels is not None:
        fg = labels > 0
        colours = CLASS_COLOURS[labels % len(CLASS_COLOURS)].astype(np.float32)
        rgb[fg] = (1 - alpha) * rgb[fg] + alpha * colours[fg]
    return rgb.round().astype(np.uint8)


def save_overlay(
    volume: Volume,
    masks: Sequence[Optional[LabelMask]],
    path,
    slice_index: Optional[int] = None,
    alpha: float = 0.5,
) -> Path:
    """
    One image row: the raw slice, then each mask blended over it.

    Args:
        masks: e.g. [ground truth, prediction of each network]
        slice_index: Defaults to the slice with most foreground in the first mask
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if slice_index is None:
        first = next((m for m in masks if m is not None), None)
        slice_index = int((first.labels > 0).sum(axis=(1, 2)).argmax()) if first is not None else 0
    if not 0 <= slice_index < volume.shape[0]:
        raise ValueError(f"slice_index {slice_index} outside 0..{volume.shape[0] - 1}")

    gray = volume.voxels[slice_index]
    tiles: List[np.ndarray] = [_colourize(gray, None, alpha)]
    for mask in masks:
        tiles.append(_colourize(gray, None if mask is None else mask.labels[slice_index], alpha))
    Image.fromarray(np.concatenate(tiles, axis=1)).save(path)
    return path
