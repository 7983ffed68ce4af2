"""Per-class DSC/ASSD reports and multi-setting comparison tables."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import CLASS_NAMES
from dataio.volumes import LabelMask
from evaluation.metrics import assd_metric, dsc_metric

METRICS = ("DSC", "ASSD")


@dataclass
class MetricReport:
    """
    Volume-level scores of one model on a test set.

    per_subject has one row per (subject, metric) with a column per
    foreground class plus "mean"; the class and overall means are taken
    from it.
    """

    class_names: List[str]
    per_subject: pd.DataFrame
    metadata: Dict = field(default_factory=dict)

    def class_means(self, metric: str) -> Dict[str, float]:
        rows = self.per_subject[self.per_subject["metric"] == metric]
        return {name: float(rows[name].mean()) for name in self.class_names}

    @property
    def dsc(self) -> Dict[str, float]:
        return self.class_means("DSC")

    @property
    def assd(self) -> Dict[str, float]:
        return self.class_means("ASSD")

    @property
    def mean_dsc(self) -> float:
        return float(np.mean(list(self.dsc.values())))

    @property
    def mean_assd(self) -> float:
        return float(np.mean(list(self.assd.values())))

    def to_frame(self) -> pd.DataFrame:
        """Rows DSC and ASSD; columns are the foreground classes then mean."""
        rows = {}
        for metric in METRICS:
            means = self.class_means(metric)
            means["mean"] = float(np.mean(list(means.values())))
            rows[metric] = means
        return pd.DataFrame.from_dict(rows, orient="index", columns=[*self.class_names, "mean"])

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index_label="metric")
        self.per_subject.to_csv(path.with_name(path.stem + "_per_subject.csv"), index=False)
        return path

    def to_text_table(self) -> str:
        return self.to_frame().to_string(float_format=lambda v: f"{v:.3f}")


def build_report(
    preds: Sequence[LabelMask],
    gts: Sequence[LabelMask],
    class_names: Optional[Sequence[str]] = None,
    metadata: Optional[Dict] = None,
    subject_names: Optional[Sequence[str]] = None,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
) -> MetricReport:
    """
    Score aligned prediction / ground-truth volumes.

    Args:
        preds: Predicted label volumes
        gts: Ground-truth label volumes, same order
        class_names: Names of all classes, background first
        subject_names: Row labels of the per-subject table
        spacing: Voxel spacing for ASSD (voxel units by default)

    Returns:
        MetricReport over the foreground classes
    """
    if len(preds) != len(gts):
        raise ValueError(f"Got {len(preds)} predictions for {len(gts)} ground-truth volumes")
    if not preds:
        raise ValueError("Cannot build a report from zero volumes")
    names = list(class_names or CLASS_NAMES)
    num_classes = len(names)
    if subject_names is None:
        subject_names = [f"subject_{i:03d}" for i in range(len(preds))]
    if len(subject_names) != len(preds):
        raise ValueError(f"Got {len(subject_names)} subject names for {len(preds)} volumes")

    foreground = names[1:]
    rows = []
    for subject, pred, gt in zip(subject_names, preds, gts):
        dsc = {name: dsc_metric(pred, gt, c, num_classes) for c, name in enumerate(names) if c > 0}
        assd = {name: assd_metric(pred, gt, c, spacing, num_classes) for c, name in enumerate(names) if c > 0}
        for metric, scores in (("DSC", dsc), ("ASSD", assd)):
            rows.append({"subject": subject, "metric": metric, **scores, "mean": float(np.mean(list(scores.values())))})

    frame = pd.DataFrame(rows, columns=["subject", "metric", *foreground, "mean"])
    return MetricReport(foreground, frame, dict(metadata or {}))


def compare_reports(reports: Dict[str, MetricReport]) -> pd.DataFrame:
    """One row per setting/network: DSC per class + mean, then ASSD per class + mean."""
    if not reports:
        raise ValueError("No reports to compare")
    rows = {}
    for name, report in reports.items():
        frame = report.to_frame()
        row = {}
        for metric in METRICS:
            for column, value in frame.loc[metric].items():
                row[f"{metric} {column}"] = value
        rows[name] = row
    return pd.DataFrame.from_dict(rows, orient="index")


def write_comparison(reports: Dict[str, MetricReport], out_dir, stem: str = "comparison") -> Path:
    """Write <stem>.csv and <stem>.txt for a set of reports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = compare_reports(reports)
    table.to_csv(out_dir / f"{stem}.csv", index_label="setting")
    (out_dir / f"{stem}.txt").write_text(table.to_string(float_format=lambda v: f"{v:.3f}") + "\n")
    return out_dir / f"{stem}.csv"
