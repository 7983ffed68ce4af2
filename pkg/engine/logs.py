"""Per-step and per-epoch CSV training logs."""

from pathlib import Path
from typing import List, Optional

import pandas as pd

from config.settings import LOG_EVERY
from losses.objective import COMPONENTS, LossReport

STEP_COLUMNS = ["epoch", "step", "stage", *COMPONENTS, "total"]


class TrainingLog:
    """Collects rows in memory and rewrites steps.csv / epochs.csv on flush."""

    def __init__(self, out_dir=None, resume_epoch: int = 0, log_every: int = LOG_EVERY):
        self.out_dir = Path(out_dir) if out_dir else None
        self.log_every = max(1, log_every)
        self.step_rows: List[dict] = []
        self.epoch_rows: List[dict] = []

        # a resumed run keeps the rows of the epochs it does not repeat
        if self.out_dir and resume_epoch > 0:
            for name, rows in (("steps.csv", self.step_rows), ("epochs.csv", self.epoch_rows)):
                path = self.out_dir / name
                if path.exists():
                    frame = pd.read_csv(path)
                    frame = frame[frame["epoch"] < resume_epoch]
                    rows.extend(frame.astype(object).where(frame.notna(), None).to_dict("records"))

    def log_step(self, report: LossReport):
        if report.step % self.log_every == 0:
            self.step_rows.append(report.to_row())

    def log_epoch(self, row: dict):
        self.epoch_rows.append(dict(row))

    def flush(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.step_rows, columns=STEP_COLUMNS).to_csv(self.out_dir / "steps.csv", index=False)
        pd.DataFrame(self.epoch_rows).to_csv(self.out_dir / "epochs.csv", index=False)
        return self.out_dir
