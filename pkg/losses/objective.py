"""Weighted two-stage objective and its per-step report."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Union

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

COMPONENTS = ("fms", "ent", "seg_sc", "seg_u3", "pamr", "seg_circ")
STAGE2_COMPONENTS = ("pamr", "seg_circ")


class LossWeights(BaseModel):
    """One weight per loss component."""
    model_config = ConfigDict(allow_inf_nan=False)

    fms: float = Field(default=0.001, ge=0, description="feature-map statistics")
    ent: float = Field(default=10.0, ge=0, description="entropy minimization")
    seg_sc: float = Field(default=1.0, ge=0, description="SC through U2 vs U1 pseudo-labels")
    seg_u3: float = Field(default=1.0, ge=0, description="U3 vs U2 pseudo-labels")
    pamr: float = Field(default=0.6, ge=0, description="refined-mask self-learning")
    seg_circ: float = Field(default=0.3, ge=0, description="U1 vs U3 pseudo-labels")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in self.model_dump().items()})


class StageSchedule(BaseModel):
    stage_t: int = Field(default=150, gt=0, description="First epoch of the second (circular) stage")
    total_epochs: int = Field(default=200, gt=0)

    @model_validator(mode="after")
    def _check_order(self):
        if self.stage_t > self.total_epochs:
            raise ValueError(f"stage_t ({self.stage_t}) must be <= total_epochs ({self.total_epochs})")
        return self

    def is_stage2(self, epoch: int) -> bool:
        return epoch >= self.stage_t


@dataclass
class LossReport:
    epoch: int
    step: int
    components: Dict[str, Optional[float]]
    weights: Dict[str, float]
    total: float
    stage: int = 1
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def active(self):
        return [k for k in COMPONENTS if self.components.get(k) is not None]

    def to_row(self) -> dict:
        """One CSV row: epoch, step, each component (empty when inactive), total."""
        row = {"epoch": self.epoch, "step": self.step, "stage": self.stage}
        for name in COMPONENTS:
            row[name] = self.components.get(name)
        row["total"] = self.total
        return row


def _scalar(value: Union[float, torch.Tensor]) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def total_loss(
    components: Mapping[str, Optional[Union[float, torch.Tensor]]],
    weights: LossWeights,
    epoch: int,
    sched: StageSchedule,
    step: int = 0,
) -> LossReport:
    """
    Combine component values with their weights according to the stage schedule.

    Components that are missing or None are recorded as inactive.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"Unknown loss components {sorted(unknown)}; valid: {list(COMPONENTS)}")

    stage2 = sched.is_stage2(epoch)
    if not stage2:
        early = [k for k in STAGE2_COMPONENTS if components.get(k) is not None]
        if early:
            raise ValueError(
                f"Schedule violation: stage-2 components {early} supplied at epoch {epoch} < T={sched.stage_t}"
            )

    w = weights.model_dump()
    values = {k: (None if components.get(k) is None else _scalar(components[k])) for k in COMPONENTS}
    total = sum(w[k] * v for k, v in values.items() if v is not None)
    return LossReport(epoch=epoch, step=step, components=values, weights=w, total=total, stage=2 if stage2 else 1)
