"""Adaptation configuration, presets and ablation settings."""

from typing import Dict, Literal

from pydantic import BaseModel, Field, model_validator

from config.settings import DEVICE
from losses.objective import LossWeights, StageSchedule
from pamr.affinity import PamrConfig
from segnet.blocks import FreezePlan
from segnet.unet import DESIRED_UNET_SPEC, SOURCE_UNET_SPEC, NetworkSpec
from stylecomp.network import SCSpec

# U1: only the first conv block adapts; U2: fully frozen
U1_FREEZE_PLAN = FreezePlan(trainable_block_ids={"conv1"})
U2_FREEZE_PLAN = FreezePlan()


class OptimizerSettings(BaseModel):
    kind: Literal["rmsprop", "adam"] = "rmsprop"
    lr: float = Field(gt=0)
    alpha: float = Field(default=0.9, gt=0, lt=1, description="RMSprop smoothing constant")
    batch_size: int = Field(default=8, gt=0)


class AblationFlags(BaseModel):
    no_fms: bool = False
    no_emin: bool = False
    no_sc: bool = False
    with_st: bool = False
    no_pamr: bool = False
    no_cl: bool = False

    def label(self) -> str:
        for name, flags in ABLATION_SETTINGS.items():
            if flags == self:
                return name
        return "Proposed" if self == AblationFlags() else "Custom"


ABLATION_SETTINGS: Dict[str, AblationFlags] = {
    "W/o FMS": AblationFlags(no_fms=True),
    "W/o EMin": AblationFlags(no_emin=True),
    "W/o SC": AblationFlags(no_sc=True),
    "With ST": AblationFlags(with_st=True),
    "W/o PAMR": AblationFlags(no_pamr=True),
    "W/o CL": AblationFlags(no_cl=True),
}


class AdaptationConfig(BaseModel):
    """Everything that determines a pretraining + adaptation run."""
    source_spec: NetworkSpec = Field(default_factory=lambda: SOURCE_UNET_SPEC.model_copy())
    u3_spec: NetworkSpec = Field(default_factory=lambda: DESIRED_UNET_SPEC.model_copy())
    sc_spec: SCSpec = Field(default_factory=SCSpec)

    source_optim: OptimizerSettings = Field(
        default_factory=lambda: OptimizerSettings(kind="adam", lr=1e-4, batch_size=8)
    )
    source_epochs: int = Field(default=100, gt=0)

    u1_optim: OptimizerSettings = Field(default_factory=lambda: OptimizerSettings(lr=0.00012))
    sc_optim: OptimizerSettings = Field(default_factory=lambda: OptimizerSettings(lr=0.0004))
    u3_optim: OptimizerSettings = Field(default_factory=lambda: OptimizerSettings(lr=0.0006))

    schedule: StageSchedule = Field(default_factory=StageSchedule)
    weights: LossWeights = Field(default_factory=LossWeights)
    pamr: PamrConfig = Field(default_factory=PamrConfig)
    ablation: AblationFlags = Field(default_factory=AblationFlags)

    validate_every: int = Field(default=1, ge=1)
    dump_triplets: bool = False
    entropy_on_u3: bool = Field(default=False, description="Also minimize entropy of U3's output")
    flat_dice: bool = Field(default=False, description="Pool foreground classes into one dice")
    seed: int = 0
    device: str = DEVICE

    @model_validator(mode="after")
    def _check_batches(self):
        if self.u1_optim.batch_size != self.source_optim.batch_size:
            raise ValueError(
                f"U1 batch size ({self.u1_optim.batch_size}) must equal the source model's "
                f"pretraining batch size ({self.source_optim.batch_size}) for the statistics loss"
            )
        sizes = {self.u1_optim.batch_size, self.sc_optim.batch_size, self.u3_optim.batch_size}
        if len(sizes) != 1:
            raise ValueError(f"U1, SC and U3 share each batch; batch sizes differ: {sorted(sizes)}")
        return self

    @property
    def batch_size(self) -> int:
        return self.u1_optim.batch_size

    def effective_sc_spec(self) -> SCSpec:
        mode = "translate" if self.ablation.with_st else "compensate"
        return self.sc_spec.model_copy(update={"mode": mode})


def full_scale_config(**overrides) -> AdaptationConfig:
    """Defaults of the abdominal CT -> MR setting (256x256 slices)."""
    return AdaptationConfig(**overrides)


def desk_scale_config(**overrides) -> AdaptationConfig:
    """Synthetic 64x64 run: narrower networks, shorter schedule, 5x learning rates."""
    base = dict(
        source_spec=NetworkSpec(block_filters=[16, 32, 64, 128, 256, 128, 64, 32, 16]),
        u3_spec=NetworkSpec(block_filters=[8, 16, 32, 64, 128, 64, 32, 16, 8]),
        sc_spec=SCSpec(layer_filters=[16, 16, 8, 8, 4, 2, 1]),
        source_optim=OptimizerSettings(kind="adam", lr=5e-4, batch_size=8),
        source_epochs=30,
        u1_optim=OptimizerSettings(lr=0.0006),
        sc_optim=OptimizerSettings(lr=0.002),
        u3_optim=OptimizerSettings(lr=0.003),
        schedule=StageSchedule(stage_t=20, total_epochs=30),
        pamr=PamrConfig(dilation_rates=[1, 2, 4, 8]),
    )
    base.update(overrides)
    return AdaptationConfig(**base)


def tiny_scale_config(**overrides) -> AdaptationConfig:
    """Smoke-test scale: a handful of filters per block, two epochs, batch 2."""
    base = dict(
        source_spec=NetworkSpec(block_filters=[4, 8, 8, 16, 16, 16, 8, 8, 4]),
        u3_spec=NetworkSpec(block_filters=[2, 4, 4, 8, 8, 8, 4, 4, 2]),
        sc_spec=SCSpec(layer_filters=[4, 4, 2, 2, 2, 2, 1]),
        source_optim=OptimizerSettings(kind="adam", lr=1e-3, batch_size=2),
        source_epochs=1,
        u1_optim=OptimizerSettings(lr=1e-3, batch_size=2),
        sc_optim=OptimizerSettings(lr=1e-3, batch_size=2),
        u3_optim=OptimizerSettings(lr=1e-3, batch_size=2),
        schedule=StageSchedule(stage_t=1, total_epochs=2),
        pamr=PamrConfig(iterations=2, dilation_rates=[1, 2]),
    )
    base.update(overrides)
    return AdaptationConfig(**base)


PRESETS = {
    "full": full_scale_config,
    "desk": desk_scale_config,
    "tiny": tiny_scale_config,
}
