"""Run configuration: KEY=VALUE file + command-line overrides."""

import hashlib
import json
from pathlib import Path
from typing import Dict, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, Field

from config.settings import DEVICE, OUTPUT_DIR
from dataio.preprocess import SOURCE_LIKE_SPEC, SYNTHETIC_SPEC, TARGET_LIKE_SPEC, PreprocessSpec
from dataio.synthetic import SyntheticSpec
from engine.config import PRESETS, AblationFlags, AdaptationConfig

Command = Literal["pretrain", "adapt", "eval", "synth", "refine", "ablate"]

# path fields each command reads
REQUIRED_PATHS: Dict[str, tuple] = {
    "pretrain": ("manifest",),
    "adapt": ("manifest", "checkpoint"),
    "eval": ("manifest", "checkpoint"),
    "synth": (),
    "refine": ("volume", "soft_mask"),
    "ablate": ("manifest", "checkpoint"),
}


class RunConfig(BaseModel):
    """Everything one CLI invocation needs; keys of a config file are these field names."""
    command: Command
    preset: Literal["full", "desk", "tiny"] = Field(
        default="full", description="full_scale_config, desk_scale_config or tiny_scale_config (smoke runs)"
    )
    preprocess: Literal["clinical", "synthetic"] = Field(
        default="clinical", description="CT/MR windows, or synthetic volumes already in [0, 1]"
    )

    manifest: Optional[Path] = Field(default=None, description="Dataset manifest (source for pretrain, target otherwise)")
    checkpoint: Optional[Path] = Field(default=None, description="Source model for adapt/ablate; model or bundle for eval")
    labeled_volume: Optional[Path] = Field(default=None, description="Labeled target volume enabling the extension module")
    resume: Optional[Path] = Field(default=None, description="Adaptation bundle to resume from")
    volume: Optional[Path] = Field(default=None, description="Image volume for refine")
    soft_mask: Optional[Path] = Field(default=None, description="Soft mask (.npy S,C,H,W) or label volume for refine")
    out: Path = Field(default=Path(OUTPUT_DIR))

    domain: Literal["source", "target"] = Field(default="source", description="pretrain on source, or target (upper bound)")
    network: Literal["u3", "source"] = Field(default="u3", description="Spec of a single-network checkpoint given to eval")
    train_fraction: float = Field(default=0.8, gt=0, le=1)

    seed: int = 0
    epochs: Optional[int] = Field(default=None, gt=0)
    stage_t: Optional[int] = Field(default=None, gt=0)
    batch: Optional[int] = Field(default=None, gt=0)
    source_epochs: Optional[int] = Field(default=None, gt=0)
    validate_every: Optional[int] = Field(default=None, ge=1)
    device: str = DEVICE
    dump_triplets: bool = False
    entropy_on_u3: bool = False
    flat_dice: bool = False

    no_fms: bool = False
    no_emin: bool = False
    no_sc: bool = False
    with_st: bool = False
    no_pamr: bool = False
    no_cl: bool = False

    image_size: int = Field(default=64, gt=0)
    slices_per_volume: int = Field(default=10, gt=0)
    volumes_per_domain: int = Field(default=20, gt=0)

    digest: str = Field(default="", description="SHA-256 of the resolved config (filled by parse_config)")

    def ablation(self) -> AblationFlags:
        return AblationFlags(
            no_fms=self.no_fms, no_emin=self.no_emin, no_sc=self.no_sc,
            with_st=self.with_st, no_pamr=self.no_pamr, no_cl=self.no_cl,
        )

    def adaptation_config(self, ablation: Optional[AblationFlags] = None) -> AdaptationConfig:
        """Preset defaults with this run's overrides applied."""
        base = PRESETS[self.preset]()
        update = {
            "seed": self.seed,
            "device": self.device,
            "dump_triplets": self.dump_triplets,
            "entropy_on_u3": self.entropy_on_u3,
            "flat_dice": self.flat_dice,
            "ablation": ablation or self.ablation(),
        }
        if self.source_epochs:
            update["source_epochs"] = self.source_epochs
        if self.validate_every:
            update["validate_every"] = self.validate_every
        if self.epochs or self.stage_t:
            update["schedule"] = {
                "stage_t": self.stage_t or base.schedule.stage_t,
                "total_epochs": self.epochs or base.schedule.total_epochs,
            }
        if self.batch:
            for name in ("source_optim", "u1_optim", "sc_optim", "u3_optim"):
                update[name] = getattr(base, name).model_copy(update={"batch_size": self.batch})

        # revalidate so schedule and batch-size invariants are checked
        merged = base.model_dump()
        merged.update({k: (v.model_dump() if isinstance(v, BaseModel) else v) for k, v in update.items()})
        return AdaptationConfig.model_validate(merged)

    def preprocess_specs(self) -> Dict[str, PreprocessSpec]:
        if self.preprocess == "synthetic":
            spec = SYNTHETIC_SPEC.model_copy(update={"target_size": self.image_size})
            return {"source_like": spec, "target_like": spec}
        return {"source_like": SOURCE_LIKE_SPEC, "target_like": TARGET_LIKE_SPEC}

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            image_size=self.image_size,
            slices_per_volume=self.slices_per_volume,
            volumes_per_domain=self.volumes_per_domain,
        )


VALID_KEYS = sorted(k for k in RunConfig.model_fields if k != "digest")


def config_digest(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json", exclude={"digest"}), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def parse_config(path=None, overrides: Optional[Dict] = None) -> RunConfig:
    """
    Resolve a run config from an optional KEY=VALUE file and flag overrides.

    Args:
        path: Config file (same syntax as .env); keys are RunConfig field names
        overrides: Flag values; None means "not given" and keeps the file value

    Returns:
        Validated RunConfig with its digest filled in
    """
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        values = {k.strip().lower(): v for k, v in dotenv_values(path).items()}

    given = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = sorted((set(values) | set(given)) - set(VALID_KEYS))
    if unknown:
        raise ValueError(f"Unknown config keys {unknown}; valid keys: {', '.join(VALID_KEYS)}")
    values.update(given)

    cfg = RunConfig.model_validate(values)
    for key in REQUIRED_PATHS[cfg.command]:
        value = getattr(cfg, key)
        if value is None:
            raise ValueError(f"'{cfg.command}' needs a {key} path")
        if not Path(value).exists():
            raise FileNotFoundError(f"{key} path does not exist: {value}")
    for key in ("labeled_volume", "resume"):
        value = getattr(cfg, key)
        if value is not None and not Path(value).exists():
            raise FileNotFoundError(f"{key} path does not exist: {value}")

    cfg.digest = config_digest(cfg)
    return cfg


def write_run_record(cfg: RunConfig, out_dir=None) -> Path:
    """Resolved config + digest next to the run's outputs."""
    out_dir = Path(out_dir or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_config.json"
    path.write_text(json.dumps({"digest": cfg.digest, "config": cfg.model_dump(mode="json")}, indent=2))
    return path
