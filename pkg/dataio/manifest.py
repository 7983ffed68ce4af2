"""Dataset manifests and volume-level train/test splits."""

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from dataio.preprocess import PreprocessSpec, crop, preprocess
from dataio.volumes import LabelMask, ModalityTag, Volume, load_volume

Split = Literal["train", "test"]


class ManifestEntry(BaseModel):
    """One volume on disk."""
    volume: str = Field(description="Volume file path")
    mask: Optional[str] = Field(default=None, description="Mask file path (NIfTI only; raw files embed masks)")
    modality_tag: ModalityTag = "target_like"
    crop: Optional[List[int]] = Field(default=None, description="[z0, z1, y0, y1, x0, x1] applied before preprocessing")

    @field_validator("crop")
    @classmethod
    def _check_crop(cls, value):
        if value is not None and len(value) != 6:
            raise ValueError(f"crop needs 6 entries [z0, z1, y0, y1, x0, x1], got {value}")
        return value


class DatasetManifest(BaseModel):
    """Entries plus their split assignment (keyed by volume path)."""
    entries: List[ManifestEntry] = Field(default_factory=list)
    split: Dict[str, Split] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_partition(self):
        paths = [e.volume for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("Manifest volume paths must be unique")
        if self.split:
            unknown = set(self.split) - set(paths)
            if unknown:
                raise ValueError(f"Split refers to unknown volumes: {sorted(unknown)}")
            missing = set(paths) - set(self.split)
            if missing:
                raise ValueError(f"Split does not assign volumes: {sorted(missing)}")
        return self

    def entries_in(self, split: Split) -> List[ManifestEntry]:
        return [e for e in self.entries if self.split.get(e.volume) == split]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    manifest = DatasetManifest.model_validate_json(path.read_text())

    # Relative entry paths are relative to the manifest file
    base = path.parent
    def resolve(p):
        return p if p is None or Path(p).is_absolute() else str(base / p)

    entries = [e.model_copy(update={"volume": resolve(e.volume), "mask": resolve(e.mask)}) for e in manifest.entries]
    split = {resolve(k): v for k, v in manifest.split.items()}
    return DatasetManifest(entries=entries, split=split)


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(), indent=2))
    return path


def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    """
    Randomly assign whole volumes to train/test.

    Args:
        manifest: Manifest whose entries are split (any existing split is replaced)
        train_fraction: Share of volumes for training, in (0, 1]
        seed: Seed of the permutation

    Returns:
        A new manifest with the split filled in
    """
    if not 0 < train_fraction <= 1:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    n = len(manifest.entries)
    if train_fraction < 1 and n < 2:
        raise ValueError(f"Need at least 2 volumes to hold out a test split, got {n}")

    if train_fraction == 1:
        n_train = n
    else:
        n_train = min(max(int(round(train_fraction * n)), 1), n - 1)

    order = np.random.default_rng(seed).permutation(n)
    split = {}
    for rank, idx in enumerate(order):
        split[manifest.entries[idx].volume] = "train" if rank < n_train else "test"
    print(f"[DATAIO] Split {n} volumes -> {n_train} train / {n - n_train} test (seed {seed})")
    return DatasetManifest(entries=list(manifest.entries), split=split)


def load_split(
    manifest: DatasetManifest,
    split: Split,
    specs: Dict[str, PreprocessSpec],
    require_masks: bool = False,
) -> List[Tuple[Volume, Optional[LabelMask]]]:
    """
    Load and preprocess every volume of one split.

    Test volumes always keep their background slices.

    Args:
        specs: PreprocessSpec per modality tag
        require_masks: Raise if a volume has no mask
    """
    dataset = []
    for entry in manifest.entries_in(split):
        volume, mask = load_volume(entry.volume, mask_path=entry.mask, modality_tag=entry.modality_tag)
        if require_masks and mask is None:
            raise ValueError(f"Volume {entry.volume} has no label mask")
        if entry.crop is not None:
            volume, mask = crop(volume, mask, entry.crop)
        spec = specs[entry.modality_tag]
        if split == "test":
            spec = spec.model_copy(update={"strip_background": False})
        dataset.append(preprocess(volume, mask, spec))
    print(f"[DATAIO] Loaded {len(dataset)} {split} volumes")
    return dataset
