"""Intensity clipping, rescaling, resizing and background-slice removal."""

from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator

from dataio.volumes import LabelMask, Volume, check_pair


class PreprocessSpec(BaseModel):
    """Per-modality preprocessing parameters."""
    clip_lo: float = Field(description="Lower intensity bound")
    clip_hi: float = Field(description="Upper intensity bound")
    target_size: int = Field(default=256, gt=0, description="Output slice height and width")
    strip_background: bool = Field(default=True, description="Drop slices whose mask is all background")
    rescale: bool = Field(default=True, description="Min-max rescale the clipped data to [0, 1]")

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.clip_lo < self.clip_hi:
            raise ValueError(f"clip_lo ({self.clip_lo}) must be < clip_hi ({self.clip_hi})")
        return self


# CT window of the source domain and MR window of the target domain
SOURCE_LIKE_SPEC = PreprocessSpec(clip_lo=-100.0, clip_hi=400.0)
TARGET_LIKE_SPEC = PreprocessSpec(clip_lo=0.0, clip_hi=1200.0)

# synthetic volumes are generated in [0, 1] at their final size
SYNTHETIC_SPEC = PreprocessSpec(clip_lo=0.0, clip_hi=1.0, target_size=64, rescale=False)


def crop(volume: Volume, mask: Optional[LabelMask], box: Sequence[int]) -> Tuple[Volume, Optional[LabelMask]]:
    """Crop to [z0, z1) x [y0, y1) x [x0, x1)."""
    if len(box) != 6:
        raise ValueError(f"Crop box needs 6 entries [z0, z1, y0, y1, x0, x1], got {list(box)}")
    z0, z1, y0, y1, x0, x1 = (int(b) for b in box)
    slices, height, width = volume.shape
    if not (0 <= z0 < z1 <= slices and 0 <= y0 < y1 <= height and 0 <= x0 < x1 <= width):
        raise ValueError(f"Crop box {list(box)} lies outside volume of shape {volume.shape}")

    cropped = Volume(volume.voxels[z0:z1, y0:y1, x0:x1], volume.spacing, volume.modality_tag, volume.name)
    cropped_mask = None
    if mask is not None:
        cropped_mask = LabelMask(mask.labels[z0:z1, y0:y1, x0:x1], mask.num_classes)
    return cropped, cropped_mask


def rescale_intensity(voxels: np.ndarray, clip_lo: float, clip_hi: float) -> np.ndarray:
    """Clip to [clip_lo, clip_hi], then min-max rescale the clipped data to [0, 1]."""
    clipped = np.clip(voxels.astype(np.float64), clip_lo, clip_hi)
    lo, hi = clipped.min(), clipped.max()
    if hi <= lo:
        return np.zeros_like(clipped, dtype=np.float32)
    return ((clipped - lo) / (hi - lo)).astype(np.float32)


def resize_slices(voxels: np.ndarray, size: int, nearest: bool = False) -> np.ndarray:
    """Resize every slice to size x size (bilinear, or nearest for labels)."""
    if voxels.shape[1:] == (size, size):
        return voxels
    tensor = torch.from_numpy(np.ascontiguousarray(voxels, dtype=np.float32)).unsqueeze(1)
    if nearest:
        resized = F.interpolate(tensor, size=(size, size), mode="nearest")
    else:
        resized = F.interpolate(tensor, size=(size, size), mode="bilinear", align_corners=False)
    return resized.squeeze(1).numpy()


def preprocess(
    volume: Volume,
    mask: Optional[LabelMask],
    spec: PreprocessSpec,
) -> Tuple[Volume, Optional[LabelMask]]:
    """
    Clip + rescale intensities, resize slices and optionally strip background slices.

    Returns:
        (preprocessed Volume, preprocessed LabelMask or None)
    """
    check_pair(volume, mask)

    if spec.rescale:
        voxels = rescale_intensity(volume.voxels, spec.clip_lo, spec.clip_hi)
    else:
        voxels = np.clip(volume.voxels, spec.clip_lo, spec.clip_hi).astype(np.float32)
    voxels = np.clip(resize_slices(voxels, spec.target_size), 0.0, 1.0)

    labels = None
    if mask is not None:
        labels = resize_slices(mask.labels, spec.target_size, nearest=True)
        labels = np.rint(labels).astype(np.uint8)

    if spec.strip_background and labels is not None:
        keep = labels.reshape(labels.shape[0], -1).max(axis=1) > 0
        if not keep.any():
            raise ValueError(f"Volume '{volume.name}' has no foreground slices left after stripping background")
        dropped = int((~keep).sum())
        if dropped:
            print(f"[DATAIO] Stripped {dropped} background slices from '{volume.name}'")
        voxels, labels = voxels[keep], labels[keep]

    out_volume = Volume(voxels, volume.spacing, volume.modality_tag, volume.name)
    out_mask = LabelMask(labels, mask.num_classes) if mask is not None else None
    return out_volume, out_mask


def check_preprocessed(volume: Volume, divisor: int = 16, tolerance: float = 1e-6):
    """Raise unless the volume looks preprocessed (intensities in [0, 1], dims divisible)."""
    lo, hi = float(volume.voxels.min()), float(volume.voxels.max())
    if lo < -tolerance or hi > 1.0 + tolerance:
        raise ValueError(
            f"Volume '{volume.name}' intensities [{lo:.4g}, {hi:.4g}] are outside [0, 1]; run preprocess first"
        )
    _, height, width = volume.shape
    if height % divisor or width % divisor:
        raise ValueError(f"Slice size {height}x{width} must be divisible by {divisor}")
