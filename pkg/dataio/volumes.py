"""Volume containers and on-disk formats (NIfTI and portable-raw)."""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Tuple

import nibabel as nib
import numpy as np
import torch

from config.settings import NUM_CLASSES

ModalityTag = Literal["source_like", "target_like"]
VolumeFormat = Literal["nifti", "raw"]

# portable-raw: little-endian magic, version, slices, H, W, has_mask, spacing[3]
RAW_MAGIC = b"SFDA"
RAW_VERSION = 1
RAW_HEADER = struct.Struct("<4sIIIIB3f")


@dataclass
class Volume:
    """A 3D image stored as (slices, H, W)."""

    voxels: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality_tag: ModalityTag = "target_like"
    name: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"Volume must be 3D (slices, H, W), got shape {self.voxels.shape}")
        if self.voxels.shape[0] < 1:
            raise ValueError("Volume must contain at least one slice")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class LabelMask:
    """Per-voxel class ids 0..num_classes-1, 0 = background."""

    labels: np.ndarray
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"LabelMask must be 3D (slices, H, W), got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(
                f"Label ids must lie in [0, {self.num_classes - 1}], "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        self.labels = labels.astype(np.uint8)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.labels.shape


@dataclass
class SliceBatch:
    """A 2D training batch: images (B, 1, H, W) and optional masks (B, H, W)."""

    images: torch.Tensor
    masks: Optional[torch.Tensor] = None
    indices: Optional[torch.Tensor] = field(default=None, repr=False)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"Batch images must be 4D (B, C, H, W), got {tuple(self.images.shape)}")
        if self.images.shape[0] == 0:
            raise ValueError("Batch must contain at least one image")
        if not torch.isfinite(self.images).all():
            raise ValueError("Batch images contain non-finite values")
        if self.masks is not None and self.masks.shape != (self.images.shape[0],) + tuple(self.images.shape[2:]):
            raise ValueError(
                f"Mask shape {tuple(self.masks.shape)} does not match images {tuple(self.images.shape)}"
            )

    def to(self, device) -> "SliceBatch":
        masks = self.masks.to(device) if self.masks is not None else None
        return SliceBatch(self.images.to(device), masks, self.indices)


def check_pair(volume: Volume, mask: Optional[LabelMask]):
    """Raise if a mask does not match its volume."""
    if mask is not None and mask.shape != volume.shape:
        raise ValueError(f"Mask shape {mask.shape} does not match volume shape {volume.shape}")


def infer_format(path: Path) -> VolumeFormat:
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return "nifti"
    return "raw"


def mask_path_for(path: Path) -> Path:
    """Sibling mask path of a NIfTI volume: case01.nii.gz -> case01_mask.nii.gz."""
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.lower().endswith(suffix):
            return path.with_name(name[: -len(suffix)] + "_mask" + suffix)
    return path.with_name(path.stem + "_mask" + path.suffix)


# =========================
# Loading
# =========================

def load_volume(
    path,
    format: Optional[VolumeFormat] = None,
    mask_path=None,
    modality_tag: ModalityTag = "target_like",
    num_classes: int = NUM_CLASSES,
) -> Tuple[Volume, Optional[LabelMask]]:
    """
    Load a volume and, if one exists on disk, its label mask.

    Args:
        path: Volume file
        format: "nifti" or "raw"; inferred from the file name when omitted
        mask_path: Explicit NIfTI mask file (defaults to the sibling *_mask file)
        modality_tag: Domain tag attached to the returned volume

    Returns:
        (Volume, LabelMask or None)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Volume file not found: {path}")
    format = format or infer_format(path)

    if format == "raw":
        volume, mask = _load_raw(path, modality_tag, num_classes)
    elif format == "nifti":
        volume, mask = _load_nifti(path, mask_path, modality_tag, num_classes)
    else:
        raise ValueError(f"Unknown volume format '{format}'. Use 'nifti' or 'raw'.")

    check_pair(volume, mask)
    return volume, mask


def _load_nifti(path: Path, mask_path, modality_tag, num_classes):
    try:
        img = nib.load(str(path))
        data = np.asarray(img.get_fdata(), dtype=np.float32)
    except Exception as e:
        raise OSError(f"Cannot read NIfTI volume {path}: {str(e)}")
    if data.ndim != 3:
        raise ValueError(f"Expected a 3D NIfTI volume, got shape {data.shape}")

    # (X, Y, Z) on disk -> (slices, rows, cols)
    zooms = img.header.get_zooms()[:3]
    volume = Volume(
        voxels=data.transpose(2, 1, 0),
        spacing=(zooms[2], zooms[1], zooms[0]),
        modality_tag=modality_tag,
        name=path.name.split(".")[0],
    )

    mask_path = Path(mask_path) if mask_path else mask_path_for(path)
    mask = None
    if mask_path.exists():
        try:
            labels = np.asarray(nib.load(str(mask_path)).get_fdata())
        except Exception as e:
            raise OSError(f"Cannot read NIfTI mask {mask_path}: {str(e)}")
        if labels.ndim != 3:
            raise ValueError(f"Expected a 3D NIfTI mask, got shape {labels.shape}")
        mask = LabelMask(np.rint(labels).astype(np.int64).transpose(2, 1, 0), num_classes)
    return volume, mask


def _load_raw(path: Path, modality_tag, num_classes):
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise OSError(f"Cannot read raw volume {path}: {str(e)}")
    if len(payload) < RAW_HEADER.size:
        raise OSError(f"Raw volume {path} is truncated (no header)")

    magic, version, slices, height, width, has_mask, sz, sy, sx = RAW_HEADER.unpack_from(payload)
    if magic != RAW_MAGIC:
        raise OSError(f"{path} is not a portable-raw volume (bad magic {magic!r})")
    if version != RAW_VERSION:
        raise OSError(f"Unsupported portable-raw version {version} in {path}")

    count = slices * height * width
    offset = RAW_HEADER.size
    expected = offset + 4 * count + (count if has_mask else 0)
    if len(payload) != expected:
        raise OSError(f"Raw volume {path} has {len(payload)} bytes, expected {expected}")

    voxels = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
    volume = Volume(
        voxels=voxels.reshape(slices, height, width).copy(),
        spacing=(sz, sy, sx),
        modality_tag=modality_tag,
        name=path.stem,
    )
    mask = None
    if has_mask:
        labels = np.frombuffer(payload, dtype=np.uint8, count=count, offset=offset + 4 * count)
        mask = LabelMask(labels.reshape(slices, height, width).copy(), num_classes)
    return volume, mask


# =========================
# Saving
# =========================

def save_volume(volume: Volume, mask: Optional[LabelMask], path, format: Optional[VolumeFormat] = None) -> Path:
    """Write a volume (and mask) as portable-raw or NIfTI; returns the volume path."""
    path = Path(path)
    check_pair(volume, mask)
    format = format or infer_format(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    if format == "raw":
        slices, height, width = volume.shape
        header = RAW_HEADER.pack(
            RAW_MAGIC, RAW_VERSION, slices, height, width,
            1 if mask is not None else 0, *volume.spacing,
        )
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())
            if mask is not None:
                f.write(np.ascontiguousarray(mask.labels, dtype=np.uint8).tobytes())
    elif format == "nifti":
        sz, sy, sx = volume.spacing
        affine = np.diag([sx, sy, sz, 1.0])
        nib.save(nib.Nifti1Image(volume.voxels.transpose(2, 1, 0).copy(), affine), str(path))
        if mask is not None:
            nib.save(
                nib.Nifti1Image(mask.labels.transpose(2, 1, 0).copy(), affine),
                str(mask_path_for(path)),
            )
    else:
        raise ValueError(f"Unknown volume format '{format}'. Use 'nifti' or 'raw'.")

    if not path.exists() or path.stat().st_size == 0:
        raise OSError(f"Failed to save volume: {path}")
    return path
