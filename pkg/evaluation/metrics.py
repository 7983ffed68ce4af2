"""Volume-level DSC and ASSD."""

from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from config.settings import NUM_CLASSES
from dataio.volumes import LabelMask

ASSD_SENTINEL = 9999.0

MaskLike = Union[LabelMask, np.ndarray]


def _labels(mask: MaskLike) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)


def _binarize(pred: MaskLike, gt: MaskLike, class_id: int, num_classes: Optional[int]):
    if num_classes is None:
        num_classes = gt.num_classes if isinstance(gt, LabelMask) else NUM_CLASSES
    if not 0 <= class_id < num_classes:
        raise ValueError(f"Unknown class id {class_id}; expected 0..{num_classes - 1}")
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ValueError(f"Prediction shape {p.shape} != ground-truth shape {g.shape}")
    return p == class_id, g == class_id


def dsc_metric(pred: MaskLike, gt: MaskLike, class_id: int, num_classes: Optional[int] = None) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both are empty."""
    p, g = _binarize(pred, gt, class_id, num_classes)
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / denom)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one 6-connected background neighbour (outside counts as background)."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def assd_metric(
    pred: MaskLike,
    gt: MaskLike,
    class_id: int,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    num_classes: Optional[int] = None,
) -> float:
    """
    Mean of the two directed average surface distances (voxel units by default).

    Returns ASSD_SENTINEL when either surface is empty.
    """
    p, g = _binarize(pred, gt, class_id, num_classes)
    sp, sg = surface_voxels(p), surface_voxels(g)
    if not sp.any() or not sg.any():
        return ASSD_SENTINEL

    sampling = tuple(spacing)[-p.ndim:]
    to_gt = ndimage.distance_transform_edt(~sg, sampling=sampling)
    to_pred = ndimage.distance_transform_edt(~sp, sampling=sampling)
    return float((to_gt[sp].mean() + to_pred[sg].mean()) / 2.0)
