"""Slice-wise inference and validation DSC."""

from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from dataio.preprocess import check_preprocessed
from dataio.volumes import LabelMask, SliceBatch, Volume
from evaluation.metrics import dsc_metric
from stylecomp.compensation import to_source_style


@torch.no_grad()
def predict_volume(
    net,
    volume: Volume,
    sc=None,
    batch_size: int = 8,
    device: str = "cpu",
) -> LabelMask:
    """
    Eval-mode per-slice argmax, reassembled into a 3D mask.

    Args:
        net: Segmentation U-Net
        sc: Optional SC network applied before net (the U2∘SC composition)
    """
    check_preprocessed(volume)
    net.eval()
    if sc is not None:
        sc.eval()

    labels = []
    voxels = torch.from_numpy(volume.voxels).unsqueeze(1)
    for start in range(0, voxels.shape[0], batch_size):
        batch = SliceBatch(voxels[start:start + batch_size].to(device))
        if sc is not None:
            batch, _ = to_source_style(sc, batch, train_mode=False)
        probs = net(batch.images)
        labels.append(probs.argmax(dim=1).cpu().numpy().astype(np.uint8))
    return LabelMask(np.concatenate(labels, axis=0), net.spec.num_classes)


def infer_volume(u3, volume: Volume, batch_size: int = 8, device: str = "cpu") -> LabelMask:
    """Segment a preprocessed volume with the desired model."""
    return predict_volume(u3, volume, batch_size=batch_size, device=device)


def mean_dsc(
    net,
    dataset: Sequence[Tuple[Volume, LabelMask]],
    sc=None,
    device: str = "cpu",
) -> float:
    """Mean foreground DSC over volumes and classes."""
    scores: List[float] = []
    for volume, mask in dataset:
        pred = predict_volume(net, volume, sc=sc, device=device)
        for c in range(1, mask.num_classes):
            scores.append(dsc_metric(pred, mask, c))
    return float(np.mean(scores)) if scores else float("nan")
