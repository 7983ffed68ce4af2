"""Element-wise style compensation and triplet image dumps."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from dataio.volumes import SliceBatch
from stylecomp.network import CompensationCoefficient, SCNet, sc_forward


def compensate(x_t: SliceBatch, p_s: CompensationCoefficient) -> SliceBatch:
    """x_{t->s} = x_t * p_s, broadcast over the channel axis."""
    images = x_t.images
    if p_s.ndim != 4 or p_s.shape[0] != images.shape[0] or p_s.shape[2:] != images.shape[2:]:
        raise ValueError(
            f"Coefficient shape {tuple(p_s.shape)} does not match image shape {tuple(images.shape)}"
        )
    if p_s.shape[1] not in (1, images.shape[1]):
        raise ValueError(f"Coefficient must have 1 or {images.shape[1]} channels, got {p_s.shape[1]}")
    return SliceBatch(images * p_s, x_t.masks, x_t.indices)


def to_source_style(net: SCNet, x_t: SliceBatch, train_mode: bool = False):
    """
    Source-like image for U2 plus the raw SC output.

    In "translate" mode the SC output is used as the image directly.
    """
    out = sc_forward(net, x_t, train_mode)
    if net.spec.mode == "translate":
        return SliceBatch(out, x_t.masks, x_t.indices), out
    return compensate(x_t, out), out


def _to_uint8(tile: torch.Tensor) -> np.ndarray:
    return (tile.detach().cpu().clamp(0, 1).numpy() * 255).round().astype(np.uint8)


def save_triplet_grid(x_t: torch.Tensor, p_s: torch.Tensor, x_ts: torch.Tensor, path, max_rows: int = 4) -> Path:
    """One row per slice: x_t | p_s | x_{t->s}, grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(min(max_rows, x_t.shape[0])):
        rows.append(np.concatenate([_to_uint8(x_t[i, 0]), _to_uint8(p_s[i, 0]), _to_uint8(x_ts[i, 0])], axis=1))
    Image.fromarray(np.concatenate(rows, axis=0)).save(path)
    return path
