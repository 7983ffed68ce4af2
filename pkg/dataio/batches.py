"""Slice-level datasets and deterministic batch iteration."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from config.settings import NUM_WORKERS
from dataio.volumes import LabelMask, SliceBatch, Volume

VolumeItem = Union[Volume, Tuple[Volume, Optional[LabelMask]]]


class SliceDataset(Dataset):
    """All 2D slices of a list of volumes, with masks when every volume has one."""

    def __init__(self, volumes: Sequence[VolumeItem], use_masks: bool = True):
        pairs = [item if isinstance(item, tuple) else (item, None) for item in volumes]
        if not pairs:
            raise ValueError("Dataset contains no volumes")

        self.images = np.concatenate([v.voxels for v, _ in pairs], axis=0)[:, None].astype(np.float32)
        self.has_masks = use_masks and all(m is not None for _, m in pairs)
        self.masks = None
        if self.has_masks:
            self.masks = np.concatenate([m.labels for _, m in pairs], axis=0).astype(np.int64)

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, idx):
        image = torch.from_numpy(self.images[idx])
        mask = torch.from_numpy(self.masks[idx]) if self.has_masks else None
        return idx, image, mask


def collate_slices(items: List) -> SliceBatch:
    indices = torch.tensor([i for i, _, _ in items], dtype=torch.long)
    images = torch.stack([img for _, img, _ in items])
    masks = None
    if items[0][2] is not None:
        masks = torch.stack([m for _, _, m in items])
    return SliceBatch(images, masks, indices)


def epoch_generator(seed: int, epoch: int) -> torch.Generator:
    """Shuffle order for one epoch is a pure function of (seed, epoch)."""
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(epoch))


def batch_iter(
    dataset,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    shuffle: bool = True,
    use_masks: bool = True,
    num_workers: int = NUM_WORKERS,
) -> DataLoader:
    """
    Iterate shuffled fixed-size slice batches; the final partial batch is dropped.

    Args:
        dataset: SliceDataset or list of volumes / (volume, mask) pairs
        batch_size: Slices per batch
        seed: Base seed of the shuffle
        epoch: Epoch index mixed into the seed
        use_masks: Attach masks when all volumes carry one

    Returns:
        DataLoader yielding SliceBatch
    """
    if batch_size <= 0:
        raise ValueError(f"batch_size must be > 0, got {batch_size}")
    if not isinstance(dataset, SliceDataset):
        dataset = SliceDataset(dataset, use_masks=use_masks)
    if len(dataset) < batch_size:
        raise ValueError(f"Dataset has {len(dataset)} slices, fewer than batch_size {batch_size}")

    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        drop_last=True,
        generator=epoch_generator(seed, epoch) if shuffle else None,
        collate_fn=collate_slices,
        num_workers=num_workers,
    )
