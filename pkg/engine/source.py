"""Supervised training of the source model (also used for the supervised upper bound)."""

from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
from tqdm import tqdm

from dataio.batches import batch_iter
from engine.config import AdaptationConfig, OptimizerSettings
from engine.inference import mean_dsc
from losses.dice import dice_loss, one_hot
from segnet.checkpoint import save_network
from segnet.unet import UNet, build_unet, forward


def make_optimizer(params, settings: OptimizerSettings) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if settings.kind == "rmsprop":
        return torch.optim.RMSprop(params, lr=settings.lr, alpha=settings.alpha)
    if settings.kind == "adam":
        return torch.optim.Adam(params, lr=settings.lr)
    raise ValueError(f"Unknown optimizer kind '{settings.kind}'")


def supervised_epoch(net, dataset, optimizer, batch_size: int, seed: int, epoch: int, flat_dice: bool, device: str) -> float:
    """One epoch of dice-supervised training; returns the mean batch loss."""
    losses = []
    for batch in batch_iter(dataset, batch_size, seed, epoch, use_masks=True):
        batch = batch.to(device)
        if batch.masks is None:
            raise ValueError("Supervised training needs labeled slices")
        probs = forward(net, batch, train_mode=True)
        loss = dice_loss(probs, one_hot(batch.masks, probs.shape[1]), flat=flat_dice)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    return float(np.mean(losses))


def train_source(
    source_ds,
    cfg: AdaptationConfig,
    val_ds=None,
    out_path: Optional[str] = None,
    tag: str = "SOURCE",
) -> Tuple[UNet, Optional[Path]]:
    """
    Train a U-Net with the source spec on labeled volumes.

    The checkpoint keeps the batch-norm running statistics that later act
    as the source feature statistics.

    Args:
        source_ds: List of (Volume, LabelMask); every mask must be present
        val_ds: Optional labeled volumes for per-epoch DSC
        out_path: Where to save the checkpoint

    Returns:
        (trained network, checkpoint path or None)
    """
    if not source_ds:
        raise ValueError("Source dataset is empty")
    for volume, mask in source_ds:
        if mask is None:
            raise ValueError(f"Source volume '{volume.name}' is unlabeled; supervised training needs every mask")

    net = build_unet(cfg.source_spec, cfg.seed).to(cfg.device)
    optimizer = make_optimizer(net.parameters(), cfg.source_optim)
    print(
        f"[{tag}] Training {cfg.source_spec.block_filters} U-Net on {len(source_ds)} volumes "
        f"({cfg.source_epochs} epochs, {cfg.source_optim.kind} lr={cfg.source_optim.lr}, "
        f"batch {cfg.source_optim.batch_size})"
    )

    history = []
    progress = tqdm(range(cfg.source_epochs), desc=f"{tag.lower()} training")
    for epoch in progress:
        loss = supervised_epoch(
            net, source_ds, optimizer, cfg.source_optim.batch_size, cfg.seed, epoch, cfg.flat_dice, cfg.device
        )
        row = {"epoch": epoch, "loss": loss}
        if val_ds:
            row["val_dsc"] = mean_dsc(net, val_ds, device=cfg.device)
        history.append(row)
        progress.set_postfix({k: round(v, 4) for k, v in row.items() if k != "epoch"})

    path = None
    if out_path:
        path = save_network(net, out_path, metadata={"seed": cfg.seed, "epochs": cfg.source_epochs, "history": history})
        print(f"[{tag}] ✅ Saved checkpoint to {path}")
    return net, path
