"""Batch-norm feature statistics: batch-computed vs stored running values."""

from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn as nn

from dataio.volumes import SliceBatch
from segnet.unet import PredictionMap


@dataclass
class LayerStats:
    layer_id: str
    mean: torch.Tensor
    var: torch.Tensor


def _block_of(module_name: str) -> str:
    # "blocks.conv2.4" -> "conv2"
    parts = module_name.split(".")
    return parts[1] if len(parts) > 1 and parts[0] == "blocks" else parts[0]


class FeatureStatsRecorder:
    """
    Context manager recording channel-wise mean/variance of every batch-norm
    layer's input during forward passes. Statistics keep their autograd graph.
    """

    def __init__(self, net: nn.Module, frozen_only: bool = False):
        self.net = net
        frozen = getattr(net, "frozen_blocks", set())
        self.layers = [
            (name, m) for name, m in net.named_modules()
            if isinstance(m, nn.BatchNorm2d) and (not frozen_only or _block_of(name) in frozen)
        ]
        self._recorded = {}
        self._handles = []

    def __enter__(self):
        self._recorded = {}
        for name, module in self.layers:
            self._handles.append(module.register_forward_hook(self._hook(name)))
        return self

    def __exit__(self, *exc):
        for handle in self._handles:
            handle.remove()
        self._handles = []
        return False

    def _hook(self, name):
        def record(module, inputs, output):
            x = inputs[0]
            self._recorded[name] = LayerStats(
                name,
                x.mean(dim=(0, 2, 3)),
                x.var(dim=(0, 2, 3), unbiased=False),
            )
        return record

    @property
    def batch_stats(self) -> List[LayerStats]:
        """Recorded statistics in layer order (layers not reached are skipped)."""
        return [self._recorded[name] for name, _ in self.layers if name in self._recorded]

    def running_stats(self) -> List[LayerStats]:
        return [
            LayerStats(name, m.running_mean.detach().clone(), m.running_var.detach().clone())
            for name, m in self.layers
        ]


def collect_feature_stats(
    net: nn.Module,
    batch: SliceBatch,
    train_mode: bool = True,
    frozen_only: bool = False,
    return_probs: bool = False,
):
    """
    Forward a batch and return (batch_stats, running_stats), layer-aligned.

    Running statistics are read before the forward pass, so batch-norm layers
    that update their running averages report the values the batch is compared against.

    Args:
        frozen_only: Restrict to batch-norm layers in frozen blocks
        return_probs: Also return the prediction map as a third element
    """
    recorder = FeatureStatsRecorder(net, frozen_only=frozen_only)
    if not recorder.layers:
        raise ValueError("Network has no batch-norm layers to collect statistics from")

    running = recorder.running_stats()
    net.train(train_mode)
    with recorder:
        probs: PredictionMap = net(batch.images)

    if return_probs:
        return recorder.batch_stats, running, probs
    return recorder.batch_stats, running
