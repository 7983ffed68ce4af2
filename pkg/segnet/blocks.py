"""Block-structured networks with per-block freezing."""

import hashlib
from typing import Iterable, Optional, Set

import torch.nn as nn
from pydantic import BaseModel, Field


class FreezePlan(BaseModel):
    """Blocks that receive gradient updates; every other block is frozen."""
    trainable_block_ids: Set[str] = Field(default_factory=set)


class BlockNetwork(nn.Module):
    """
    A network whose layers live in named blocks (self.blocks).

    Frozen blocks have requires_grad off and keep their batch-norm layers in
    eval mode even while the network trains.
    """

    def __init__(self):
        super().__init__()
        self.blocks = nn.ModuleDict()
        self.frozen_blocks: Set[str] = set()

    def block_ids(self):
        return list(self.blocks.keys())

    def trainable_block_ids(self):
        return [b for b in self.blocks if b not in self.frozen_blocks]

    def train(self, mode: bool = True):
        super().train(mode)
        for block_id in self.frozen_blocks:
            self.blocks[block_id].eval()
        return self


def full_plan(net: BlockNetwork) -> FreezePlan:
    return FreezePlan(trainable_block_ids=set(net.block_ids()))


def apply_freeze(net: BlockNetwork, plan: FreezePlan) -> BlockNetwork:
    """Freeze every block not listed in the plan."""
    unknown = set(plan.trainable_block_ids) - set(net.block_ids())
    if unknown:
        raise ValueError(f"Unknown block ids {sorted(unknown)}; valid ids: {net.block_ids()}")

    for block_id, block in net.blocks.items():
        block.requires_grad_(block_id in plan.trainable_block_ids)
    net.frozen_blocks = set(net.block_ids()) - set(plan.trainable_block_ids)
    net.train(net.training)
    return net


def parameter_digest(net: nn.Module, block_ids: Optional[Iterable[str]] = None) -> str:
    """SHA-256 over parameters and buffers (optionally of selected blocks only)."""
    prefixes = None if block_ids is None else tuple(f"blocks.{b}." for b in block_ids)
    digest = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        if prefixes is not None and not name.startswith(prefixes):
            continue
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
