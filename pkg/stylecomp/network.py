"""Style-compensation network: seven same-size conv layers ending in a sigmoid."""

from typing import List, Literal

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, field_validator

from dataio.volumes import SliceBatch
from segnet.blocks import BlockNetwork
from segnet.unet import init_weights

# (batch, 1, H, W) coefficient in [SC_EPS, 1 - SC_EPS]
CompensationCoefficient = torch.Tensor

# float32 sigmoid rounds to exactly 0 or 1 for large pre-activations
SC_EPS = 1e-6


class SCSpec(BaseModel):
    layer_filters: List[int] = Field(default_factory=lambda: [64, 32, 16, 8, 4, 2, 1])
    kernel_size: int = Field(default=3, ge=1)
    input_channels: int = Field(default=1, ge=1)
    # "compensate": output is a coefficient multiplied into the image;
    # "translate": output is the transformed image itself
    mode: Literal["compensate", "translate"] = "compensate"

    @field_validator("layer_filters")
    @classmethod
    def _check_filters(cls, value):
        if len(value) != 7:
            raise ValueError(f"layer_filters needs exactly 7 entries, got {len(value)}")
        if value[-1] != 1:
            raise ValueError(f"The last SC layer must have 1 filter, got {value[-1]}")
        if any(f <= 0 for f in value):
            raise ValueError(f"layer_filters must be positive, got {value}")
        return value

    @field_validator("kernel_size")
    @classmethod
    def _check_kernel(cls, value):
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd to keep the spatial size, got {value}")
        return value


class SCNet(BlockNetwork):
    """Blocks sc1..sc7: conv -> batch-norm -> ReLU (sigmoid on sc7), no pooling."""

    def __init__(self, spec: SCSpec):
        super().__init__()
        self.spec = spec
        in_channels = spec.input_channels
        for i, filters in enumerate(spec.layer_filters, start=1):
            last = i == len(spec.layer_filters)
            self.blocks[f"sc{i}"] = nn.Sequential(
                nn.Conv2d(in_channels, filters, spec.kernel_size, stride=1, padding=spec.kernel_size // 2, bias=False),
                nn.BatchNorm2d(filters),
                nn.Sigmoid() if last else nn.ReLU(inplace=True),
            )
            in_channels = filters

    def forward(self, x: torch.Tensor) -> CompensationCoefficient:
        for block in self.blocks.values():
            x = block(x)
        return x.clamp(SC_EPS, 1.0 - SC_EPS)


def build_sc(spec: SCSpec, seed: int) -> SCNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = SCNet(spec)
        init_weights(net)
    return net


def sc_forward(net: SCNet, x_t: SliceBatch, train_mode: bool = False) -> CompensationCoefficient:
    """Coefficient map p_s for a target batch (deterministic in eval mode)."""
    net.train(train_mode)
    return net(x_t.images)
