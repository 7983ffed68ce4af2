"""U-Net with nine convolution blocks, four pools and four upsampling blocks."""

from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, field_validator

from dataio.volumes import SliceBatch
from segnet.blocks import BlockNetwork

# (batch, C, H, W) class probabilities, softmax over C
PredictionMap = torch.Tensor

POOL_LEVELS = 4
SIZE_DIVISOR = 2 ** POOL_LEVELS


class NetworkSpec(BaseModel):
    """Channel widths of the nine convolution blocks plus the class count."""
    block_filters: List[int] = Field(description="Widths of conv blocks 1..9")
    num_classes: int = Field(default=5, ge=2)
    input_channels: int = Field(default=1, ge=1)

    @field_validator("block_filters")
    @classmethod
    def _check_filters(cls, value):
        if len(value) != 9:
            raise ValueError(f"block_filters needs exactly 9 widths, got {len(value)}")
        if any(f <= 0 for f in value):
            raise ValueError(f"block_filters must be positive, got {value}")
        for i in range(4):
            if value[i] != value[8 - i]:
                raise ValueError(
                    f"block_filters must be symmetric: block {i + 1} ({value[i]}) != block {9 - i} ({value[8 - i]})"
                )
        return value


# U1 / U2 (source model) and U3 (desired model)
SOURCE_UNET_SPEC = NetworkSpec(block_filters=[64, 128, 256, 512, 1024, 512, 256, 128, 64])
DESIRED_UNET_SPEC = NetworkSpec(block_filters=[16, 32, 64, 128, 256, 128, 64, 32, 16])


class ConvBlock(nn.Sequential):
    """Two (3x3 conv -> batch-norm -> ReLU) layers."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class UpBlock(nn.Sequential):
    """Nearest x2 upsample -> 3x3 conv -> batch-norm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class UNet(BlockNetwork):
    """
    Blocks: conv1..conv9, up1..up4, final.

    conv1-conv4 form the encoder, conv5 the bottleneck, and each up block
    feeds conv6..conv9 after concatenation with the matching encoder output.
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        f = spec.block_filters

        self.blocks["conv1"] = ConvBlock(spec.input_channels, f[0])
        for i in range(1, 5):
            self.blocks[f"conv{i + 1}"] = ConvBlock(f[i - 1], f[i])
        for i in range(4):
            # up{i+1} takes block (5+i) to width of block (6+i), skip from block (4-i)
            self.blocks[f"up{i + 1}"] = UpBlock(f[4 + i], f[5 + i])
            self.blocks[f"conv{i + 6}"] = ConvBlock(f[3 - i] + f[5 + i], f[5 + i])
        self.blocks["final"] = nn.Conv2d(f[8], spec.num_classes, 1)
        self.pool = nn.MaxPool2d(2)

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ValueError(
                f"Expected input (B, {self.spec.input_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[-2] % SIZE_DIVISOR or x.shape[-1] % SIZE_DIVISOR:
            raise ValueError(
                f"Spatial size {x.shape[-2]}x{x.shape[-1]} must be divisible by {SIZE_DIVISOR}"
            )

        skips = []
        h = x
        for i in range(1, 5):
            h = self.blocks[f"conv{i}"](h)
            skips.append(h)
            h = self.pool(h)
        h = self.blocks["conv5"](h)
        for i in range(4):
            h = self.blocks[f"up{i + 1}"](h)
            h = self.blocks[f"conv{i + 6}"](torch.cat([skips[3 - i], h], dim=1))
        return self.blocks["final"](h)

    def forward(self, x: torch.Tensor) -> PredictionMap:
        return F.softmax(self.forward_logits(x), dim=1)


def init_weights(net: nn.Module):
    """Kaiming fan-in normal for convs, unit scale / zero shift for batch-norm."""
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_unet(spec: NetworkSpec, seed: int) -> UNet:
    """Build a U-Net whose initial weights depend only on (spec, seed)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet(spec)
        init_weights(net)
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def forward(net: nn.Module, batch: SliceBatch, train_mode: bool = False) -> PredictionMap:
    """Run the network on a batch with batch-norm in train (batch stats) or eval (running stats) mode."""
    net.train(train_mode)
    return net(batch.images)
