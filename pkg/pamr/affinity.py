"""Local intensity affinities over multi-dilation neighbourhoods."""

from dataclasses import dataclass
from typing import List, Tuple

import torch
from pydantic import BaseModel, Field, field_validator

Offset = Tuple[int, int]


class PamrConfig(BaseModel):
    iterations: int = Field(default=10, ge=1)
    kernel_size: int = Field(default=3, ge=3)
    dilation_rates: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 12, 24])
    sigma_floor: float = Field(default=1e-4, gt=0)
    # unsquared intensity difference in the kernel, for A/B comparison only
    literal_kernel: bool = False

    @field_validator("kernel_size")
    @classmethod
    def _check_kernel(cls, value):
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {value}")
        return value

    @field_validator("dilation_rates")
    @classmethod
    def _check_dilations(cls, value):
        if not value or any(d < 1 for d in value):
            raise ValueError(f"dilation_rates must be a non-empty list of integers >= 1, got {value}")
        return value


@dataclass
class AffinityField:
    # (B, K, H, W), softmax over the K neighbours of each pixel
    weights: torch.Tensor
    offsets: List[Offset]


def neighbourhood(cfg: PamrConfig) -> List[Offset]:
    """Union over dilations of the kernel grid, center excluded, in first-seen order."""
    r = cfg.kernel_size // 2
    offsets = []
    seen = set()
    for d in cfg.dilation_rates:
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                offset = (dy * d, dx * d)
                if offset == (0, 0) or offset in seen:
                    continue
                seen.add(offset)
                offsets.append(offset)
    return offsets


def reflect_index(idx: torch.Tensor, n: int) -> torch.Tensor:
    """Mirror indices into [0, n) without repeating the edge sample, for any overshoot."""
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx < n, idx, period - idx)


def shift(x: torch.Tensor, offset: Offset) -> torch.Tensor:
    """out[..., i, j] = x[..., reflect(i + dy), reflect(j + dx)]."""
    h, w = x.shape[-2:]
    dy, dx = offset
    rows = reflect_index(torch.arange(h, device=x.device) + dy, h)
    cols = reflect_index(torch.arange(w, device=x.device) + dx, w)
    return x.index_select(-2, rows).index_select(-1, cols)


def local_std(image: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """Per-channel standard deviation in the undilated kernel window (reflect borders)."""
    r = kernel_size // 2
    window = [shift(image, (dy, dx)) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    stacked = torch.stack(window, dim=0)
    return stacked.std(dim=0, unbiased=False)


def compute_affinity(image: torch.Tensor, cfg: PamrConfig) -> AffinityField:
    """
    Affinity weights alpha for every pixel and neighbour.

    Args:
        image: (B, C_img, H, W) intensities
        cfg: Neighbourhood and kernel parameters

    Returns:
        AffinityField with weights (B, K, H, W) summing to 1 over K
    """
    if hasattr(image, "images"):
        image = image.images
    offsets = neighbourhood(cfg)
    sigma = local_std(image, cfg.kernel_size).clamp_min(cfg.sigma_floor)

    kernels = []
    for offset in offsets:
        diff = image - shift(image, offset)
        if not cfg.literal_kernel:
            diff = diff ** 2
        # mean over image channels
        kernels.append((-diff / sigma ** 2).mean(dim=1))
    k_bar = torch.stack(kernels, dim=1)
    return AffinityField(torch.softmax(k_bar, dim=1), offsets)
