"""Coordinate attention and the gated Hadamard fusion.

fuse() is deliberately bare algebra so its identities (alpha=0, ones input)
hold exactly; mask modulation happens in the caller before fusion.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def x_average_pool(h: torch.Tensor) -> torch.Tensor:
    """Mean over the width axis: (B, C, H, W) -> (B, C, H, 1)."""
    return h.mean(dim=3, keepdim=True)


def y_average_pool(h: torch.Tensor) -> torch.Tensor:
    """Mean over the height axis: (B, C, H, W) -> (B, C, 1, W)."""
    return h.mean(dim=2, keepdim=True)


class CoordinateAttention(nn.Module):
    """Per-axis average pools -> encodings -> combined logits -> sigmoid mask.

    The mask has out_channels channels and the input's spatial shape, with
    every value strictly inside (0, 1).
    """

    def __init__(self, in_channels: int, out_channels: int, mid_channels: int | None = None):
        super().__init__()
        mid = mid_channels or max(in_channels // 2, 8)
        self.shared = nn.Conv2d(in_channels, mid, 1)
        self.to_x_logits = nn.Conv2d(mid, out_channels, 1)
        self.to_y_logits = nn.Conv2d(mid, out_channels, 1)

    def logits(self, h: torch.Tensor) -> torch.Tensor:
        ex = self.to_x_logits(F.silu(self.shared(x_average_pool(h))))
        ey = self.to_y_logits(F.silu(self.shared(y_average_pool(h))))
        return ex + ey  # broadcast to (B, out, H, W)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        # clamp keeps the mask strictly inside (0, 1) even where float32
        # sigmoid would saturate to exactly 0 or 1
        return torch.sigmoid(self.logits(h)).clamp(1e-6, 1.0 - 1e-6)


def coordinate_attention(module: CoordinateAttention, h: torch.Tensor) -> torch.Tensor:
    """Functional spelling of the module call."""
    return module(h)


def fuse(
    h_dem: torch.Tensor,
    h_constraint: torch.Tensor,
    alpha: torch.Tensor | float,
    beta: torch.Tensor | float,
) -> torch.Tensor:
    """h_agg = alpha * (h_dem Hadamard h_constraint) + beta * h_constraint."""
    if h_dem.shape != h_constraint.shape:
        raise ValueError(f"fuse shape mismatch: {tuple(h_dem.shape)} vs {tuple(h_constraint.shape)}")
    return alpha * (h_dem * h_constraint) + beta * h_constraint
