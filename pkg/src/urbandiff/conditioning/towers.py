"""Pseudo-Siamese control towers over the DEM and constraint rasters.

The two towers share an architecture but never weights. Each runs a conv stem
down to latent resolution, then state-space scan blocks, then a gated
self-attention stage. Every op in the stack maps a spatially constant input to
a spatially constant output (convs use replicate padding; scans start at the
first element's fixed point), which is what makes an all-zero constraint map
encode to a featureless constant field.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import AlignmentError
from ..geogrid.rasters import RasterLayer
from .fuse import CoordinateAttention, fuse


def normalize_dem(values: np.ndarray) -> np.ndarray:
    """Per-cell min-max normalization; relative relief is what matters."""
    v = values.astype(np.float32)
    lo = float(v.min())
    hi = float(v.max())
    return (v - lo) / (hi - lo + 1e-6)


def _rep_conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="replicate")


class SelectiveScan(nn.Module):
    """Gated linear recurrence over the flattened spatial sequence.

    h_t = a_t * h_{t-1} + (1 - a_t) * x_t with a_t = sigmoid(W x_t + b) and
    h_0 = x_1, so a constant sequence is a fixed point of the scan.
    """

    def __init__(self, channels: int, reverse: bool = False):
        super().__init__()
        self.reverse = reverse
        self.decay = nn.Linear(channels, channels)
        nn.init.zeros_(self.decay.weight)
        nn.init.constant_(self.decay.bias, 2.0)  # long memory at init

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.reshape(b, c, h * w).transpose(1, 2)  # (B, L, C)
        if self.reverse:
            seq = seq.flip(1)
        a = torch.sigmoid(self.decay(seq))
        state = seq[:, 0]
        out = [state]
        for t in range(1, seq.shape[1]):
            # incremental EMA form: exact fixed point when state == input
            state = state + (1.0 - a[:, t]) * (seq[:, t] - state)
            out.append(state)
        result = torch.stack(out, dim=1)
        if self.reverse:
            result = result.flip(1)
        return result.transpose(1, 2).reshape(b, c, h, w)


class SSMBlock(nn.Module):
    """Scan + channel MLP, both on residual paths with a learned output gate."""

    def __init__(self, channels: int, reverse: bool = False):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, channels), channels, eps=1e-6)
        self.scan = SelectiveScan(channels, reverse=reverse)
        self.gate = nn.Conv2d(channels, channels, 1)
        self.norm2 = nn.GroupNorm(min(8, channels), channels, eps=1e-6)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, 2 * channels, 1), nn.SiLU(), nn.Conv2d(2 * channels, channels, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + torch.sigmoid(self.gate(h)) * self.scan(h)
        return x + self.mlp(self.norm2(x))


class ConvBlock(nn.Module):
    """Pure-convolution fallback with the same residual shape as SSMBlock."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels, eps=1e-6)
        self.conv1 = _rep_conv(channels, channels)
        self.conv2 = _rep_conv(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv2(F.silu(self.conv1(F.silu(self.norm(x)))))
        return x + h


class GatedSelfAttention(nn.Module):
    """Late-stage self-attention whose residual is sigmoid-gated per position."""

    def __init__(self, channels: int, n_heads: int = 4):
        super().__init__()
        self.n_heads = n_heads
        self.norm = nn.GroupNorm(min(8, channels), channels, eps=1e-6)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)
        self.gate = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        n = self.norm(x)
        q, k, v = self.qkv(n).chunk(3, dim=1)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.reshape(b, self.n_heads, c // self.n_heads, h * w).transpose(-1, -2)

        scores = split(q) @ split(k).transpose(-1, -2) / math.sqrt(c // self.n_heads)
        out = (scores.softmax(dim=-1) @ split(v)).transpose(-1, -2).reshape(b, c, h, w)
        return x + torch.sigmoid(self.gate(n)) * self.proj(out)


class _Tower(nn.Module):
    def __init__(self, channels: int, downsample: int, use_ssm: bool):
        super().__init__()
        if downsample < 1 or downsample & (downsample - 1):
            raise ValueError(f"downsample factor must be a power of two, got {downsample}")
        stem: list[nn.Module] = [_rep_conv(1, channels), nn.SiLU()]
        remaining = downsample
        while remaining > 1:
            stem += [_rep_conv(channels, channels, stride=2), nn.SiLU()]
            remaining //= 2
        self.stem = nn.Sequential(*stem)
        if use_ssm:
            self.blocks = nn.Sequential(SSMBlock(channels), SSMBlock(channels, reverse=True))
        else:
            self.blocks = nn.Sequential(ConvBlock(channels), ConvBlock(channels))
        self.late_attn = GatedSelfAttention(channels)
        self.out = nn.Sequential(
            nn.GroupNorm(min(8, channels), channels, eps=1e-6), nn.SiLU(), _rep_conv(channels, channels)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.late_attn(self.blocks(self.stem(x))))


class ControlTowers(nn.Module):
    """Both towers plus the mask-then-fuse aggregation with learned gates."""

    def __init__(self, channels: int = 48, downsample: int = 4, use_ssm: bool = True):
        super().__init__()
        self.channels = channels
        self.downsample = downsample
        self.dem_tower = _Tower(channels, downsample, use_ssm)
        self.constraint_tower = _Tower(channels, downsample, use_ssm)
        self.coord_attn = CoordinateAttention(2 * channels, channels)
        self.alpha = nn.Parameter(torch.tensor(1.0))
        self.beta = nn.Parameter(torch.tensor(1.0))

    def forward(self, dem: torch.Tensor, constraint: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 1, H, W) rasters -> independent (B, C, H/f, W/f) feature maps."""
        if dem.shape != constraint.shape:
            raise AlignmentError(
                f"dem {tuple(dem.shape)} and constraint {tuple(constraint.shape)} differ"
            )
        return self.dem_tower(dem), self.constraint_tower(constraint)

    def aggregate(self, h_dem: torch.Tensor, h_constraint: torch.Tensor) -> torch.Tensor:
        """Coordinate-attention mask over both streams, then gated fusion."""
        mask = self.coord_attn(torch.cat([h_dem, h_constraint], dim=1))
        return fuse(mask * h_dem, mask * h_constraint, self.alpha, self.beta)

    def encode_and_fuse(self, dem: torch.Tensor, constraint: torch.Tensor) -> torch.Tensor:
        return self.aggregate(*self.forward(dem, constraint))


def control_tensors_from_rasters(
    dem: RasterLayer, constraint: RasterLayer
) -> tuple[torch.Tensor, torch.Tensor]:
    """Validate alignment and lift the two rasters to (1, 1, H, W) tensors."""
    if dem.values.shape != constraint.values.shape:
        raise AlignmentError(
            f"dem grid {dem.values.shape} does not match constraint grid {constraint.values.shape}"
        )
    dem_t = torch.from_numpy(normalize_dem(dem.values)).reshape(1, 1, *dem.values.shape)
    con = (constraint.values > 0).astype(np.float32)
    return dem_t, torch.from_numpy(con).reshape(1, 1, *con.shape)
