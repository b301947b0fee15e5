"""Small text-conditioned UNet for epsilon prediction on 4-channel latents.

The encoder half (input conv, two encoder blocks, midblock) is a standalone
module so the control branch can start from a verbatim copy of it. The decoder
consumes four skip tensors plus the mid feature; control residuals, when
present, are added to exactly those five tensors before decoding.

Every cross-attention output projection starts at zero, so a freshly built
UNet ignores its conditioning sequence entirely.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .nn import (
    CrossAttention,
    Downsample,
    ResBlock,
    SelfAttention2d,
    TimeMLP,
    Upsample,
    group_norm,
)

LATENT_CHANNELS = 4
N_SKIPS = 4  # s0..s3; the mid feature travels separately


class EncoderBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, context_dim: int):
        super().__init__()
        self.res = ResBlock(in_ch, out_ch, time_dim)
        self.attn = CrossAttention(out_ch, context_dim)

    def forward(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        return self.attn(self.res(x, t_emb), context, context_mask)


class MidBlock(nn.Module):
    def __init__(self, channels: int, time_dim: int, context_dim: int):
        super().__init__()
        self.res1 = ResBlock(channels, channels, time_dim)
        self.self_attn = SelfAttention2d(channels)
        self.cross_attn = CrossAttention(channels, context_dim)
        self.res2 = ResBlock(channels, channels, time_dim)

    def forward(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        h = self.res1(x, t_emb)
        h = self.cross_attn(self.self_attn(h), context, context_mask)
        return self.res2(h, t_emb)


class UNetEncoder(nn.Module):
    """Input conv through midblock; returns the four skips plus the mid feature."""

    def __init__(self, base_channels: int, time_dim: int, context_dim: int):
        super().__init__()
        c = base_channels
        self.in_conv = nn.Conv2d(LATENT_CHANNELS, c, 3, padding=1)
        self.block1 = EncoderBlock(c, c, time_dim, context_dim)
        self.down = Downsample(c)
        self.block2 = EncoderBlock(c, 2 * c, time_dim, context_dim)
        self.mid = MidBlock(2 * c, time_dim, context_dim)

    def forward(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None,
    ) -> tuple[list[torch.Tensor], torch.Tensor]:
        s0 = self.in_conv(x)
        s1 = self.block1(s0, t_emb, context, context_mask)
        s2 = self.down(s1)
        s3 = self.block2(s2, t_emb, context, context_mask)
        mid = self.mid(s3, t_emb, context, context_mask)
        return [s0, s1, s2, s3], mid


class UNetDecoder(nn.Module):
    def __init__(self, base_channels: int, time_dim: int, context_dim: int):
        super().__init__()
        c = base_channels
        self.block1 = EncoderBlock(4 * c, 2 * c, time_dim, context_dim)  # mid + s3
        self.res_a = ResBlock(3 * c, c, time_dim)  # + s2
        self.up = Upsample(c)
        self.block2 = EncoderBlock(2 * c, c, time_dim, context_dim)  # + s1
        # The output conv keeps its standard init: the base freezes in stage
        # one, and a zero (frozen) final conv would block every gradient from
        # reaching the control side.
        self.res_b = ResBlock(2 * c, c, time_dim)  # + s0
        self.out = nn.Sequential(group_norm(c), nn.SiLU(), nn.Conv2d(c, LATENT_CHANNELS, 3, padding=1))

    def forward(
        self,
        mid: torch.Tensor,
        skips: list[torch.Tensor],
        t_emb: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        s0, s1, s2, s3 = skips
        h = self.block1(torch.cat([mid, s3], dim=1), t_emb, context, context_mask)
        h = self.res_a(torch.cat([h, s2], dim=1), t_emb)
        h = self.up(h)
        h = self.block2(torch.cat([h, s1], dim=1), t_emb, context, context_mask)
        h = self.res_b(torch.cat([h, s0], dim=1), t_emb)
        return self.out(h)


class UNet(nn.Module):
    def __init__(self, base_channels: int = 48, context_dim: int = 96):
        super().__init__()
        self.base_channels = base_channels
        self.context_dim = context_dim
        time_dim = 4 * base_channels
        self.time_mlp = TimeMLP(time_dim)
        self.encoder = UNetEncoder(base_channels, time_dim, context_dim)
        self.decoder = UNetDecoder(base_channels, time_dim, context_dim)

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None = None,
        control_residuals: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        """Predict epsilon for x_t at integer timesteps t (shape (B,))."""
        t_emb = self.time_mlp(t)
        skips, mid = self.encoder(x_t, t_emb, context, context_mask)
        if control_residuals is not None:
            if len(control_residuals) != N_SKIPS + 1:
                raise ValueError(
                    f"expected {N_SKIPS + 1} control residuals, got {len(control_residuals)}"
                )
            skips = [s + r for s, r in zip(skips, control_residuals[:N_SKIPS])]
            mid = mid + control_residuals[N_SKIPS]
        return self.decoder(mid, skips, t_emb, context, context_mask)
