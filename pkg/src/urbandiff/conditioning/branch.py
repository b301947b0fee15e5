"""Trainable encoder copy with zero-convolution injection points.

The branch starts life as a verbatim copy of the base UNet's encoder half and
time embedding. The fused control map enters through a zero 1x1 conv added to
x_t; each encoder stage's output leaves through its own zero conv. Zero
initialization means a fresh branch contributes exactly nothing, so attaching
it cannot distort the base model.
"""

from __future__ import annotations

import torch
from torch import nn

from ..diffusion.nn import TimeMLP, zero_module
from ..diffusion.unet import LATENT_CHANNELS, N_SKIPS, UNet, UNetEncoder


class ControlBranch(nn.Module):
    def __init__(self, base_channels: int, context_dim: int, tower_channels: int):
        super().__init__()
        c = base_channels
        time_dim = 4 * c
        self.time_mlp = TimeMLP(time_dim)
        self.encoder = UNetEncoder(c, time_dim, context_dim)
        self.zero_in = zero_module(nn.Conv2d(tower_channels, LATENT_CHANNELS, 1))
        stage_channels = [c, c, c, 2 * c, 2 * c]  # s0..s3 then mid
        self.zero_convs = nn.ModuleList(
            [zero_module(nn.Conv2d(ch, ch, 1)) for ch in stage_channels]
        )

    def copy_from_base(self, base: UNet) -> None:
        """Adopt the base model's encoder and time-embedding weights verbatim."""
        self.encoder.load_state_dict(base.encoder.state_dict())
        self.time_mlp.load_state_dict(base.time_mlp.state_dict())

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        context_mask: torch.Tensor | None,
        h_agg: torch.Tensor,
    ) -> list[torch.Tensor]:
        """Residuals for the base decoder: one per skip plus one for mid."""
        x_in = x_t + self.zero_in(h_agg)
        t_emb = self.time_mlp(t)
        skips, mid = self.encoder(x_in, t_emb, context, context_mask)
        stages = skips + [mid]
        assert len(stages) == N_SKIPS + 1
        return [conv(stage) for conv, stage in zip(self.zero_convs, stages)]
