"""Convolutional VAE mapping 3-channel images to a 4-channel latent grid.

The downsample factor is 4, so a 64-px image becomes a 4x16x16 latent. The
encoder produces a diagonal Gaussian posterior; inference uses its mean so
encode/decode are deterministic once the weights are fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .nn import Downsample, SelfAttention2d, Upsample, group_norm

LATENT_CHANNELS = 4
VAE_DOWNSAMPLE = 4


@dataclass
class DiagonalGaussian:
    """Posterior q(z|x) with per-element mean and log-variance."""

    mean: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self) -> None:
        self.logvar = self.logvar.clamp(-30.0, 20.0)

    def sample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        noise = torch.randn(
            self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device
        )
        return self.mean + torch.exp(0.5 * self.logvar) * noise

    def kl(self) -> torch.Tensor:
        """KL(q || N(0, I)) summed over latent elements, one value per batch item."""
        term = self.mean.pow(2) + self.logvar.exp() - 1.0 - self.logvar
        return 0.5 * term.flatten(1).sum(dim=1)


class _VaeResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm1 = group_norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = group_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ImageVae(nn.Module):
    """Reconstruction + KL autoencoder, frozen after pretraining."""

    def __init__(self, base_channels: int = 48):
        super().__init__()
        c = base_channels
        self.encoder = nn.ModuleList(
            [
                nn.Conv2d(3, c, 3, padding=1),
                _VaeResBlock(c, c),
                Downsample(c),
                _VaeResBlock(c, 2 * c),
                Downsample(2 * c),
                _VaeResBlock(2 * c, 2 * c),
                SelfAttention2d(2 * c),
            ]
        )
        self.enc_out = nn.Sequential(
            group_norm(2 * c), nn.SiLU(), nn.Conv2d(2 * c, 2 * LATENT_CHANNELS, 3, padding=1)
        )
        self.dec_in = nn.Conv2d(LATENT_CHANNELS, 2 * c, 3, padding=1)
        self.decoder = nn.ModuleList(
            [
                _VaeResBlock(2 * c, 2 * c),
                SelfAttention2d(2 * c),
                Upsample(2 * c),
                _VaeResBlock(2 * c, c),
                Upsample(c),
                _VaeResBlock(c, c),
            ]
        )
        self.dec_out = nn.Sequential(group_norm(c), nn.SiLU(), nn.Conv2d(c, 3, 3, padding=1))

    def encode(self, image: torch.Tensor) -> DiagonalGaussian:
        """image (B, 3, H, W) in [0, 1] -> posterior over (B, 4, H/4, W/4)."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
        h = image * 2.0 - 1.0
        for layer in self.encoder:
            h = layer(h)
        mean, logvar = self.enc_out(h).chunk(2, dim=1)
        return DiagonalGaussian(mean, logvar)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """latent (B, 4, h, w) -> image (B, 3, 4h, 4w) in [0, 1] (not clamped)."""
        if latent.ndim != 4 or latent.shape[1] != LATENT_CHANNELS:
            raise ValueError(f"expected (B, {LATENT_CHANNELS}, h, w) latent, got {tuple(latent.shape)}")
        h = self.dec_in(latent)
        for layer in self.decoder:
            h = layer(h)
        return (self.dec_out(h) + 1.0) * 0.5


def vae_loss(
    vae: ImageVae,
    images: torch.Tensor,
    generator: torch.Generator | None = None,
    kl_weight: float = 1e-6,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Per-pixel MSE reconstruction plus weighted KL, averaged over the batch."""
    posterior = vae.encode(images)
    recon = vae.decode(posterior.sample(generator))
    rec = F.mse_loss(recon, images)
    kl = posterior.kl().mean() / images[0].numel()
    loss = rec + kl_weight * kl
    return loss, {"recon_mse": float(rec.detach()), "kl": float(kl.detach())}
