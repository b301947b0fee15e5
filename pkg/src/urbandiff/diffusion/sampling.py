"""Ancestral DDPM sampling and mask-blended inpainting.

Both entry points are deterministic functions of (weights, bundle, seed).
Inpainting draws its known-region noising from a second generator stream so
that an all-ones mask consumes exactly the chain randomness sample() would,
making the two outputs bit-identical for the same seed.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from ..geogrid.rasters import image_to_unit, unit_to_image
from ..seeding import derive_seed
from .model import ConditioningBundle, UrbanDiffusionModel
from .schedule import NoiseSchedule, make_schedule, posterior_mean


def denoise_step(
    model: UrbanDiffusionModel,
    x_t: torch.Tensor,
    t: int,
    bundle: ConditioningBundle,
    generator: torch.Generator,
    schedule: NoiseSchedule | None = None,
    model_t: int | None = None,
) -> torch.Tensor:
    """One reverse step x_t -> x_{t-1}; deterministic (sigma multiplies z=0)
    at t=1, otherwise adds sqrt(beta_t)-scaled fresh noise.

    `schedule`/`model_t` support respaced sampling: the step's coefficients
    come from `schedule` while the network is queried at `model_t` of the
    training schedule. Both default to the model's own schedule and t.
    """
    schedule = schedule or model.schedule
    schedule.check_t(t)
    query_t = t if model_t is None else model_t
    t_batch = torch.full((x_t.shape[0],), query_t, dtype=torch.long)
    eps = model.guided_noise(x_t, t_batch, bundle)
    mean = posterior_mean(schedule, x_t, t, eps)
    if t == 1:
        return mean
    sigma = math.sqrt(float(schedule.beta[t - 1]))
    z = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return mean + sigma * z


def resolve_schedule(model: UrbanDiffusionModel, steps: int | None) -> tuple[NoiseSchedule, list[int]]:
    """The schedule to integrate plus, per step t, the training-schedule
    timestep the network should be asked for."""
    cfg = model.config
    if steps is None or steps == cfg.T:
        return model.schedule, list(range(1, cfg.T + 1))
    if not 1 <= steps <= cfg.T:
        raise ValueError(f"steps must lie in [1, {cfg.T}], got {steps}")
    reduced = make_schedule(steps, cfg.beta_start, cfg.beta_end)
    query = [max(1, round(t * cfg.T / steps)) for t in range(1, steps + 1)]
    return reduced, query


def sample_latent(
    model: UrbanDiffusionModel,
    bundle: ConditioningBundle,
    seed: int,
    steps: int | None = None,
    generator: torch.Generator | None = None,
    on_step=None,
) -> torch.Tensor:
    """Iterate the reverse chain from seeded Gaussian noise down to x_0.

    `on_step(completed, total)`, when given, fires after every denoise step;
    it observes progress only and cannot perturb the chain.
    """
    schedule, query = resolve_schedule(model, steps)
    gen = generator or torch.Generator().manual_seed(derive_seed(seed, "sample"))
    b = bundle.batch_size
    hw = model.config.latent_hw
    x = torch.randn((b, 4, hw, hw), generator=gen)
    with torch.no_grad():
        for t in range(schedule.T, 0, -1):
            x = denoise_step(model, x, t, bundle, gen, schedule=schedule, model_t=query[t - 1])
            if on_step is not None:
                on_step(schedule.T - t + 1, schedule.T)
    return x


def sample(
    model: UrbanDiffusionModel,
    bundle: ConditioningBundle,
    seed: int,
    steps: int | None = None,
    on_step=None,
) -> np.ndarray:
    """Full text+raster conditioned generation; (H, W, 3) uint8 per item,
    stacked on axis 0."""
    latents = sample_latent(model, bundle, seed, steps, on_step=on_step)
    with torch.no_grad():
        images = model.decode_latents(latents)
    return np.stack([unit_to_image(img.numpy()) for img in images])


def _latent_regen_mask(mask: np.ndarray, latent_hw: int) -> torch.Tensor:
    """1 where the latent cell may be regenerated, 0 where it must be kept.

    A latent cell is kept only when every pixel it covers is unmasked;
    any touched pixel frees the cell for regeneration.
    """
    factor = mask.shape[0] // latent_hw
    blocks = mask.reshape(latent_hw, factor, latent_hw, factor)
    regen = blocks.max(axis=(1, 3)).astype(np.float32)
    return torch.from_numpy(regen)[None, None]


def inpaint(
    model: UrbanDiffusionModel,
    image: np.ndarray,
    mask: np.ndarray,
    bundle: ConditioningBundle,
    seed: int,
    steps: int | None = None,
    on_step=None,
) -> np.ndarray:
    """Regenerate the masked region (mask==1) under the bundle's conditioning.

    Unmasked pixels are composited back from the original, so they match it
    exactly; the masked region is produced by the reverse chain with the
    known-region latents re-noised to the current step at every iteration.
    """
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    mask = (mask > 0).astype(np.uint8)
    if mask.max() == 0:
        return image.copy()

    unit = torch.from_numpy(image_to_unit(image))[None]
    with torch.no_grad():
        z0 = model.encode_images(unit)
    schedule, query = resolve_schedule(model, steps)
    gen_chain = torch.Generator().manual_seed(derive_seed(seed, "sample"))
    gen_known = torch.Generator().manual_seed(derive_seed(seed, "inpaint-known"))
    regen = _latent_regen_mask(mask, model.config.latent_hw)
    full_mask = bool(mask.min() == 1)

    x = torch.randn(z0.shape, generator=gen_chain)
    with torch.no_grad():
        for t in range(schedule.T, 0, -1):
            x = denoise_step(model, x, t, bundle, gen_chain, schedule=schedule, model_t=query[t - 1])
            if not full_mask and t > 1:
                # replace known cells with the original, noised to level t-1
                ab = float(schedule.alpha_bar[t - 2])
                noise = torch.randn(z0.shape, generator=gen_known)
                known = math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * noise
                x = regen * x + (1.0 - regen) * known
            elif not full_mask:
                x = regen * x + (1.0 - regen) * z0
            if on_step is not None:
                on_step(schedule.T - t + 1, schedule.T)
        decoded = model.decode_latents(x)
    out = np.stack([unit_to_image(img.numpy()) for img in decoded])[0]
    pix = mask[:, :, None].astype(bool)
    return np.where(pix, out, image)
