"""Training loops: VAE pretraining, then the two-stage conditioned schedule.

Stage one trains the control branch, zero convolutions, text/numeric encoders,
and towers against a frozen base. Stage two additionally unlocks the base
UNet decoder in its own (much lower) learning-rate group. The VAE is frozen
the moment diffusion training starts.

Every train step derives its own seed from (root seed, step index), so
resuming from a checkpoint needs nothing beyond weights and optimizer
moments: the step counter regenerates the exact noise, timestep, and dropout
draws the uninterrupted run would have used.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import TrainingDivergedError
from ..seeding import derive_seed
from .model import STAGE_DECODER_UNLOCKED, STAGES, UrbanDiffusionModel
from .vae import ImageVae, vae_loss


def epsilon_mse(eps_true: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element and the batch; unit-normal noise
    against a zero prediction averages to 1."""
    return F.mse_loss(eps_pred, eps_true)


def freeze_for_stage(model: UrbanDiffusionModel, stage: str) -> None:
    if stage not in STAGES:
        raise ValueError(f"unknown training stage {stage!r}")
    for p in model.vae.parameters():
        p.requires_grad_(False)
    for p in model.unet.parameters():
        p.requires_grad_(False)
    if stage == STAGE_DECODER_UNLOCKED:
        for p in model.unet.decoder.parameters():
            p.requires_grad_(True)
    for module in (model.branch, model.textenc, model.towers):
        for p in module.parameters():
            p.requires_grad_(True)


def trainable_parameter_groups(model: UrbanDiffusionModel, stage: str) -> list[dict]:
    """Adam parameter groups for the stage; the decoder gets its own rate."""
    freeze_for_stage(model, stage)
    control_params = [
        p
        for module in (model.branch, model.textenc, model.towers)
        for p in module.parameters()
    ]
    groups = [{"params": control_params, "lr": model.config.lr_control}]
    if stage == STAGE_DECODER_UNLOCKED:
        groups.append(
            {"params": list(model.unet.decoder.parameters()), "lr": model.config.lr_decoder}
        )
    return groups


def make_optimizer(model: UrbanDiffusionModel, stage: str) -> torch.optim.Optimizer:
    return torch.optim.Adam(trainable_parameter_groups(model, stage))


def parameter_digests(model: UrbanDiffusionModel) -> dict[str, str]:
    """Content hash per weight group; frozen groups must not drift."""
    digests: dict[str, str] = {}
    for prefix, module in model.component_map().items():
        h = hashlib.sha256()
        state = module.state_dict()
        for name in sorted(state):
            h.update(name.encode())
            h.update(state[name].detach().cpu().numpy().astype(np.float32).tobytes())
        digests[prefix] = h.hexdigest()
    return digests


def step_generators(root_seed: int, step_index: int) -> tuple[torch.Generator, np.random.Generator]:
    seed = derive_seed(root_seed, "train-step", step_index)
    torch_gen = torch.Generator().manual_seed(seed)
    np_gen = np.random.default_rng(derive_seed(seed, "numpy"))
    return torch_gen, np_gen


def train_step(
    model: UrbanDiffusionModel,
    optimizer: torch.optim.Optimizer,
    batch: Mapping[str, object],
    step_index: int,
    root_seed: int,
) -> float:
    """One optimization step on {latents, prompts, dem, constraint}.

    Raises TrainingDivergedError the moment the loss stops being finite.
    """
    torch_gen, np_gen = step_generators(root_seed, step_index)
    latents: torch.Tensor = batch["latents"]  # type: ignore[assignment]
    prompts: list[str] = list(batch["prompts"])  # type: ignore[arg-type]
    dem: torch.Tensor = batch["dem"]  # type: ignore[assignment]
    constraint: torch.Tensor = batch["constraint"]  # type: ignore[assignment]
    b = latents.shape[0]

    drop = (np_gen.random(b) < model.config.text_drop_prob).tolist()
    bundle = model.make_bundle(prompts, dem, constraint, drop=drop)

    t = torch.from_numpy(np_gen.integers(1, model.config.T + 1, size=b))
    eps = torch.randn(latents.shape, generator=torch_gen, dtype=latents.dtype)
    ab = torch.from_numpy(model.schedule.alpha_bar).to(latents.dtype)[t - 1]
    x_t = torch.sqrt(ab)[:, None, None, None] * latents + torch.sqrt(1.0 - ab)[
        :, None, None, None
    ] * eps

    eps_pred = model.predict_noise(x_t, t, bundle, conditioned=True)
    loss = epsilon_mse(eps, eps_pred)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {float(loss.detach())} at step {step_index} "
            f"(stage {model.config.stage}, batch of {b})",
            step=step_index,
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_loop(
    model: UrbanDiffusionModel,
    optimizer: torch.optim.Optimizer,
    batch_provider: Callable[[int, np.random.Generator], Mapping[str, object]],
    n_steps: int,
    root_seed: int,
    start_step: int = 0,
    on_step: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Run steps [start_step, start_step + n_steps); batch choice is seeded by
    the step index so interrupted and resumed runs see identical data order."""
    losses = []
    for step in range(start_step, start_step + n_steps):
        batch_rng = np.random.default_rng(derive_seed(root_seed, "train-batch", step))
        batch = batch_provider(step, batch_rng)
        losses.append(train_step(model, optimizer, batch, step, root_seed))
        if on_step is not None:
            on_step(step, losses[-1])
    return losses


def train_vae(
    vae: ImageVae,
    image_provider: Callable[[int, np.random.Generator], torch.Tensor],
    n_steps: int,
    root_seed: int,
    lr: float = 1e-4,
    on_step: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Reconstruction + KL pretraining; the caller freezes afterwards."""
    optimizer = torch.optim.Adam(vae.parameters(), lr=lr)
    losses = []
    for step in range(n_steps):
        seed = derive_seed(root_seed, "vae-step", step)
        images = image_provider(step, np.random.default_rng(seed))
        loss, _ = vae_loss(vae, images, torch.Generator().manual_seed(seed))
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite VAE loss at step {step}", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
        if on_step is not None:
            on_step(step, losses[-1])
    return losses


def calibrate_latent_scale(model: UrbanDiffusionModel, images: torch.Tensor) -> float:
    """Set latent_scale to 1/std of VAE posterior means over a raw sample, so
    diffusion operates on roughly unit-variance latents."""
    with torch.no_grad():
        means = model.vae.encode(images).mean
        std = float(means.std())
        scale = 1.0 / max(std, 1e-6)
        model.latent_scale.fill_(scale)
    return scale
