"""Latent diffusion engine: schedule algebra, VAE, UNet, two-stage training,
ancestral sampling, and mask-blended inpainting.

Only the dependency-free schedule exports load eagerly; everything else
resolves lazily so that the conditioning package (whose branch module builds
on diffusion.nn/unet) can import those submodules while the model assembly
here imports the conditioning package in turn.
"""

from .schedule import (
    NoiseSchedule,
    forward_diffuse,
    invert_forward,
    make_schedule,
    posterior_mean,
)

_LAZY = {
    "ConditioningBundle": ("model", "ConditioningBundle"),
    "ModelConfig": ("model", "ModelConfig"),
    "STAGE_CONTROL_ONLY": ("model", "STAGE_CONTROL_ONLY"),
    "STAGE_DECODER_UNLOCKED": ("model", "STAGE_DECODER_UNLOCKED"),
    "UrbanDiffusionModel": ("model", "UrbanDiffusionModel"),
    "calibrate_latent_scale": ("training", "calibrate_latent_scale"),
    "denoise_step": ("sampling", "denoise_step"),
    "epsilon_mse": ("training", "epsilon_mse"),
    "inpaint": ("sampling", "inpaint"),
    "load_checkpoint": ("checkpoint", "load_checkpoint"),
    "make_optimizer": ("training", "make_optimizer"),
    "parameter_digests": ("training", "parameter_digests"),
    "sample": ("sampling", "sample"),
    "sample_latent": ("sampling", "sample_latent"),
    "save_checkpoint": ("checkpoint", "save_checkpoint"),
    "train_loop": ("training", "train_loop"),
    "train_step": ("training", "train_step"),
    "train_vae": ("training", "train_vae"),
}

__all__ = [
    "NoiseSchedule",
    "forward_diffuse",
    "invert_forward",
    "make_schedule",
    "posterior_mean",
    *sorted(_LAZY),
]


def __getattr__(name: str):
    if name in _LAZY:
        import importlib

        module_name, attr = _LAZY[name]
        module = importlib.import_module(f".{module_name}", __name__)
        value = getattr(module, attr)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
