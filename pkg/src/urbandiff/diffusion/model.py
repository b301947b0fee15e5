"""Full conditioned latent-diffusion model and its configuration.

The model owns five weight groups: the VAE (frozen after pretraining), the
base UNet (encoder frozen always, decoder trainable only in the second
stage), the numeral-aware text encoder, the control towers, and the control
branch with its zero convolutions. Conditioning for a batch is computed once
into a ConditioningBundle; the per-step control residuals are recomputed
inside each denoising call because they depend on x_t and t.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import torch
from torch import nn

from ..conditioning.branch import ControlBranch
from ..conditioning.textenc import NumeralTextEncoder
from ..conditioning.towers import ControlTowers
from ..errors import ConfigError
from .schedule import NoiseSchedule, make_schedule
from .unet import UNet
from .vae import VAE_DOWNSAMPLE, ImageVae

STAGE_CONTROL_ONLY = "control_only"
STAGE_DECODER_UNLOCKED = "decoder_unlocked"
STAGES = (STAGE_CONTROL_ONLY, STAGE_DECODER_UNLOCKED)


@dataclass(frozen=True)
class ModelConfig:
    image_px: int = 64
    latent_hw: int = 16
    T: int = 400
    beta_start: float = 1e-4
    beta_end: float = 0.02
    unet_base: int = 48
    vae_base: int = 48
    text_dim: int = 96
    num_dim: int = 32
    tower_channels: int = 48
    max_tokens: int = 77
    use_ssm: bool = True
    stage: str = STAGE_CONTROL_ONLY
    lr_control: float = 1e-5
    lr_decoder: float = 2e-6
    batch_size: int = 16
    text_drop_prob: float = 0.1
    guidance_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.image_px != self.latent_hw * VAE_DOWNSAMPLE:
            raise ConfigError(
                f"latent_hw {self.latent_hw} must be image_px/{VAE_DOWNSAMPLE} "
                f"for image_px {self.image_px}",
                key_path="model.latent_hw",
            )
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}", key_path="model.stage")
        if self.T < 1:
            raise ConfigError("T must be at least 1", key_path="model.T")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ConfigError("beta range must satisfy 0 < start <= end < 1", key_path="model.beta_start")
        for name in ("lr_control", "lr_decoder"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", key_path=f"model.{name}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1", key_path="model.batch_size")
        if not 0 <= self.text_drop_prob < 1:
            raise ConfigError("text_drop_prob must lie in [0, 1)", key_path="model.text_drop_prob")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}", key_path="model")
        return cls(**data)

    def with_stage(self, stage: str) -> "ModelConfig":
        return replace(self, stage=stage)


@dataclass
class ConditioningBundle:
    """One batch worth of conditioning, computed by a single encode pass."""

    context: torch.Tensor  # (B, L, d_text)
    context_mask: torch.Tensor  # (B, L) bool
    null_context: torch.Tensor  # (B, 1, d_text)
    null_mask: torch.Tensor  # (B, 1) bool
    h_agg: torch.Tensor  # (B, C, h, w)
    guidance_scale: float = 1.0

    @property
    def batch_size(self) -> int:
        return self.context.shape[0]

    def detach(self) -> "ConditioningBundle":
        return ConditioningBundle(
            self.context.detach(),
            self.context_mask,
            self.null_context.detach(),
            self.null_mask,
            self.h_agg.detach(),
            self.guidance_scale,
        )


@dataclass
class NamedComponents:
    """The checkpoint-facing module layout with its canonical name prefixes."""

    modules: dict[str, nn.Module] = field(default_factory=dict)


class UrbanDiffusionModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.schedule: NoiseSchedule = make_schedule(config.T, config.beta_start, config.beta_end)
        self.vae = ImageVae(base_channels=config.vae_base)
        self.unet = UNet(base_channels=config.unet_base, context_dim=config.text_dim)
        self.textenc = NumeralTextEncoder(
            d_text=config.text_dim, d_num=config.num_dim, max_tokens=config.max_tokens
        )
        self.towers = ControlTowers(
            channels=config.tower_channels,
            downsample=config.image_px // config.latent_hw,
            use_ssm=config.use_ssm,
        )
        self.branch = ControlBranch(
            base_channels=config.unet_base,
            context_dim=config.text_dim,
            tower_channels=config.tower_channels,
        )
        self.branch.copy_from_base(self.unet)
        self.register_buffer("latent_scale", torch.tensor(1.0))

    # ---- latent plumbing ----------------------------------------------------

    def encode_images(self, images: torch.Tensor, sample: bool = False,
                      generator: torch.Generator | None = None) -> torch.Tensor:
        """Images (B, 3, H, W) in [0, 1] -> scaled latents; mean unless sampling."""
        posterior = self.vae.encode(images)
        z = posterior.sample(generator) if sample else posterior.mean
        return z * self.latent_scale

    def decode_latents(self, latents: torch.Tensor) -> torch.Tensor:
        return self.vae.decode(latents / self.latent_scale).clamp(0.0, 1.0)

    # ---- conditioning -------------------------------------------------------

    def make_bundle(
        self,
        prompts: list[str],
        dem: torch.Tensor,
        constraint: torch.Tensor,
        guidance_scale: float | None = None,
        drop: list[bool] | None = None,
    ) -> ConditioningBundle:
        """Encode prompts and control rasters once for a whole sampling run."""
        context, mask = self.textenc.encode_batch(prompts, drop=drop)
        null = self.textenc.encode_null()
        b = len(prompts)
        null_context = null.embeddings.unsqueeze(0).expand(b, -1, -1)
        null_mask = torch.ones(b, 1, dtype=torch.bool, device=context.device)
        h_agg = self.towers.encode_and_fuse(dem, constraint)
        return ConditioningBundle(
            context=context,
            context_mask=mask,
            null_context=null_context,
            null_mask=null_mask,
            h_agg=h_agg,
            guidance_scale=self.config.guidance_scale if guidance_scale is None else guidance_scale,
        )

    # ---- noise prediction ---------------------------------------------------

    def predict_noise(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        bundle: ConditioningBundle,
        conditioned: bool = True,
    ) -> torch.Tensor:
        """Single epsilon prediction; the control residuals always flow, text
        switches to the null encoding for the unconditioned pass."""
        if conditioned:
            context, mask = bundle.context, bundle.context_mask
        else:
            context, mask = bundle.null_context, bundle.null_mask
        residuals = self.branch(x_t, t, context, mask, bundle.h_agg)
        return self.unet(x_t, t, context, mask, control_residuals=residuals)

    def guided_noise(self, x_t: torch.Tensor, t: torch.Tensor, bundle: ConditioningBundle) -> torch.Tensor:
        eps_cond = self.predict_noise(x_t, t, bundle, conditioned=True)
        if bundle.guidance_scale == 1.0:
            return eps_cond
        eps_uncond = self.predict_noise(x_t, t, bundle, conditioned=False)
        return eps_uncond + bundle.guidance_scale * (eps_cond - eps_uncond)

    # ---- checkpoint-facing naming -------------------------------------------

    def component_map(self) -> dict[str, nn.Module]:
        comps = {
            "vae": self.vae,
            "unet": self.unet,
            "textenc": self.textenc,
            "control.towers": self.towers,
            "control.copy": self.branch.encoder,
            "control.time": self.branch.time_mlp,
            "zeroconv.0": self.branch.zero_in,
        }
        for k, conv in enumerate(self.branch.zero_convs):
            comps[f"zeroconv.{k + 1}"] = conv
        return comps

    def named_tensors(self) -> dict[str, torch.Tensor]:
        """Flat name -> tensor view of every weight, canonical checkpoint names."""
        out: dict[str, torch.Tensor] = {"latent_scale": self.latent_scale}
        for prefix, module in self.component_map().items():
            for name, tensor in module.state_dict().items():
                out[f"{prefix}.{name}"] = tensor
        return out

    def load_named_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        expected = self.named_tensors()
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ValueError(f"tensor name mismatch: missing {missing[:4]}, extra {extra[:4]}")
        with torch.no_grad():
            self.latent_scale.copy_(tensors["latent_scale"])
            for prefix, module in self.component_map().items():
                state = {
                    name[len(prefix) + 1 :]: tensor
                    for name, tensor in tensors.items()
                    if name.startswith(prefix + ".") and _owned_by(prefix, name, self.component_map())
                }
                module.load_state_dict(state)


def _owned_by(prefix: str, name: str, comps: dict[str, nn.Module]) -> bool:
    """True when `prefix` is the longest component prefix matching `name`.

    Needed because "control.towers" names also start with "control." and so on;
    ownership always goes to the most specific component.
    """
    best = ""
    for candidate in comps:
        if name.startswith(candidate + ".") and len(candidate) > len(best):
            best = candidate
    return best == prefix


def config_to_json(config: ModelConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
