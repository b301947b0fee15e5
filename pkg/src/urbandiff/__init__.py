"""Controllable urban-satellite-imagery diffusion workbench.

Subpackages:
    geogrid      grid cells, rasters, density metrics, prompts, manifests
    synthcity    procedural desk-scale city corpus generator
    diffusion    latent diffusion core (VAE, UNet, schedule, sampling, training)
    conditioning numeral-aware text encoder, constraint towers, control branch
    quality      image/statistical evaluation metrics and reports
    analysis     latent-space analysis, compliance oracle, augmentation study
    workbench    run configs, job orchestration, HTTP service, CLI
"""

__version__ = "0.1.0"
