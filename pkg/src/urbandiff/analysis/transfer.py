"""Cross-city style transfer via prompt modification.

Generation is conditioned on one city's rasters while the prompt names a
different target city; the "{target} from {source}" phrasing asks the model
to blend the target's style with the source's layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import AnalysisError
from ..diffusion.sampling import sample
from ..synthcity.corpus import CITY_NAMES
from .latents import STAGE_MIDSAMPLE, LatentEmbedding, extract_latents


def transfer_prompt(target_city: str, source_city: str) -> str:
    """Render the transfer prompt, degenerating cleanly when cities match.

    An identical source and target carries no transfer information, so the
    "from" clause is dropped and the prompt reduces to ordinary conditioned
    generation.
    """
    for name in (target_city, source_city):
        if name not in CITY_NAMES:
            raise AnalysisError(f"unknown city name {name!r}")
    if target_city == source_city:
        return f"Satellite imagery of {target_city}."
    return f"Satellite imagery of {target_city} from {source_city}."


@dataclass
class TransferResult:
    prompt: str
    images: np.ndarray
    embeddings: list[LatentEmbedding]


def cross_city_transfer(
    model,
    dem: torch.Tensor,
    constraint: torch.Tensor,
    target_city: str,
    source_city: str,
    seeds: list[int],
    steps: int | None = None,
    t_capture: int | None = None,
) -> TransferResult:
    """Generate transfer images plus their mid-sampling latent embeddings.

    ``dem`` and ``constraint`` are the source cell's control tensors (batch
    of 1); each seed yields one generation.  Embeddings are labeled
    kind="transfer" and carry the target city.
    """
    if not seeds:
        raise AnalysisError("transfer needs at least one seed")
    prompt = transfer_prompt(target_city, source_city)
    bundle = model.make_bundle([prompt], dem, constraint)
    images = []
    embeddings: list[LatentEmbedding] = []
    for seed in seeds:
        images.append(sample(model, bundle, seed=seed, steps=steps)[0])
        embeddings.extend(
            extract_latents(
                model,
                STAGE_MIDSAMPLE,
                bundle=bundle,
                seed=seed,
                t_capture=t_capture,
                steps=steps,
                city_ids=[target_city],
                condition_ids=[f"transfer-{source_city}-to-{target_city}-seed{seed}"],
                kind="transfer",
            )
        )
    return TransferResult(prompt=prompt, images=np.stack(images), embeddings=embeddings)
