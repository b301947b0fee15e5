"""Latent feature extraction for representation analysis.

The pipeline mirrors the model's own data flow: real images are VAE-encoded,
generations are observed mid-way through the reverse chain at a fixed step,
and both kinds of latents go through the same pooling, flattening, PCA, and
2-D embedding stages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..diffusion.sampling import denoise_step, resolve_schedule
from ..errors import AnalysisError
from ..geogrid.rasters import image_to_unit
from ..seeding import derive_seed

STAGE_ENCODE = "encode"
STAGE_MIDSAMPLE = "midsample"
STAGES = (STAGE_ENCODE, STAGE_MIDSAMPLE)

KINDS = ("real", "generated", "transfer")


@dataclass
class LatentEmbedding:
    """One latent observation and its progressively reduced views.

    ``pca`` and ``planar`` start as None and are filled in by the projection
    stages; ``kind`` records the latent's provenance.
    """

    raw: np.ndarray
    pooled: np.ndarray
    flat: np.ndarray
    city_id: str
    condition_id: str
    kind: str
    pca: np.ndarray | None = None
    planar: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise AnalysisError(f"kind must be one of {KINDS}, got {self.kind!r}")

    def to_record(self) -> dict:
        """JSON-lines record for the serialized embedding set."""
        return {
            "id": self.condition_id,
            "city": self.city_id,
            "kind": self.kind,
            "planar": None if self.planar is None else [float(v) for v in self.planar],
            "pca": None if self.pca is None else [float(v) for v in self.pca],
        }


def pool_latent(raw: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the spatial dims of a (C, H, W) latent."""
    c, h, w = raw.shape
    if h % 2 or w % 2:
        raise AnalysisError(f"latent spatial dims must be even, got {raw.shape}")
    return raw.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _embedding_from_raw(
    raw: np.ndarray, city_id: str, condition_id: str, kind: str
) -> LatentEmbedding:
    pooled = pool_latent(raw)
    return LatentEmbedding(
        raw=raw,
        pooled=pooled,
        flat=pooled.reshape(-1).copy(),
        city_id=city_id,
        condition_id=condition_id,
        kind=kind,
    )


def _midsample_latents(model, bundle, seed: int, t_capture: int, steps: int | None):
    """x_t at the capture step, following the sampler's own noise stream."""
    schedule, query = resolve_schedule(model, steps)
    if not 1 <= t_capture <= schedule.T:
        raise AnalysisError(
            f"capture step {t_capture} outside the schedule range [1, {schedule.T}]"
        )
    gen = torch.Generator().manual_seed(derive_seed(seed, "sample"))
    hw = model.config.latent_hw
    x = torch.randn((bundle.batch_size, 4, hw, hw), generator=gen)
    with torch.no_grad():
        for t in range(schedule.T, t_capture, -1):
            x = denoise_step(model, x, t, bundle, gen, schedule=schedule, model_t=query[t - 1])
    return x


def extract_latents(
    model,
    stage: str,
    *,
    images: np.ndarray | None = None,
    bundle=None,
    seed: int = 0,
    t_capture: int | None = None,
    steps: int | None = None,
    city_ids: list[str] | None = None,
    condition_ids: list[str] | None = None,
    kind: str | None = None,
) -> list[LatentEmbedding]:
    """Latent embeddings for real images or in-flight generations.

    ``stage`` selects the source: "encode" VAE-encodes ``images`` (kind
    defaults to "real"); "midsample" runs the reverse chain for ``bundle``
    down to ``t_capture`` (default T/2) and captures x_t (kind defaults to
    "generated").  Deterministic for fixed inputs and seed.
    """
    if stage == STAGE_ENCODE:
        if images is None:
            raise AnalysisError("encode stage needs images")
        unit = np.stack([image_to_unit(img) for img in np.asarray(images)])
        with torch.no_grad():
            latents = model.encode_images(torch.from_numpy(unit))
        kind = kind or "real"
    elif stage == STAGE_MIDSAMPLE:
        if bundle is None:
            raise AnalysisError("midsample stage needs a conditioning bundle")
        if t_capture is None:
            t_capture = max(1, model.config.T // 2)
        latents = _midsample_latents(model, bundle, seed, t_capture, steps)
        kind = kind or "generated"
    else:
        raise AnalysisError(f"unknown extraction stage {stage!r}; expected one of {STAGES}")

    n = latents.shape[0]
    city_ids = city_ids or [""] * n
    condition_ids = condition_ids or [f"item-{i}" for i in range(n)]
    if len(city_ids) != n or len(condition_ids) != n:
        raise AnalysisError("label lists must match the number of latents")
    arrays = latents.detach().cpu().numpy().astype(np.float64)
    return [
        _embedding_from_raw(arrays[i], city_ids[i], condition_ids[i], kind)
        for i in range(n)
    ]


def save_embeddings(embeddings: list[LatentEmbedding], path: str | Path) -> None:
    """Write the embedding set as JSON-lines of {id, city, kind, planar, pca}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for emb in embeddings:
            fh.write(json.dumps(emb.to_record(), sort_keys=True) + "\n")


def load_embedding_records(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
