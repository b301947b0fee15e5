"""Corpus-to-training bridge: manifest records to seeded tensor batches."""

from __future__ import annotations

import numpy as np
import torch

from ..conditioning.towers import normalize_dem
from ..geogrid.manifest import CorpusManifest, ManifestRecord, load_record_layers
from ..geogrid.rasters import image_to_unit


class TrainingData:
    """Arrays for one corpus split plus the batch providers train_loop wants.

    Everything is loaded once up front; the desk corpus fits comfortably in
    memory and index-based batching keeps data order a pure function of the
    step seed.
    """

    def __init__(self, manifest: CorpusManifest, records: list[ManifestRecord]):
        if not records:
            raise ValueError("no records in the requested split")
        images, dems, constraints = [], [], []
        for record in records:
            layers = load_record_layers(manifest, record)
            images.append(layers["image"].values)
            dems.append(normalize_dem(layers["dem"].values))
            constraints.append((layers["constraint"].values > 0).astype(np.float32))
        self.records = records
        self.images = np.stack(images)
        self.prompts = [r.prompt for r in records]
        self.dem = torch.from_numpy(np.stack(dems)).unsqueeze(1)
        self.constraint = torch.from_numpy(np.stack(constraints)).unsqueeze(1)
        self.latents: torch.Tensor | None = None

    @classmethod
    def from_manifest(cls, manifest: CorpusManifest, split: str = "train") -> "TrainingData":
        return cls(manifest, manifest.by_split(split))

    def __len__(self) -> int:
        return len(self.records)

    def unit_images(self) -> torch.Tensor:
        unit = np.stack([image_to_unit(img) for img in self.images])
        return torch.from_numpy(unit)

    def image_provider(self, batch_size: int):
        """Provider for VAE pretraining: unit-range image batches."""
        unit = self.unit_images()

        def provider(step: int, rng: np.random.Generator) -> torch.Tensor:
            idx = rng.choice(len(self.records), size=min(batch_size, len(self.records)), replace=False)
            return unit[torch.from_numpy(np.sort(idx))]

        return provider

    def precompute_latents(self, model, chunk: int = 64) -> None:
        """Encode every image once with the frozen VAE (posterior means)."""
        unit = self.unit_images()
        outputs = []
        with torch.no_grad():
            for start in range(0, unit.shape[0], chunk):
                outputs.append(model.encode_images(unit[start : start + chunk]))
        self.latents = torch.cat(outputs)

    def batch_provider(self, batch_size: int):
        """Provider for diffusion training: {latents, prompts, dem, constraint}."""
        if self.latents is None:
            raise ValueError("call precompute_latents(model) after VAE training first")

        def provider(step: int, rng: np.random.Generator) -> dict:
            idx = np.sort(rng.choice(len(self.records), size=min(batch_size, len(self.records)), replace=False))
            return {
                "latents": self.latents[torch.from_numpy(idx)],
                "prompts": [self.prompts[i] for i in idx],
                "dem": self.dem[torch.from_numpy(idx)],
                "constraint": self.constraint[torch.from_numpy(idx)],
            }

        return provider
