"""PNG scatter of planar embeddings, colored by city, transfer points starred."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..errors import AnalysisError
from .latents import LatentEmbedding


def plot_embedding_scatter(
    embeddings: list[LatentEmbedding], path: str | Path, title: str = "Latent atlas"
) -> None:
    points = [e for e in embeddings if e.planar is not None]
    if not points:
        raise AnalysisError("no embeddings carry planar coordinates; run the 2-D embedding first")

    cities = sorted({e.city_id for e in points})
    cmap = plt.get_cmap("tab20")
    fig, ax = plt.subplots(figsize=(7, 6))
    for i, city in enumerate(cities):
        color = cmap(i % 20)
        for kind, marker, size in (("real", "o", 22), ("generated", "s", 26), ("transfer", "*", 90)):
            xy = np.array([e.planar for e in points if e.city_id == city and e.kind == kind])
            if xy.size == 0:
                continue
            label = f"{city} ({kind})" if kind != "real" else city
            ax.scatter(xy[:, 0], xy[:, 1], c=[color], marker=marker, s=size, label=label,
                       edgecolors="black", linewidths=0.3 if kind == "transfer" else 0.0)
    ax.set_title(title)
    ax.set_xlabel("dim 1")
    ax.set_ylabel("dim 2")
    ax.legend(fontsize=7, loc="best", framealpha=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
