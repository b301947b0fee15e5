"""Grid cells and deterministic train/test splitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from urbandiff.seeding import rng_for


@dataclass(frozen=True)
class GridCell:
    """One square spatial unit of a city grid.

    origin is the (x, y) of the cell's lower-left corner in the city's local
    metric frame (meters). size_m is the side length. split is "train",
    "test", or "" while unassigned.
    """

    cell_id: str
    city_id: str
    origin: tuple[float, float] = (0.0, 0.0)
    size_m: float = 400.0
    split: str = field(default="")

    def __post_init__(self) -> None:
        if self.size_m <= 0:
            raise ValueError(f"size_m must be positive, got {self.size_m}")
        if self.split not in ("", "train", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def land_area_m2(self) -> float:
        return self.size_m * self.size_m


def assign_splits(
    cells: Sequence[GridCell],
    global_seed: int,
    train_fraction: float = 0.8,
) -> list[GridCell]:
    """Assign train/test splits, 80/20 within each city.

    The permutation for a city depends only on (city_id, global_seed), so the
    assignment is stable under reordering of the input and under changes to
    other cities. Within a city the train count is round(n * train_fraction),
    which keeps the fraction within one cell of the target.
    """
    by_city: dict[str, list[int]] = {}
    for i, cell in enumerate(cells):
        by_city.setdefault(cell.city_id, []).append(i)

    out: list[GridCell] = list(cells)
    for city_id, indices in by_city.items():
        # Order within a city is fixed by cell_id so input order is irrelevant.
        indices = sorted(indices, key=lambda i: cells[i].cell_id)
        rng = rng_for(global_seed, "split", city_id)
        perm = rng.permutation(len(indices))
        n_train = int(round(train_fraction * len(indices)))
        train_positions = set(perm[:n_train].tolist())
        for rank, i in enumerate(indices):
            split = "train" if rank in train_positions else "test"
            out[i] = replace(cells[i], split=split)
    return out
