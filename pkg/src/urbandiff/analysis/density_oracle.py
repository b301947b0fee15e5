"""Density-compliance oracle: a CNN regressor estimating BCR/BVD from imagery.

The oracle is trained exclusively on real corpus images (enforced through
provenance tags) and then used to check whether generated images obey the
densities their prompts asked for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import AnalysisError
from ..seeding import derive_seed

ORACLE_METRICS = ("bcr", "bvd")

# Fixed input normalization, recorded here and as buffers on the model so a
# saved oracle carries its own preprocessing.
_INPUT_MEAN = (0.5, 0.5, 0.5)
_INPUT_STD = (0.25, 0.25, 0.25)


class DensityOracle(nn.Module):
    """Small CNN with a multi-output head, sigmoid-bounded per metric.

    Raw sigmoid outputs live in (0, 1); ``forward`` rescales them to the
    per-metric label ranges captured at training time, so predictions are in
    real units.
    """

    def __init__(self, metrics: tuple[str, ...] = ORACLE_METRICS, input_px: int = 64):
        super().__init__()
        self.metrics = tuple(metrics)
        self.input_px = input_px
        self.body = nn.Sequential(
            nn.Conv2d(3, 24, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(24, 48, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(48, 64, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1),
            nn.SiLU(),
        )
        self.head = nn.Linear(96, len(self.metrics))
        self.register_buffer("range_lo", torch.zeros(len(self.metrics)))
        self.register_buffer("range_hi", torch.ones(len(self.metrics)))
        self.register_buffer("input_mean", torch.tensor(_INPUT_MEAN).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(_INPUT_STD).view(1, 3, 1, 1))

    def preprocess(self, images: np.ndarray) -> torch.Tensor:
        arr = np.asarray(images)
        if arr.ndim == 3:
            arr = arr[None]
        x = torch.from_numpy(arr.astype(np.float32) / 255.0).permute(0, 3, 1, 2)
        if x.shape[-1] != self.input_px:
            x = F.interpolate(x, size=(self.input_px, self.input_px), mode="bilinear", align_corners=False)
        return (x - self.input_mean) / self.input_std

    def scaled(self, x: torch.Tensor) -> torch.Tensor:
        """Sigmoid outputs in (0, 1), the space the loss is computed in."""
        h = self.body(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.range_lo + self.scaled(x) * (self.range_hi - self.range_lo)


@torch.no_grad()
def oracle_predict(oracle: DensityOracle, images: np.ndarray) -> dict[str, np.ndarray]:
    """Per-metric predictions in real units for a stack of uint8 images."""
    oracle.eval()
    out = oracle(oracle.preprocess(images)).double().numpy()
    return {name: out[:, i] for i, name in enumerate(oracle.metrics)}


def train_density_oracle(
    images: np.ndarray,
    targets: dict[str, np.ndarray],
    kinds: list[str] | None = None,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 3e-4,
    seed: int = 0,
    metrics: tuple[str, ...] = ORACLE_METRICS,
) -> DensityOracle:
    """Train the compliance oracle on real images with smooth-L1 loss.

    Refuses fewer than 100 records (underdetermined) and any record whose
    provenance tag is not "real": the oracle's credibility as a referee
    rests on never having seen a generated image.
    """
    arr = np.asarray(images)
    n = arr.shape[0]
    if n < 100:
        raise AnalysisError(f"density oracle needs at least 100 records, got {n}")
    if kinds is not None:
        bad = {k for k in kinds if k != "real"}
        if bad:
            raise AnalysisError(f"oracle training set contains non-real records: {sorted(bad)}")
    label_mat = np.stack([np.asarray(targets[m], dtype=np.float64) for m in metrics], axis=1)
    if label_mat.shape[0] != n:
        raise AnalysisError("images and targets must align")

    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "oracle-init"))
        oracle = DensityOracle(metrics=metrics, input_px=arr.shape[1])
    lo = label_mat.min(axis=0)
    hi = label_mat.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    oracle.range_lo.copy_(torch.from_numpy(lo).float())
    oracle.range_hi.copy_(torch.from_numpy(lo + span).float())
    scaled_targets = torch.from_numpy((label_mat - lo) / span).float()

    inputs = oracle.preprocess(arr)
    optimizer = torch.optim.Adam(oracle.parameters(), lr=lr)
    oracle.train()
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(seed, "oracle-epoch", epoch))
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            pred = oracle.scaled(inputs[idx])
            loss = F.smooth_l1_loss(pred, scaled_targets[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    oracle.eval()
    return oracle


@dataclass
class ComplianceScore:
    """Agreement between prompted and oracle-estimated densities.

    ``per_metric`` maps metric name to {mae, r2, count}; prompts that do not
    mention a metric are skipped and tallied in ``skipped``.
    """

    per_metric: dict[str, dict[str, float]]
    skipped: dict[str, int] = field(default_factory=dict)


def _r2(true: np.ndarray, pred: np.ndarray) -> float:
    ss_res = float(np.sum((true - pred) ** 2))
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    return 1.0 - ss_res / ss_tot


def compliance_score(
    gen_images: np.ndarray,
    prompted: list[dict[str, float | None]],
    oracle: DensityOracle,
) -> ComplianceScore:
    """Score generated images against their prompted density values.

    ``prompted`` holds one dict per image; a missing or None entry means the
    prompt did not constrain that metric and the image is skipped for it.
    """
    arr = np.asarray(gen_images)
    if arr.shape[0] != len(prompted):
        raise AnalysisError("images and prompted values must align")
    estimates = oracle_predict(oracle, arr)
    per_metric: dict[str, dict[str, float]] = {}
    skipped: dict[str, int] = {}
    for metric in oracle.metrics:
        idx = [
            i for i, entry in enumerate(prompted) if entry.get(metric) is not None
        ]
        skipped[metric] = len(prompted) - len(idx)
        if not idx:
            continue
        true = np.array([float(prompted[i][metric]) for i in idx])
        pred = estimates[metric][idx]
        per_metric[metric] = {
            "mae": float(np.mean(np.abs(true - pred))),
            "r2": _r2(true, pred),
            "count": len(idx),
        }
    return ComplianceScore(per_metric=per_metric, skipped=skipped)


def save_oracle(oracle: DensityOracle, path) -> None:
    """Write the oracle weights to a single tensor-container file."""
    from pathlib import Path

    from ..diffusion.checkpoint import write_tensor_file

    tensors = {k: v.detach().cpu().numpy() for k, v in oracle.state_dict().items()}
    tensors["meta.input_px"] = np.array([oracle.input_px], dtype=np.int64)
    name_bytes = ",".join(oracle.metrics).encode("utf-8")
    tensors["meta.metrics"] = np.frombuffer(name_bytes, dtype=np.uint8).astype(np.int64)
    write_tensor_file(Path(path), tensors)


def load_oracle(path) -> DensityOracle:
    from pathlib import Path

    from ..diffusion.checkpoint import read_tensor_file

    arrays = read_tensor_file(Path(path))
    input_px = int(arrays.pop("meta.input_px")[0])
    metric_bytes = arrays.pop("meta.metrics").astype(np.uint8).tobytes()
    metrics = tuple(metric_bytes.decode("utf-8").split(","))
    oracle = DensityOracle(metrics=metrics, input_px=input_px)
    oracle.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    oracle.eval()
    return oracle
