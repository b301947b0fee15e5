"""Small convolutional feature extractor used by the perceptual metrics.

Full-scale evaluation pipelines lean on large pretrained backbones for their
feature spaces.  At desk scale the backbone is a five-stage CNN trained on the
corpus's own city-identity task; the perceptual formulas (Gram matrices, FID,
feature distances) only require *some* fixed feature space, and a city
classifier's features are exactly the ones that separate the styles these
metrics are supposed to measure.  The extractor's weight digest is recorded in
every report so numbers are never compared across different feature spaces.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import EvalError
from ..seeding import derive_seed

TAP_NAMES = ("conv1", "conv2", "conv3", "conv4", "conv5")
POOL_DIM = 64

_STAGE_CHANNELS = (16, 24, 32, 48, POOL_DIM)


class FeatureExtractor(nn.Module):
    """Five-stage CNN with named taps conv1..conv5 and a 64-d pooled vector.

    Stage 1 keeps full resolution; each later stage halves it.  ``features``
    returns every tap after its activation, plus the global average pool that
    feeds the classifier head.
    """

    def __init__(self, n_classes: int = 2):
        super().__init__()
        self.n_classes = n_classes
        stages = []
        in_ch = 3
        for i, out_ch in enumerate(_STAGE_CHANNELS):
            stride = 1 if i == 0 else 2
            stages.append(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.act = nn.SiLU()
        self.head = nn.Linear(POOL_DIM, n_classes)

    def features(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """All named taps for a (B, 3, H, W) batch in [0, 1]."""
        taps: dict[str, torch.Tensor] = {}
        h = x
        for name, stage in zip(TAP_NAMES, self.stages):
            h = self.act(stage(h))
            taps[name] = h
        taps["pool"] = h.mean(dim=(2, 3))
        return taps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)["pool"])


def _image_batch_to_tensor(images: np.ndarray) -> torch.Tensor:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise EvalError(f"expected (N, H, W, 3) uint8 images, got shape {arr.shape}")
    t = torch.from_numpy(arr.astype(np.float32) / 255.0)
    return t.permute(0, 3, 1, 2).contiguous()


@torch.no_grad()
def extract_features(
    extractor: FeatureExtractor, images: np.ndarray, batch_size: int = 64
) -> dict[str, list[torch.Tensor]]:
    """Per-image taps for a stack of uint8 images, batched for memory."""
    extractor.eval()
    out: dict[str, list[torch.Tensor]] = {name: [] for name in (*TAP_NAMES, "pool")}
    tensor = _image_batch_to_tensor(images)
    for start in range(0, tensor.shape[0], batch_size):
        taps = extractor.features(tensor[start : start + batch_size])
        for name, value in taps.items():
            out[name].extend(value)
    return out


@torch.no_grad()
def pooled_features(
    extractor: FeatureExtractor, images: np.ndarray, batch_size: int = 64
) -> np.ndarray:
    """(N, 64) pooled feature matrix, the input space of FID."""
    extractor.eval()
    tensor = _image_batch_to_tensor(images)
    chunks = []
    for start in range(0, tensor.shape[0], batch_size):
        chunks.append(extractor.features(tensor[start : start + batch_size])["pool"])
    feats = torch.cat(chunks).double().numpy()
    if not np.all(np.isfinite(feats)):
        raise EvalError("extractor produced non-finite features")
    return feats


def train_extractor(
    images: np.ndarray,
    city_ids: np.ndarray,
    steps: int = 300,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """Train a city-identity classifier and return it in eval mode.

    Labels are remapped to a dense 0..K-1 range internally, so sparse city id
    sets are fine.  Training is deterministic for a given seed.
    """
    labels = np.asarray(city_ids, dtype=np.int64)
    tensor = _image_batch_to_tensor(images)
    if labels.shape[0] != tensor.shape[0]:
        raise EvalError(
            f"got {tensor.shape[0]} images but {labels.shape[0]} city labels"
        )
    unique = np.unique(labels)
    dense = np.searchsorted(unique, labels)
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "extractor-init"))
        model = FeatureExtractor(n_classes=len(unique))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    target = torch.from_numpy(dense)
    model.train()
    for step in range(steps):
        rng = np.random.default_rng(derive_seed(seed, "extractor-step", step))
        idx = rng.integers(0, tensor.shape[0], size=min(batch_size, tensor.shape[0]))
        batch = tensor[idx]
        logits = model(batch)
        loss = loss_fn(logits, target[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    model.eval()
    return model


def extractor_digest(extractor: FeatureExtractor) -> str:
    """Hex digest of the extractor's weights; identifies the feature space."""
    h = hashlib.sha256()
    for name, tensor in sorted(extractor.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().to(torch.float32).numpy().tobytes())
    return h.hexdigest()


def save_extractor(extractor: FeatureExtractor, path: str | Path) -> None:
    """Write the extractor weights to a single tensor-container file."""
    from ..diffusion.checkpoint import write_tensor_file

    tensors = {
        k: v.detach().cpu().numpy() for k, v in extractor.state_dict().items()
    }
    tensors["meta.n_classes"] = np.array([extractor.n_classes], dtype=np.int64)
    write_tensor_file(Path(path), tensors)


def load_extractor(path: str | Path) -> FeatureExtractor:
    from ..diffusion.checkpoint import read_tensor_file

    arrays = read_tensor_file(Path(path))
    n_classes = int(arrays.pop("meta.n_classes")[0])
    model = FeatureExtractor(n_classes=n_classes)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model
