"""Checkpoint directory layout: manifest.json + weights.bin.

weights.bin is a flat named-tensor container: a fixed magic, a tensor count,
then per tensor its utf-8 name, dtype tag, shape, and a little-endian float32
row-major payload, with names stored in sorted order. No pickling anywhere,
and the byte stream is platform-independent, so saved checkpoints hash
identically wherever they were produced.

Optimizer moments ride along as extra tensors under the "optim." prefix so a
resumed run continues from the exact optimizer state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .model import ModelConfig, UrbanDiffusionModel

_MAGIC = b"UDT1"
_DTYPE_F32 = 0
_DTYPE_I64 = 1

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


def _write_tensor(out: bytearray, name: str, array: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    if array.dtype == np.float32:
        tag = _DTYPE_F32
    elif array.dtype == np.int64:
        tag = _DTYPE_I64
    else:
        raise CheckpointError(f"tensor {name} has unsupported dtype {array.dtype}")
    out += struct.pack("<H", len(name_b))
    out += name_b
    out += struct.pack("<BB", tag, array.ndim)
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    out += np.ascontiguousarray(array).astype(array.dtype, copy=False).tobytes()


def write_tensor_file(path: Path, tensors: dict[str, np.ndarray]) -> None:
    out = bytearray(_MAGIC)
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        _write_tensor(out, name, tensors[name])
    path.write_bytes(bytes(out))


def read_tensor_file(path: Path) -> dict[str, np.ndarray]:
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise CheckpointError(f"{path} is not a tensor container (bad magic)")
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            tag, ndim = struct.unpack_from("<BB", data, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            dtype = {_DTYPE_F32: np.float32, _DTYPE_I64: np.int64}.get(tag)
            if dtype is None:
                raise CheckpointError(f"tensor {name} has unknown dtype tag {tag}")
            n_bytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
            payload = data[offset : offset + n_bytes]
            if len(payload) != n_bytes:
                raise CheckpointError(f"tensor {name} payload truncated")
            offset += n_bytes
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    except struct.error as exc:
        raise CheckpointError(f"corrupt tensor container {path}: {exc}") from exc
    if offset != len(data):
        raise CheckpointError(f"{path} has {len(data) - offset} trailing bytes")
    return tensors


def _optimizer_tensors(model: UrbanDiffusionModel, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    """Adam moments keyed by the owning parameter's checkpoint name."""
    # state_dict views and parameters share storage; match by data pointer
    by_ptr = {t.data_ptr(): n for n, t in model.named_tensors().items()}
    out: dict[str, np.ndarray] = {}
    for p, state in optimizer.state.items():
        name = by_ptr.get(p.data_ptr())
        if name is None:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                out[f"optim.{name}.{key}"] = state[key].detach().cpu().numpy().astype(np.float32)
        if "step" in state:
            step = state["step"]
            step_val = int(step.item() if torch.is_tensor(step) else step)
            out[f"optim.{name}.step"] = np.array([step_val], dtype=np.int64)
    return out


def save_checkpoint(
    directory: str | Path,
    model: UrbanDiffusionModel,
    training_steps: int,
    corpus_hash: str = "",
    rng_digest: str = "",
    optimizer: torch.optim.Optimizer | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.named_tensors().items()
    }
    if optimizer is not None:
        tensors.update(_optimizer_tensors(model, optimizer))
    write_tensor_file(directory / WEIGHTS_NAME, tensors)
    manifest = {
        "format": 1,
        "config": model.config.to_dict(),
        "training_steps": int(training_steps),
        "corpus_hash": corpus_hash,
        "rng_digest": rng_digest,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> tuple[UrbanDiffusionModel, dict, dict[str, np.ndarray]]:
    """Rebuild the model from a checkpoint directory.

    Returns (model, manifest dict, optimizer tensors by name)."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    weights_path = directory / WEIGHTS_NAME
    if not manifest_path.is_file() or not weights_path.is_file():
        raise CheckpointError(f"{directory} is not a checkpoint directory")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable manifest in {directory}: {exc}") from exc
    if manifest.get("format") != 1:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    config = ModelConfig.from_dict(manifest["config"])
    model = UrbanDiffusionModel(config)
    raw = read_tensor_file(weights_path)
    optim = {n: a for n, a in raw.items() if n.startswith("optim.")}
    weights = {n: torch.from_numpy(a) for n, a in raw.items() if not n.startswith("optim.")}
    try:
        model.load_named_tensors(weights)
    except (ValueError, RuntimeError) as exc:
        raise CheckpointError(f"weights in {directory} do not fit the config: {exc}") from exc
    return model, manifest, optim


def restore_optimizer(
    model: UrbanDiffusionModel, optimizer: torch.optim.Optimizer, optim_tensors: dict[str, np.ndarray]
) -> None:
    """Load saved Adam moments into a freshly built optimizer."""
    by_ptr = {t.data_ptr(): n for n, t in model.named_tensors().items()}
    by_name = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            name = by_ptr.get(p.data_ptr())
            if name is not None:
                by_name[name] = p
    for name, param in by_name.items():
        state = {}
        for key in ("exp_avg", "exp_avg_sq"):
            full = f"optim.{name}.{key}"
            if full in optim_tensors:
                state[key] = torch.from_numpy(optim_tensors[full].copy())
        step_key = f"optim.{name}.step"
        if step_key in optim_tensors:
            state["step"] = torch.tensor(float(optim_tensors[step_key][0]))
        if state:
            optimizer.state[param] = state
