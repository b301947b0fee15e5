"""Run directories: config.json, manifest.jsonl, checkpoints/, images/,
reports/, log.jsonl, plus resume discovery."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from ..diffusion.checkpoint import load_checkpoint
from ..errors import ConfigError
from .config import RunConfig

_STEP_DIR = re.compile(r"^step-(\d+)$")


@dataclass
class RunPaths:
    root: Path

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def images_dir(self) -> Path:
        return self.root / "images"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    @property
    def log_path(self) -> Path:
        return self.root / "log.jsonl"

    def checkpoint_dir(self, step: int) -> Path:
        return self.checkpoints_dir / f"step-{step:07d}"


def create_run(config: RunConfig, run_id: str, output_dir: str | Path | None = None) -> RunPaths:
    """Lay out output_dir/{run_id}/ and persist the config with its digest."""
    root = Path(output_dir if output_dir is not None else config.output_dir) / run_id
    paths = RunPaths(root=root)
    for directory in (root, paths.checkpoints_dir, paths.images_dir, paths.reports_dir):
        directory.mkdir(parents=True, exist_ok=True)
    payload = dict(config.data)
    payload["config_digest"] = config.digest()
    paths.config_path.write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return paths


def open_run(root: str | Path) -> tuple[RunPaths, RunConfig]:
    """Reopen an existing run, recovering its config for resumption."""
    paths = RunPaths(root=Path(root))
    if not paths.config_path.is_file():
        raise ConfigError(f"run {paths.root} has no config.json; not resumable")
    data = json.loads(paths.config_path.read_text(encoding="utf-8"))
    stored_digest = data.pop("config_digest", None)
    config = RunConfig(data)
    if stored_digest is not None and stored_digest != config.digest():
        raise ConfigError(
            f"run {paths.root} config digest mismatch; file was edited after creation"
        )
    return paths, config


def latest_checkpoint_step(paths: RunPaths) -> int | None:
    steps = []
    if paths.checkpoints_dir.is_dir():
        for child in paths.checkpoints_dir.iterdir():
            match = _STEP_DIR.match(child.name)
            if match and child.is_dir():
                steps.append(int(match.group(1)))
    return max(steps) if steps else None


def load_latest_checkpoint(paths: RunPaths):
    """(model, manifest, optimizer tensors, step) from the newest checkpoint."""
    step = latest_checkpoint_step(paths)
    if step is None:
        return None
    model, manifest, optim = load_checkpoint(paths.checkpoint_dir(step))
    return model, manifest, optim, step


class RunLog:
    """Append-only JSON-lines log with a monotone step field."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._last_step = -1
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._last_step = max(self._last_step, int(json.loads(line)["step"]))

    def log(self, step: int, **fields) -> None:
        if step < self._last_step:
            raise ConfigError(
                f"log steps must be non-decreasing ({step} after {self._last_step})"
            )
        self._last_step = step
        record = {"step": step, **fields}
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def append_artifact(paths: RunPaths, kind: str, rel_path: str, **extra) -> None:
    """Record a produced artifact in the run manifest."""
    record = {"kind": kind, "path": rel_path, **extra}
    with paths.manifest_path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
