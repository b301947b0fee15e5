"""Declarative run configuration: one JSON tree, dotted-path overrides, digest.

The default tree is the schema: a config file or a `--set` override may only
touch keys that exist here, so typos fail loudly with the offending path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..diffusion.model import ModelConfig
from ..errors import ConfigError
from ..synthcity import CorpusConfig

SCHEMA_VERSION = 1


def default_config() -> dict:
    corpus = CorpusConfig().to_dict()
    corpus["out_dir"] = "corpus"
    return {
        "schema_version": SCHEMA_VERSION,
        "global_seed": 0,
        "output_dir": "runs",
        "corpus": corpus,
        "model": ModelConfig().to_dict(),
        "training": {
            "vae_steps": 2000,
            "vae_lr": 1e-4,
            "vae_batch": 32,
            "stage1_steps": 1200,
            "stage2_steps": 1200,
            "checkpoint_every": 400,
            "log_every": 50,
        },
        "eval": {
            "generations_per_condition": 4,
            "sample_steps": None,
            "extractor_steps": 300,
        },
        "experiment": {
            "bvd_levels": [1.0, 2.5, 4.0, 5.5, 7.0],
            "seeds_per_level": 20,
            "transfer_pairs": [["Arvendale", "Brickmoor"], ["Calverra", "Dunmarsh"]],
            "augment": {
                "epochs": 12,
                "test_fraction": 0.3,
                "held_out_bvd": 6.0,
                "synthetic_per_level": 20,
            },
        },
        "service": {
            "host": "127.0.0.1",
            "port": 8008,
            "workers": 2,
            "queue_size": 16,
        },
    }


def _type_label(value: object) -> str:
    return type(value).__name__


def _check_assignable(old: object, new: object, path: str) -> None:
    if old is None or new is None:
        return
    if isinstance(old, bool) != isinstance(new, bool):
        raise ConfigError(
            f"expected {_type_label(old)}, got {_type_label(new)}", key_path=path
        )
    if isinstance(old, bool):
        return
    if isinstance(old, (int, float)) and isinstance(new, (int, float)):
        return
    if type(old) is not type(new):
        raise ConfigError(
            f"expected {_type_label(old)}, got {_type_label(new)}", key_path=path
        )


def _merge_into(base: dict, updates: dict, prefix: str = "") -> None:
    for key, value in updates.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown config key", key_path=path)
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_into(base[key], value, prefix=f"{path}.")
        else:
            _check_assignable(base[key], value, path)
            base[key] = value


def apply_overrides(data: dict, assignments: list[str]) -> dict:
    """Apply `--set key.path=value` assignments; values parse as JSON first."""
    data = copy.deepcopy(data)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError("override must look like key.path=value", key_path=assignment)
        key_path, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key_path.split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError("unknown config key", key_path=".".join(parts[: i + 1]))
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError("unknown config key", key_path=key_path)
        if isinstance(node[leaf], dict) and not isinstance(value, dict):
            raise ConfigError("cannot replace a section with a scalar", key_path=key_path)
        _check_assignable(node[leaf], value, key_path)
        node[leaf] = value
    return data


def config_digest(data: dict) -> str:
    return hashlib.sha256(
        json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


@dataclass
class RunConfig:
    """The validated config tree plus conveniences for the CLI and service."""

    data: dict

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(default_config())

    @classmethod
    def load(cls, path: str | Path | None, sets: list[str] | None = None) -> "RunConfig":
        data = default_config()
        if path is not None:
            try:
                loaded = json.loads(Path(path).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}", key_path=str(path))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}", key_path=str(path))
            if not isinstance(loaded, dict):
                raise ConfigError("config root must be a JSON object", key_path=str(path))
            version = loaded.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise ConfigError(
                    f"schema_version {version} unsupported (expected {SCHEMA_VERSION})",
                    key_path="schema_version",
                )
            _merge_into(data, loaded)
        if sets:
            data = apply_overrides(data, sets)
        return cls(data)

    @property
    def global_seed(self) -> int:
        return int(self.data["global_seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    def section(self, name: str) -> dict:
        return self.data[name]

    def corpus_config(self) -> CorpusConfig:
        fields = {k: v for k, v in self.data["corpus"].items() if k != "out_dir"}
        return CorpusConfig.from_dict(fields)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.data["model"])

    def digest(self) -> str:
        return config_digest(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")
