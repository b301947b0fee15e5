"""Orchestration: run configs, run directories, the job pool, the CLI, and
the HTTP service."""

from .config import SCHEMA_VERSION, RunConfig, apply_overrides, config_digest, default_config
from .data import TrainingData
from .jobs import DONE, FAILED, QUEUED, RUNNING, GenerationJob, JobRegistry
from .runs import (
    RunLog,
    RunPaths,
    append_artifact,
    create_run,
    latest_checkpoint_step,
    load_latest_checkpoint,
    open_run,
)

__all__ = [
    "DONE",
    "FAILED",
    "QUEUED",
    "RUNNING",
    "SCHEMA_VERSION",
    "GenerationJob",
    "JobRegistry",
    "RunConfig",
    "RunLog",
    "RunPaths",
    "TrainingData",
    "append_artifact",
    "apply_overrides",
    "config_digest",
    "create_run",
    "default_config",
    "latest_checkpoint_step",
    "load_latest_checkpoint",
    "open_run",
]
