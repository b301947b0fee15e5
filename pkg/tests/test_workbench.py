"""Orchestration layer: run configs, run directories, the job pool, the CLI,
and the HTTP service.

The session fixture drives the real CLI end to end on a tiny corpus and a
tiny model (32 px, 20 diffusion steps), so most tests here exercise the same
code paths a desk run would, just shrunk.
"""

import base64
import hashlib
import io
import json
import shutil
import threading
import time

import numpy as np
import pytest
import torch
from PIL import Image
from fastapi.testclient import TestClient

from urbandiff.analysis import train_density_oracle
from urbandiff.diffusion.training import parameter_digests
from urbandiff.errors import ConfigError, JobError
from urbandiff.geogrid.manifest import load_manifest
from urbandiff.quality.report import EvalReport
from urbandiff.workbench import (
    DONE,
    FAILED,
    QUEUED,
    JobRegistry,
    RunConfig,
    RunLog,
    RunPaths,
    TrainingData,
    apply_overrides,
    create_run,
    default_config,
    latest_checkpoint_step,
    open_run,
)
from urbandiff.workbench.cli import _load_model, main
from urbandiff.workbench.service import build_state, create_app


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def tiny_config(root) -> dict:
    cfg = default_config()
    cfg["output_dir"] = str(root / "runs")
    cfg["corpus"].update({"n_cities": 2, "cells_per_city": 50, "image_px": 32})
    cfg["model"].update({
        "image_px": 32, "latent_hw": 8, "T": 20, "unet_base": 16, "vae_base": 16,
        "text_dim": 48, "num_dim": 16, "tower_channels": 16, "batch_size": 4,
    })
    cfg["training"].update({
        "vae_steps": 20, "vae_lr": 1e-3, "vae_batch": 8,
        "stage1_steps": 6, "stage2_steps": 6, "checkpoint_every": 3, "log_every": 2,
    })
    cfg["experiment"]["augment"].update({"epochs": 1, "synthetic_per_level": 1})
    cfg["service"].update({"workers": 1, "queue_size": 8})
    return cfg


def wait_done(client, job_id, timeout=90.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["status"] in (DONE, FAILED):
            return job
        time.sleep(0.02)
    pytest.fail(f"job {job_id} did not finish within {timeout}s")


def png_b64(array: np.ndarray) -> str:
    buf = io.BytesIO()
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def read_pixels(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    """Corpus built, VAE trained, both diffusion stages trained, via the CLI."""
    root = tmp_path_factory.mktemp("workbench")
    cfg = tiny_config(root)
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    config = RunConfig.load(cfg_path, [])
    digest8 = config.digest()[:8]

    assert main(["synth", "--config", str(cfg_path)]) == 0
    assert main(["train-vae", "--config", str(cfg_path)]) == 0
    vae_ckpt = root / "runs" / f"vae-{digest8}" / "checkpoints" / "step-0000020"
    assert main(["train", "--config", str(cfg_path), "--init", str(vae_ckpt)]) == 0

    return {
        "root": root,
        "config_path": cfg_path,
        "config": config,
        "corpus_dir": root / "runs" / "corpus",
        "vae_ckpt": vae_ckpt,
        "train_run": root / "runs" / f"train-{digest8}",
        "checkpoint": root / "runs" / f"train-{digest8}" / "checkpoints" / "step-0000012",
    }


@pytest.fixture(scope="session")
def manifest(workdir):
    return load_manifest(workdir["corpus_dir"] / "manifest.jsonl")


@pytest.fixture(scope="session")
def model(workdir):
    return _load_model(workdir["checkpoint"])


@pytest.fixture(scope="session")
def corpus_images(manifest):
    images = []
    for record in manifest.records:
        with Image.open(manifest.resolve(record.image_path)) as img:
            images.append(np.asarray(img.convert("RGB")))
    return np.stack(images)


@pytest.fixture(scope="session")
def service_client(workdir, manifest, model, corpus_images):
    targets = {
        "bcr": np.array([r.metrics.bcr for r in manifest.records]),
        "bvd": np.array([r.metrics.bvd for r in manifest.records]),
    }
    oracle = train_density_oracle(
        corpus_images, targets, kinds=["real"] * len(manifest.records), epochs=1, seed=0
    )
    latents = [
        {"city": "c0", "kind": "real", "id": "c0_0000", "x": 1.0, "y": 2.0},
        {"city": "c1", "kind": "real", "id": "c1_0000", "x": -1.0, "y": 0.0},
        {"city": "c1", "kind": "generated", "id": "g1", "x": 0.0, "y": 0.5},
    ]
    state = build_state(
        model, manifest=manifest, oracle=oracle, latent_records=latents,
        workers=1, queue_size=8, global_seed=0,
    )
    client = TestClient(create_app(state))
    yield client
    state.registry.shutdown()


# ---------------------------------------------------------------------------
# RunConfig.
# ---------------------------------------------------------------------------


class TestRunConfig:
    def test_defaults_round_trip(self, tmp_path):
        config = RunConfig.defaults()
        path = tmp_path / "c.json"
        config.save(path)
        again = RunConfig.load(path, [])
        assert again.to_json() == config.to_json()
        assert again.digest() == config.digest()

    def test_digest_ignores_key_order(self):
        data = default_config()
        reordered = json.loads(json.dumps(data, sort_keys=True))
        reordered["training"] = dict(reversed(list(reordered["training"].items())))
        assert RunConfig(data).digest() == RunConfig(reordered).digest()

    def test_override_parses_json_values(self):
        data = apply_overrides(default_config(), [
            "training.vae_steps=5", "training.vae_lr=0.5", "corpus.out_dir=elsewhere",
        ])
        assert data["training"]["vae_steps"] == 5
        assert data["training"]["vae_lr"] == 0.5
        assert data["corpus"]["out_dir"] == "elsewhere"
        assert default_config()["training"]["vae_steps"] != 5

    def test_override_unknown_key_names_path(self):
        with pytest.raises(ConfigError, match="training.no_such_knob"):
            apply_overrides(default_config(), ["training.no_such_knob=1"])

    def test_override_wrong_type_names_path(self):
        with pytest.raises(ConfigError, match="training.vae_steps"):
            apply_overrides(default_config(), ["training.vae_steps=lots"])

    def test_override_cannot_replace_section(self):
        with pytest.raises(ConfigError, match="section"):
            apply_overrides(default_config(), ["training=7"])

    def test_bool_not_interchangeable_with_int(self):
        data = default_config()
        with pytest.raises(ConfigError, match="global_seed"):
            apply_overrides(data, ["global_seed=true"])

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "absent.json", [])

    def test_load_rejects_schema_version_mismatch(self, tmp_path):
        data = default_config()
        data["schema_version"] = 99
        path = tmp_path / "c.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(ConfigError, match="schema_version"):
            RunConfig.load(path, [])

    def test_digest_sensitive_to_values(self):
        a = RunConfig.defaults()
        data = default_config()
        data["global_seed"] = 1
        assert RunConfig(data).digest() != a.digest()


# ---------------------------------------------------------------------------
# Run directories.
# ---------------------------------------------------------------------------


class TestRunDirs:
    def test_create_run_layout(self, tmp_path):
        paths = create_run(RunConfig.defaults(), "r1", tmp_path)
        assert paths.config_path.exists()
        assert paths.checkpoints_dir.is_dir()
        assert paths.images_dir.is_dir()
        assert paths.reports_dir.is_dir()
        stored = json.loads(paths.config_path.read_text(encoding="utf-8"))
        assert stored["config_digest"] == RunConfig.defaults().digest()

    def test_open_run_refuses_edited_config(self, tmp_path):
        paths = create_run(RunConfig.defaults(), "r1", tmp_path)
        stored = json.loads(paths.config_path.read_text(encoding="utf-8"))
        stored["global_seed"] = 123
        paths.config_path.write_text(json.dumps(stored), encoding="utf-8")
        with pytest.raises(ConfigError, match="digest mismatch"):
            open_run(paths.root)

    def test_open_run_requires_config(self, tmp_path):
        (tmp_path / "bare").mkdir()
        with pytest.raises(ConfigError, match="config.json"):
            open_run(tmp_path / "bare")

    def test_log_steps_non_decreasing(self, tmp_path):
        log = RunLog(tmp_path / "log.jsonl")
        log.log(0, event="a")
        log.log(0, event="b")
        log.log(5, event="c")
        with pytest.raises(ConfigError, match="non-decreasing"):
            log.log(4, event="d")
        lines = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [l["step"] for l in lines] == [0, 0, 5]

    def test_log_reload_remembers_last_step(self, tmp_path):
        RunLog(tmp_path / "log.jsonl").log(9, event="a")
        reopened = RunLog(tmp_path / "log.jsonl")
        with pytest.raises(ConfigError):
            reopened.log(8, event="b")

    def test_latest_checkpoint_step(self, tmp_path):
        paths = create_run(RunConfig.defaults(), "r1", tmp_path)
        assert latest_checkpoint_step(paths) is None
        (paths.checkpoints_dir / "step-0000003").mkdir()
        (paths.checkpoints_dir / "step-0000012").mkdir()
        (paths.checkpoints_dir / "scratch").mkdir()
        assert latest_checkpoint_step(paths) == 12


# ---------------------------------------------------------------------------
# Job registry.
# ---------------------------------------------------------------------------


class TestJobRegistry:
    def test_fifo_completion_order(self):
        registry = JobRegistry(workers=1, queue_size=16, global_seed=0)
        try:
            order = []
            lock = threading.Lock()

            def work(job_id, scenario, set_progress, seed):
                with lock:
                    order.append(scenario["n"])
                return {}

            ids = [registry.submit("t", {"n": n}, work) for n in range(4)]
            for job_id in ids:
                registry.wait(job_id, timeout=10)
            assert order == [0, 1, 2, 3]
        finally:
            registry.shutdown()

    def test_queue_bound_refuses_and_recovers(self):
        registry = JobRegistry(workers=1, queue_size=2, global_seed=0)
        try:
            gate = threading.Event()
            blocker = registry.submit("t", {}, lambda *a: (gate.wait(30), {})[1])
            time.sleep(0.05)  # worker picks it up; backlog empties
            queued = [registry.submit("t", {}, lambda *a: {}) for _ in range(2)]
            with pytest.raises(JobError, match="queue full"):
                registry.submit("t", {}, lambda *a: {})
            gate.set()
            for job_id in [blocker, *queued]:
                assert registry.wait(job_id, timeout=10).status == DONE
            # Backlog drained: submitting works again.
            assert registry.wait(registry.submit("t", {}, lambda *a: {}), timeout=10).status == DONE
        finally:
            registry.shutdown()

    def test_failure_is_recorded_and_pool_survives(self):
        registry = JobRegistry(workers=1, queue_size=16, global_seed=0)
        try:
            def boom(*args):
                raise ValueError("broken conditioning")

            failed = registry.wait(registry.submit("t", {}, boom), timeout=10)
            assert failed.status == FAILED
            assert "ValueError: broken conditioning" in failed.error
            ok = registry.wait(registry.submit("t", {}, lambda *a: {}), timeout=10)
            assert ok.status == DONE
        finally:
            registry.shutdown()

    def test_progress_clamped_monotone_and_finishes_at_one(self):
        registry = JobRegistry(workers=1, queue_size=16, global_seed=0)
        try:
            seen = []

            def work(job_id, scenario, set_progress, seed):
                for value in (0.5, 0.2, 7.0):
                    set_progress(value)
                    seen.append(registry.get(job_id).progress)
                return {}

            job = registry.wait(registry.submit("t", {}, work), timeout=10)
            assert seen == [0.5, 0.5, 1.0]
            assert job.progress == 1.0
            assert job.status == DONE
        finally:
            registry.shutdown()

    def test_job_seeds_deterministic_in_global_seed(self):
        def collect(global_seed):
            registry = JobRegistry(workers=1, queue_size=16, global_seed=global_seed)
            try:
                seeds = {}

                def work(job_id, scenario, set_progress, seed):
                    seeds[job_id] = seed
                    return {}

                for _ in range(3):
                    registry.wait(registry.submit("t", {}, work), timeout=10)
                return seeds
            finally:
                registry.shutdown()

        assert collect(0) == collect(0)
        assert collect(0) != collect(1)

    def test_unknown_job_id(self):
        registry = JobRegistry(workers=1, queue_size=4, global_seed=0)
        try:
            with pytest.raises(JobError):
                registry.get("job-00042")
        finally:
            registry.shutdown()

    def test_queued_status_visible_before_worker_starts(self):
        registry = JobRegistry(workers=1, queue_size=4, global_seed=0)
        try:
            gate = threading.Event()
            registry.submit("t", {}, lambda *a: (gate.wait(30), {})[1])
            time.sleep(0.05)
            waiting = registry.submit("t", {}, lambda *a: {})
            assert registry.get(waiting).status == QUEUED
            gate.set()
            assert registry.wait(waiting, timeout=10).status == DONE
        finally:
            registry.shutdown()


# ---------------------------------------------------------------------------
# Training data bridge.
# ---------------------------------------------------------------------------


class TestTrainingData:
    def test_split_filtering(self, manifest):
        train = TrainingData.from_manifest(manifest, split="train")
        test = TrainingData.from_manifest(manifest, split="test")
        assert len(train.records) + len(test.records) == len(manifest.records)
        assert all(r.cell.split == "train" for r in train.records)

    def test_batch_provider_requires_precompute(self, manifest, model):
        data = TrainingData.from_manifest(manifest, split="train")
        with pytest.raises(ValueError, match="precompute_latents"):
            data.batch_provider(4)

    def test_batches_deterministic_per_step(self, manifest, model):
        data = TrainingData.from_manifest(manifest, split="train")
        data.precompute_latents(model)
        provider = data.batch_provider(4)
        a = provider(3, np.random.default_rng(7))
        b = provider(3, np.random.default_rng(7))
        assert torch.equal(a["latents"], b["latents"])
        assert a["prompts"] == b["prompts"]
        c = provider(4, np.random.default_rng(8))
        assert not torch.equal(a["latents"], c["latents"]) or a["prompts"] != c["prompts"]

    def test_image_provider_unit_range(self, manifest):
        data = TrainingData.from_manifest(manifest, split="train")
        batch = data.image_provider(6)(0, np.random.default_rng(0))
        assert batch.shape[0] == 6
        assert float(batch.min()) >= 0.0 and float(batch.max()) <= 1.0


# ---------------------------------------------------------------------------
# CLI.
# ---------------------------------------------------------------------------


class TestCliExitCodes:
    def test_unknown_flag_is_usage_error(self, workdir, capsys):
        code = main(["synth", "--config", str(workdir["config_path"]), "--frobnicate"])
        captured = capsys.readouterr()
        assert code == 2
        assert "usage" in captured.err.lower()

    def test_schema_violation_is_exit_3_with_key_path(self, workdir, capsys):
        code = main([
            "synth", "--config", str(workdir["config_path"]),
            "--set", "training.vae_steps=lots",
        ])
        captured = capsys.readouterr()
        assert code == 3
        assert "training.vae_steps" in captured.err

    def test_missing_config_file_is_exit_3(self, tmp_path, capsys):
        assert main(["synth", "--config", str(tmp_path / "nope.json")]) == 3

    def test_resynth_without_overwrite_refuses(self, workdir, capsys):
        code = main(["synth", "--config", str(workdir["config_path"]),
                     "--run-id", "synth-again"])
        captured = capsys.readouterr()
        assert code == 3
        assert "corpus.out_dir" in captured.err


class TestCliPipeline:
    def test_run_dir_layout_and_log(self, workdir):
        paths = RunPaths(workdir["train_run"])
        assert paths.config_path.exists()
        assert paths.manifest_path.exists()
        assert workdir["checkpoint"].is_dir()
        lines = [json.loads(l) for l in paths.log_path.read_text().splitlines()]
        steps = [l["step"] for l in lines]
        assert steps == sorted(steps)
        assert all(isinstance(l["loss"], float) for l in lines)

    def test_config_digest_embedded_in_run(self, workdir):
        stored = json.loads(
            (workdir["train_run"] / "config.json").read_text(encoding="utf-8")
        )
        assert stored["config_digest"] == workdir["config"].digest()

    def test_sample_deterministic(self, workdir, manifest, tmp_path):
        prompt = tmp_path / "p.json"
        prompt.write_text(json.dumps({
            "city_name": "Arvendale", "bvd": 4.0,
            "land_use": {"residential": 0.6, "park": 0.2},
        }), encoding="utf-8")
        record = manifest.records[0]
        argv = [
            "sample", "--checkpoint", str(workdir["checkpoint"]),
            "--prompt-json", str(prompt),
            "--constraint", str(manifest.resolve(record.constraint_path)),
            "--dem", str(manifest.resolve(record.dem_path)),
            "--seed", "7",
        ]
        assert main([*argv, "--out", str(tmp_path / "a.png")]) == 0
        assert main([*argv, "--out", str(tmp_path / "b.png")]) == 0
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
        argv[-1] = "8"
        assert main([*argv, "--out", str(tmp_path / "c.png")]) == 0
        assert (tmp_path / "a.png").read_bytes() != (tmp_path / "c.png").read_bytes()

    def test_inpaint_empty_mask_copies_input(self, workdir, manifest, tmp_path):
        record = manifest.records[0]
        image_path = manifest.resolve(record.image_path)
        mask = np.zeros((32, 32), dtype=np.uint8)
        Image.fromarray(mask, mode="L").save(tmp_path / "mask.png")
        prompt = tmp_path / "p.json"
        prompt.write_text(json.dumps({"city_name": "Arvendale"}), encoding="utf-8")
        code = main([
            "inpaint", "--checkpoint", str(workdir["checkpoint"]),
            "--image", str(image_path), "--mask", str(tmp_path / "mask.png"),
            "--prompt-json", str(prompt), "--seed", "3",
            "--out", str(tmp_path / "out.png"),
        ])
        assert code == 0
        original = read_pixels(image_path.read_bytes())
        out = read_pixels((tmp_path / "out.png").read_bytes())
        assert (original == out).all()

    def test_inpaint_mask_size_mismatch_fails(self, workdir, manifest, tmp_path, capsys):
        record = manifest.records[0]
        Image.fromarray(np.zeros((16, 16), dtype=np.uint8), mode="L").save(tmp_path / "m.png")
        prompt = tmp_path / "p.json"
        prompt.write_text(json.dumps({"city_name": "Arvendale"}), encoding="utf-8")
        code = main([
            "inpaint", "--checkpoint", str(workdir["checkpoint"]),
            "--image", str(manifest.resolve(record.image_path)),
            "--mask", str(tmp_path / "m.png"),
            "--prompt-json", str(prompt), "--seed", "3",
            "--out", str(tmp_path / "out.png"),
        ])
        captured = capsys.readouterr()
        assert code == 1
        assert "does not match" in captured.err

    def test_eval_report_schema(self, workdir, manifest, tmp_path):
        real_dir = tmp_path / "real"
        gen_dir = tmp_path / "gen"
        real_dir.mkdir()
        gen_dir.mkdir()
        rng = np.random.default_rng(0)
        names = [r.cell.cell_id for r in manifest.records[:4]] + \
            [r.cell.cell_id for r in manifest.records[50:54]]
        for name in names:
            src = manifest.resolve(
                next(r for r in manifest.records if r.cell.cell_id == name).image_path
            )
            shutil.copy(src, real_dir / f"{name}.png")
            base = read_pixels(src.read_bytes()).astype(np.int16)
            for k in range(2):
                noisy = np.clip(base + rng.integers(-20, 21, base.shape), 0, 255)
                Image.fromarray(noisy.astype(np.uint8)).save(gen_dir / f"{name}__{k}.png")
        report_path = tmp_path / "report.json"
        code = main([
            "eval", "--real", str(real_dir), "--gen", str(gen_dir),
            "--report", str(report_path), "--extractor-steps", "20",
        ])
        assert code == 0
        report = EvalReport.load(report_path)
        assert report.psnr > 20.0
        assert 0.0 <= report.ssim <= 1.0
        assert report.sample_counts["diversity_ssim"]["conditions"] == 8
        assert report.sample_counts["fid"] == {"generated": 16, "real": 8}

    def test_analyze_outputs(self, workdir):
        code = main([
            "analyze", "--config", str(workdir["config_path"]),
            "--checkpoint", str(workdir["checkpoint"]),
            "--max-points", "40", "--run-id", "analyze-t",
        ])
        assert code == 0
        run = workdir["root"] / "runs" / "analyze-t"
        embeddings = [
            json.loads(l)
            for l in (run / "reports" / "embeddings.jsonl").read_text().splitlines()
        ]
        assert len(embeddings) == 40
        assert all(e["planar"] is not None and len(e["planar"]) == 2 for e in embeddings)
        atlas = (run / "images" / "atlas.png").read_bytes()
        assert atlas[:8] == PNG_MAGIC
        separability = json.loads((run / "reports" / "separability.json").read_text())
        assert separability["schema_version"] == 1
        assert 0.0 <= separability["planar"]["knn_accuracy"] <= 1.0
        assert separability["config_digest"] == workdir["config"].digest()

    def test_oracle_artifacts(self, workdir):
        code = main([
            "oracle", "--config", str(workdir["config_path"]),
            "--epochs", "1", "--run-id", "oracle-t",
        ])
        assert code == 0
        run = workdir["root"] / "runs" / "oracle-t"
        from urbandiff.analysis import load_oracle

        oracle = load_oracle(run / "checkpoints" / "oracle.bin")
        assert oracle.metrics == ("bcr", "bvd")
        report = json.loads((run / "reports" / "oracle.json").read_text())
        assert set(report["fit"]) == {"bcr", "bvd"}
        assert report["cells"] == 100

    def test_transfer_writes_images_and_metadata(self, workdir, tmp_path):
        out = tmp_path / "transfer"
        code = main([
            "transfer", "--checkpoint", str(workdir["checkpoint"]),
            "--manifest", str(workdir["corpus_dir"] / "manifest.jsonl"),
            "--source-cell", "c0_0003", "--target-city", "Brickmoor",
            "--seeds", "1,2", "--out", str(out),
        ])
        assert code == 0
        meta = json.loads((out / "transfer.json").read_text())
        assert meta["source_city"] == "Arvendale"
        assert meta["target_city"] == "Brickmoor"
        assert len(meta["images"]) == 2
        for name in meta["images"]:
            assert (out / name).read_bytes()[:8] == PNG_MAGIC

    def test_transfer_unknown_cell(self, workdir, tmp_path, capsys):
        code = main([
            "transfer", "--checkpoint", str(workdir["checkpoint"]),
            "--manifest", str(workdir["corpus_dir"] / "manifest.jsonl"),
            "--source-cell", "zzz", "--target-city", "Brickmoor",
            "--seeds", "1", "--out", str(tmp_path / "t"),
        ])
        assert code == 1
        assert "unknown cell" in capsys.readouterr().err

    def test_augment_exp_report(self, workdir):
        code = main([
            "augment-exp", "--config", str(workdir["config_path"]),
            "--checkpoint", str(workdir["checkpoint"]), "--run-id", "augexp-t",
        ])
        assert code == 0
        report = json.loads(
            (workdir["root"] / "runs" / "augexp-t" / "reports" / "augmentation.json").read_text()
        )
        assert report["n_synthetic"] >= 1
        assert set(report["baseline"]) == {"r2", "r2_log", "mae", "rmse"}
        assert report["test_digest"]

    def test_resume_equivalence(self, workdir):
        """Save/kill/resume at step 3 matches the uninterrupted run at 12."""
        run_a = workdir["train_run"]
        paths_b = create_run(workdir["config"], "resume-t", workdir["root"] / "runs")
        shutil.copytree(
            run_a / "checkpoints" / "step-0000003",
            paths_b.checkpoints_dir / "step-0000003",
        )
        code = main([
            "train", "--config", str(workdir["config_path"]), "--run-id", "resume-t",
        ])
        assert code == 0
        a = parameter_digests(_load_model(run_a / "checkpoints" / "step-0000012"))
        b = parameter_digests(_load_model(paths_b.checkpoints_dir / "step-0000012"))
        assert a == b

    def test_resume_refuses_different_config(self, workdir, capsys):
        code = main([
            "train", "--config", str(workdir["config_path"]),
            "--set", "global_seed=999",
            "--run-id", workdir["train_run"].name,
        ])
        assert code == 3
        assert "does not match" in capsys.readouterr().err

    def test_resume_refuses_corrupt_checkpoint(self, workdir):
        paths = create_run(workdir["config"], "corrupt-t", workdir["root"] / "runs")
        shutil.copytree(
            workdir["train_run"] / "checkpoints" / "step-0000003",
            paths.checkpoints_dir / "step-0000003",
        )
        target = paths.checkpoints_dir / "step-0000003" / "tensors.bin"
        blob = bytearray(target.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        target.write_bytes(bytes(blob))
        code = main([
            "train", "--config", str(workdir["config_path"]), "--run-id", "corrupt-t",
        ])
        assert code == 1

    def test_ug_data_dir_overrides_output_root(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("UG_DATA_DIR", str(tmp_path / "elsewhere"))
        code = main([
            "synth", "--config", str(workdir["config_path"]), "--run-id", "env-t",
        ])
        assert code == 0
        assert (tmp_path / "elsewhere" / "env-t" / "config.json").exists()
        assert (tmp_path / "elsewhere" / "corpus" / "manifest.jsonl").exists()
        assert not (workdir["root"] / "runs" / "env-t").exists()


# ---------------------------------------------------------------------------
# HTTP service.
# ---------------------------------------------------------------------------


def scenario_payload(**overrides):
    payload = {
        "prompt": {"city_name": "Arvendale", "bcr": 0.3, "bvd": 4.0,
                   "land_use": {"residential": 0.6}},
        "constraint_id": "c0_0000.constraint",
        "dem_id": "c0_0000.dem",
        "seed": 11,
    }
    payload.update(overrides)
    return payload


class TestServiceReads:
    def test_health(self, service_client):
        body = service_client.get("/health").json()
        assert body == {"schema_version": 1, "status": "ok"}

    def test_cities_and_cells(self, service_client):
        assert service_client.get("/cities").json()["cities"] == ["c0", "c1"]
        cells = service_client.get("/cells", params={"city": "c0"}).json()["cells"]
        assert len(cells) == 50
        assert cells[0]["cell_id"] == "c0_0000"
        assert cells[0]["image_id"] == "c0_0000.image"
        assert "bcr" in cells[0]["metrics"]

    def test_cells_unknown_city(self, service_client):
        assert service_client.get("/cells", params={"city": "zz"}).status_code == 404

    def test_raster_media_types(self, service_client):
        png = service_client.get("/rasters/c0_0000.constraint")
        assert png.status_code == 200
        assert png.headers["content-type"].startswith("image/png")
        assert png.content[:8] == PNG_MAGIC
        f32 = service_client.get("/rasters/c0_0000.dem")
        assert f32.status_code == 200
        assert f32.headers["content-type"] == "application/octet-stream"

    def test_raster_unknown(self, service_client):
        assert service_client.get("/rasters/absent").status_code == 404

    def test_corpus_image_retrievable(self, service_client):
        response = service_client.get("/images/c0_0000.image")
        assert response.status_code == 200
        assert response.content[:8] == PNG_MAGIC
        assert service_client.get("/images/absent").status_code == 404

    def test_latents_filterable(self, service_client):
        assert len(service_client.get("/latents").json()["points"]) == 3
        c1 = service_client.get("/latents", params={"city": "c1"}).json()["points"]
        assert {p["kind"] for p in c1} == {"real", "generated"}
        real = service_client.get(
            "/latents", params={"city": "c1", "kind": "real"}
        ).json()["points"]
        assert [p["id"] for p in real] == ["c1_0000"]


class TestServiceScenarios:
    def test_land_use_sum_rejected_with_diagnostics(self, service_client):
        payload = scenario_payload()
        payload["prompt"]["land_use"] = {"residential": 0.7, "park": 0.5}
        response = service_client.post("/scenarios", json=payload)
        assert response.status_code == 422
        assert "land-use ratios sum to 1.2" in json.dumps(response.json())

    def test_invalid_metric_rejected(self, service_client):
        payload = scenario_payload()
        payload["prompt"]["bcr"] = 2.0
        assert service_client.post("/scenarios", json=payload).status_code == 422

    def test_unknown_raster_reference(self, service_client):
        assert service_client.post(
            "/scenarios", json=scenario_payload(constraint_id="absent")
        ).status_code == 404

    def test_must_pick_exactly_one_source(self, service_client):
        payload = scenario_payload()
        payload["constraint_png_base64"] = png_b64(np.zeros((32, 32), dtype=np.uint8))
        assert service_client.post("/scenarios", json=payload).status_code == 422

    def test_scenario_id_deterministic(self, service_client):
        first = service_client.post("/scenarios", json=scenario_payload()).json()
        second = service_client.post("/scenarios", json=scenario_payload()).json()
        assert first["scenario_id"] == second["scenario_id"]
        different = service_client.post(
            "/scenarios", json=scenario_payload(seed=12)
        ).json()
        assert different["scenario_id"] != first["scenario_id"]

    def test_generate_unknown_scenario(self, service_client):
        assert service_client.post("/scenarios/scn-zzzz/generate").status_code == 404

    def test_generate_end_to_end_and_determinism(self, service_client):
        sid = service_client.post("/scenarios", json=scenario_payload()).json()["scenario_id"]
        first = wait_done(
            service_client,
            service_client.post(f"/scenarios/{sid}/generate").json()["job_id"],
        )
        assert first["status"] == DONE
        assert first["progress"] == 1.0
        assert len(first["result_image_ids"]) == 1
        image = service_client.get(f"/images/{first['result_image_ids'][0]}")
        assert image.content[:8] == PNG_MAGIC
        again = service_client.get(f"/images/{first['result_image_ids'][0]}")
        assert again.content == image.content

        second = wait_done(
            service_client,
            service_client.post(f"/scenarios/{sid}/generate").json()["job_id"],
        )
        other = service_client.get(f"/images/{second['result_image_ids'][0]}")
        assert hashlib.sha256(other.content).hexdigest() == \
            hashlib.sha256(image.content).hexdigest()

    def test_inline_rasters_accepted(self, service_client, manifest):
        dem_bytes = manifest.resolve(manifest.records[0].dem_path).read_bytes()
        constraint_bytes = manifest.resolve(manifest.records[0].constraint_path).read_bytes()
        payload = scenario_payload()
        payload.pop("constraint_id")
        payload.pop("dem_id")
        payload["constraint_png_base64"] = base64.b64encode(constraint_bytes).decode()
        payload["dem_f32_base64"] = base64.b64encode(dem_bytes).decode()
        response = service_client.post("/scenarios", json=payload)
        assert response.status_code == 200
        sid = response.json()["scenario_id"]
        job = wait_done(
            service_client, service_client.post(f"/scenarios/{sid}/generate").json()["job_id"]
        )
        assert job["status"] == DONE


class TestServiceInpaint:
    def test_unknown_image(self, service_client):
        response = service_client.post("/inpaint", json={
            "image_id": "absent", "mask_png_base64": png_b64(np.zeros((32, 32), np.uint8)),
            "prompt": {"city_name": "Arvendale"}, "seed": 1,
        })
        assert response.status_code == 404

    def test_mask_size_mismatch_409(self, service_client):
        response = service_client.post("/inpaint", json={
            "image_id": "c0_0000.image",
            "mask_png_base64": png_b64(np.zeros((16, 16), np.uint8)),
            "prompt": {"city_name": "Arvendale"}, "seed": 1,
        })
        assert response.status_code == 409
        assert "does not match" in response.json()["detail"]

    def test_invalid_base64_422(self, service_client):
        response = service_client.post("/inpaint", json={
            "image_id": "c0_0000.image", "mask_png_base64": "!!not-base64!!",
            "prompt": {"city_name": "Arvendale"}, "seed": 1,
        })
        assert response.status_code == 422

    def test_inpaint_preserves_unmasked_pixels(self, service_client, manifest):
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[:, 16:] = 255
        mask_b64 = png_b64(mask)
        response = service_client.post("/inpaint", json={
            "image_id": "c0_0000.image", "mask_png_base64": mask_b64,
            "prompt": {"city_name": "Arvendale", "bvd": 3.0}, "seed": 5,
        })
        job = wait_done(service_client, response.json()["job_id"])
        assert job["status"] == DONE
        expected_digest = hashlib.sha256(base64.b64decode(mask_b64)).hexdigest()
        assert job["mask_digest"] == expected_digest
        out = read_pixels(
            service_client.get(f"/images/{job['result_image_ids'][0]}").content
        )
        original = read_pixels(
            manifest.resolve(manifest.records[0].image_path).read_bytes()
        )
        assert (out[:, :16] == original[:, :16]).all()
        assert (out[:, 16:] != original[:, 16:]).any()


class TestServiceTransferAndCompliance:
    def test_transfer_unknown_cell(self, service_client):
        response = service_client.post("/transfer", json={
            "source_cell": "zzz", "target_city": "Brickmoor", "seeds": [1],
        })
        assert response.status_code == 404

    def test_transfer_unknown_city_rejected(self, service_client):
        response = service_client.post("/transfer", json={
            "source_cell": "c0_0001", "target_city": "Atlantis", "seeds": [1],
        })
        assert response.status_code == 422

    def test_transfer_job_produces_one_image_per_seed(self, service_client):
        response = service_client.post("/transfer", json={
            "source_cell": "c0_0001", "target_city": "Brickmoor", "seeds": [1, 2],
        })
        job = wait_done(service_client, response.json()["job_id"])
        assert job["status"] == DONE
        assert len(job["result_image_ids"]) == 2
        assert job["scenario"]["source_city"] == "Arvendale"

    def test_compliance_fragment(self, service_client):
        sid = service_client.post(
            "/scenarios", json=scenario_payload(seed=21)
        ).json()["scenario_id"]
        job = wait_done(
            service_client, service_client.post(f"/scenarios/{sid}/generate").json()["job_id"]
        )
        response = service_client.get("/compliance", params={"job_id": job["job_id"]})
        assert response.status_code == 200
        fragment = response.json()
        assert fragment["schema_version"] == 1
        assert set(fragment["per_metric"]) == {"bcr", "bvd"}
        bvd = fragment["per_metric"]["bvd"]
        assert bvd["prompted"] == 4.0
        assert len(bvd["estimates"]) == 1
        assert bvd["mae"] == pytest.approx(abs(bvd["estimates"][0] - 4.0))
        cached = service_client.get("/compliance", params={"job_id": job["job_id"]})
        assert cached.json() == fragment

    def test_compliance_unknown_job(self, service_client):
        assert service_client.get(
            "/compliance", params={"job_id": "job-99999"}
        ).status_code == 404


class TestServiceQueueBound:
    def test_queue_full_503(self, model, manifest):
        state = build_state(model, manifest=manifest, workers=1, queue_size=1, global_seed=0)
        client = TestClient(create_app(state))
        try:
            gate = threading.Event()
            state.registry.submit("block", {}, lambda *a: (gate.wait(30), {})[1])
            time.sleep(0.05)
            sid = client.post("/scenarios", json=scenario_payload()).json()["scenario_id"]
            first = client.post(f"/scenarios/{sid}/generate")
            assert first.status_code == 200
            second = client.post(f"/scenarios/{sid}/generate")
            assert second.status_code == 503
            assert "queue full" in second.json()["detail"]
            gate.set()
            assert wait_done(client, first.json()["job_id"])["status"] == DONE
        finally:
            gate.set()
            state.registry.shutdown()
