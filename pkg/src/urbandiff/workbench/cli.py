"""Command-line entry point.

Every subcommand is deterministic given (config, seed, input digests): model
init, batch order, and sampling all draw from streams derived off the global
seed, and outputs land under the run directory named by the config digest.

Exit codes: 0 success, 1 domain failure, 2 bad flags (argparse usage), 3
config schema violation (message names the offending key path).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..analysis import (
    AugmentationConfig,
    augmentation_experiment,
    city_separability,
    extract_latents,
    load_oracle,
    oracle_predict,
    plot_embedding_scatter,
    save_embeddings,
    save_oracle,
    synthetic_emission,
    train_density_oracle,
    transfer_prompt,
)
from ..analysis.latents import STAGE_ENCODE
from ..analysis.pca import pca_project
from ..analysis.tsne import tsne_embed
from ..conditioning.towers import control_tensors_from_rasters
from ..diffusion.checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from ..diffusion.model import (
    STAGE_CONTROL_ONLY,
    STAGE_DECODER_UNLOCKED,
    UrbanDiffusionModel,
)
from ..diffusion.sampling import inpaint as inpaint_op
from ..diffusion.sampling import sample as sample_op
from ..diffusion.training import calibrate_latent_scale, make_optimizer, train_loop, train_vae
from ..errors import ConfigError, UrbanDiffError
from ..geogrid.density import DensityMetrics, LandUseMix
from ..geogrid.manifest import CorpusManifest, load_manifest
from ..geogrid.prompts import PromptSpec, render_prompt
from ..geogrid.rasters import load_raster
from ..quality.features import load_extractor, train_extractor
from ..quality.report import ConditionSet, build_report
from ..seeding import derive_seed
from ..synthcity.corpus import build_corpus, city_name_for
from .config import RunConfig, SCHEMA_VERSION
from .data import TrainingData
from .runs import (
    RunLog,
    RunPaths,
    append_artifact,
    create_run,
    latest_checkpoint_step,
    load_latest_checkpoint,
    open_run,
)


def _output_root(config: RunConfig) -> Path:
    return Path(os.environ.get("UG_DATA_DIR") or config.output_dir)


def _corpus_dir(config: RunConfig) -> Path:
    return _output_root(config) / config.section("corpus")["out_dir"]


def _load_corpus(config: RunConfig) -> CorpusManifest:
    manifest_path = _corpus_dir(config) / "manifest.jsonl"
    if not manifest_path.exists():
        raise ConfigError(f"no corpus manifest at {manifest_path}; run synth first", "corpus.out_dir")
    return load_manifest(manifest_path)


def _seeded_model(config: RunConfig) -> UrbanDiffusionModel:
    torch.manual_seed(derive_seed(config.global_seed, "model-init"))
    return UrbanDiffusionModel(config.model_config())


def _load_model(path: str | Path) -> UrbanDiffusionModel:
    """Accept either a checkpoint directory or a run directory."""
    path = Path(path)
    if (path / "checkpoints").is_dir():
        step = latest_checkpoint_step(RunPaths(path))
        if step is None:
            raise ConfigError(f"run {path} has no checkpoints")
        path = RunPaths(path).checkpoint_dir(step)
    model, _manifest, _optim = load_checkpoint(path)
    model.eval()
    return model


def _prompt_spec(fields: dict) -> PromptSpec:
    metrics = DensityMetrics(
        bcr=fields.get("bcr"),
        bvd=fields.get("bvd"),
        rpd=fields.get("rpd"),
        rvc=fields.get("rvc"),
        road_density=fields.get("road_density"),
    )
    mix = LandUseMix(ratios=dict(fields["land_use"])) if fields.get("land_use") else None
    return PromptSpec(
        city_name=fields["city_name"],
        metrics=metrics,
        land_use=mix,
        emission_tc=fields.get("emission_tc"),
        free_text=fields.get("free_text", ""),
    )


def _save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(Path(path), format="PNG")


def _load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _record_industrial_ratio(record) -> float:
    if record.land_use is None:
        return 0.0
    return float(record.land_use.ratios.get("industrial", 0.0))


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    config = RunConfig.load(args.config, args.set)
    root = _output_root(config)
    run_id = args.run_id or f"synth-{config.digest()[:8]}"
    paths = create_run(config, run_id, root)
    corpus_dir = _corpus_dir(config)
    manifest = build_corpus(config.corpus_config(), corpus_dir, overwrite=args.overwrite)
    append_artifact(
        paths, "corpus", os.path.relpath(corpus_dir / "manifest.jsonl", paths.root),
        cells=len(manifest.records), corpus_hash=manifest.corpus_hash,
    )
    RunLog(paths.log_path).log(0, event="synth", cells=len(manifest.records))
    print(f"corpus: {len(manifest.records)} cells in {corpus_dir}")
    return 0


def _cmd_train_vae(args) -> int:
    config = RunConfig.load(args.config, args.set)
    manifest = _load_corpus(config)
    run_id = args.run_id or f"vae-{config.digest()[:8]}"
    paths = create_run(config, run_id, _output_root(config))
    log = RunLog(paths.log_path)
    training = config.section("training")
    data = TrainingData.from_manifest(manifest, split="train")
    model = _seeded_model(config)

    log_every = int(training["log_every"])

    def on_step(step: int, loss: float) -> None:
        if step % log_every == 0 or step == int(training["vae_steps"]) - 1:
            log.log(step, event="vae", loss=float(loss))

    train_vae(
        model.vae, data.image_provider(int(training["vae_batch"])),
        int(training["vae_steps"]), derive_seed(config.global_seed, "vae"),
        lr=float(training["vae_lr"]), on_step=on_step,
    )
    scale = calibrate_latent_scale(model, data.unit_images())
    ckpt = save_checkpoint(
        paths.checkpoint_dir(int(training["vae_steps"])), model,
        int(training["vae_steps"]), corpus_hash=manifest.corpus_hash,
    )
    append_artifact(paths, "checkpoint", os.path.relpath(ckpt, paths.root), latent_scale=scale)
    print(f"vae checkpoint: {ckpt} (latent_scale {scale:.4f})")
    return 0


def _train_segments(model, data, log, paths, config, manifest, start: int) -> None:
    """Drive both stages from global step `start` to S1+S2, checkpointing."""
    training = config.section("training")
    s1, s2 = int(training["stage1_steps"]), int(training["stage2_steps"])
    every = int(training["checkpoint_every"])
    log_every = int(training["log_every"])
    root_seed = derive_seed(config.global_seed, "train")
    resumed_optim = getattr(model, "_resume_optim", None)

    def on_step(step: int, loss: float) -> None:
        if step % log_every == 0:
            log.log(step, event="train", loss=float(loss), stage=model.config.stage)

    for stage, lo, hi in (
        (STAGE_CONTROL_ONLY, 0, s1),
        (STAGE_DECODER_UNLOCKED, s1, s1 + s2),
    ):
        if start >= hi:
            continue
        model.config = replace(model.config, stage=stage)
        optimizer = make_optimizer(model, stage)
        if resumed_optim is not None and lo < start < hi:
            restore_optimizer(model, optimizer, resumed_optim)
        resumed_optim = None
        provider = data.batch_provider(int(model.config.batch_size))
        g = max(start, lo)
        while g < hi:
            seg = min(every - (g % every) if every else hi - g, hi - g)
            train_loop(model, optimizer, provider, seg, root_seed, start_step=g, on_step=on_step)
            g += seg
            ckpt = save_checkpoint(
                paths.checkpoint_dir(g), model, g,
                corpus_hash=manifest.corpus_hash, optimizer=optimizer,
            )
            append_artifact(paths, "checkpoint", os.path.relpath(ckpt, paths.root), stage=stage)


def _cmd_train(args) -> int:
    config = RunConfig.load(args.config, args.set)
    manifest = _load_corpus(config)
    root = _output_root(config)
    run_id = args.run_id or f"train-{config.digest()[:8]}"
    run_root = root / run_id

    if run_root.exists():
        paths, disk_config = open_run(run_root)
        if disk_config.digest() != config.digest():
            raise ConfigError("config does not match the run being resumed")
        resumed = load_latest_checkpoint(paths)
        if resumed is None:
            raise ConfigError(f"run {run_root} has no checkpoints to resume from")
        model, _ck_manifest, optim_tensors, start = resumed
        model._resume_optim = optim_tensors
        print(f"resuming {run_id} from step {start}")
    else:
        if not args.init:
            raise ConfigError("a fresh training run needs --init CHECKPOINT (from train-vae)")
        paths = create_run(config, run_id, root)
        model = _load_model(args.init)
        start = 0

    log = RunLog(paths.log_path)
    data = TrainingData.from_manifest(manifest, split="train")
    data.precompute_latents(model)
    _train_segments(model, data, log, paths, config, manifest, start)
    final = int(config.section("training")["stage1_steps"]) + int(
        config.section("training")["stage2_steps"]
    )
    print(f"trained to step {final}: {paths.checkpoint_dir(final)}")
    return 0


def _cmd_sample(args) -> int:
    model = _load_model(args.checkpoint)
    fields = json.loads(Path(args.prompt_json).read_text(encoding="utf-8"))
    spec = _prompt_spec(fields)
    dem = load_raster(args.dem)
    constraint = load_raster(args.constraint)
    dem_t, con_t = control_tensors_from_rasters(dem, constraint)
    bundle = model.make_bundle([render_prompt(spec)], dem_t, con_t, guidance_scale=args.guidance)
    images = sample_op(model, bundle, args.seed, steps=args.steps)
    _save_png(images[0], args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_inpaint(args) -> int:
    model = _load_model(args.checkpoint)
    image = _load_png(args.image)
    with Image.open(args.mask) as m:
        mask = (np.asarray(m.convert("L")) > 127).astype(np.uint8)
    fields = json.loads(Path(args.prompt_json).read_text(encoding="utf-8"))
    spec = _prompt_spec(fields)
    px = image.shape[0]
    dem_t = torch.zeros(1, 1, px, px)
    con_t = torch.zeros(1, 1, px, px)
    bundle = model.make_bundle([render_prompt(spec)], dem_t, con_t)
    try:
        out = inpaint_op(model, image, mask, bundle, args.seed, steps=args.steps)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _save_png(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    real_dir, gen_dir = Path(args.real), Path(args.gen)
    real_files = sorted(real_dir.glob("*.png"))
    if not real_files:
        print(f"error: no PNGs under {real_dir}", file=sys.stderr)
        return 1
    real_by_name = {p.stem: _load_png(p) for p in real_files}
    # Corpus ids are c{i}_{n}; the extractor wants integer class labels, so
    # enumerate the city prefixes in sorted order.
    cities = sorted({name.split("_")[0] for name in real_by_name})
    city_of = lambda name: cities.index(name.split("_")[0])  # noqa: E731

    groups: dict[str, list[np.ndarray]] = {}
    for p in sorted(gen_dir.glob("*.png")):
        stem = p.stem.split("__")[0]
        groups.setdefault(stem, []).append(_load_png(p))
    conditions = [
        ConditionSet(
            condition_id=stem, city_id=city_of(stem),
            gt_image=real_by_name[stem], generations=np.stack(imgs),
        )
        for stem, imgs in sorted(groups.items())
        if stem in real_by_name
    ]
    if not conditions:
        print("error: no generated image matches a real one by name", file=sys.stderr)
        return 1

    real_images = np.stack(list(real_by_name.values()))
    real_cities = np.array([city_of(n) for n in real_by_name], dtype=np.int64)
    if args.extractor:
        extractor = load_extractor(args.extractor)
    else:
        extractor = train_extractor(
            real_images, real_cities, steps=args.extractor_steps, seed=args.seed
        )
    report = build_report(real_images, real_cities, conditions, extractor)
    report.save(args.report)
    print(f"wrote {args.report} ({len(conditions)} conditions)")
    return 0


def _cmd_analyze(args) -> int:
    config = RunConfig.load(args.config, args.set)
    manifest = _load_corpus(config)
    model = _load_model(args.checkpoint)
    run_id = args.run_id or f"analyze-{config.digest()[:8]}"
    paths = create_run(config, run_id, _output_root(config))

    records = manifest.records
    if args.max_points and len(records) > args.max_points:
        rng = np.random.default_rng(derive_seed(config.global_seed, "analyze-subsample"))
        idx = np.sort(rng.choice(len(records), size=args.max_points, replace=False))
        records = [records[i] for i in idx]
    images = np.stack([_load_png(manifest.resolve(r.image_path)) for r in records])
    embeddings = extract_latents(
        model, STAGE_ENCODE, images=images,
        city_ids=[r.cell.city_id for r in records],
        condition_ids=[r.cell.cell_id for r in records],
        kind="real",
    )

    flat = np.stack([e.flat for e in embeddings])
    k = min(50, flat.shape[1], max(2, flat.shape[0] - 1))
    reduced, projection = pca_project(flat, k)
    result = tsne_embed(reduced, seed=config.global_seed)
    for e, pca_row, planar_row in zip(embeddings, reduced, result.points):
        e.pca = pca_row
        e.planar = planar_row

    save_embeddings(embeddings, paths.reports_dir / "embeddings.jsonl")
    plot_embedding_scatter(embeddings, paths.images_dir / "atlas.png")
    labels = [e.city_id for e in embeddings]
    separability = {
        "pca": city_separability(reduced, labels),
        "planar": city_separability(np.stack([e.planar for e in embeddings]), labels),
        "n_points": len(embeddings),
        "explained_variance": [float(v) for v in projection.explained_variance_ratio],
        "config_digest": config.digest(),
    }
    _write_json(paths.reports_dir / "separability.json", separability)
    for rel in ("reports/embeddings.jsonl", "reports/separability.json", "images/atlas.png"):
        append_artifact(paths, "analysis", rel)
    print(
        f"atlas over {len(embeddings)} cells; planar 10-NN accuracy "
        f"{separability['planar']['knn_accuracy']:.3f}"
    )
    return 0


def _cmd_transfer(args) -> int:
    model = _load_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    record = next((r for r in manifest.records if r.cell.cell_id == args.source_cell), None)
    if record is None:
        print(f"error: unknown cell id {args.source_cell!r}", file=sys.stderr)
        return 1
    seeds = [int(s) for s in args.seeds.split(",") if s]
    dem = load_raster(manifest.resolve(record.dem_path))
    constraint = load_raster(manifest.resolve(record.constraint_path))
    dem_t, con_t = control_tensors_from_rasters(dem, constraint)
    source_city = city_name_for(int(record.cell.city_id.lstrip("c")))
    prompt = transfer_prompt(args.target_city, source_city)
    bundle = model.make_bundle([prompt], dem_t, con_t)
    out_dir = Path(args.out)
    written = []
    for seed in seeds:
        image = sample_op(model, bundle, seed, steps=args.steps)[0]
        path = out_dir / f"{args.source_cell}__to__{args.target_city}__seed{seed}.png"
        _save_png(image, path)
        written.append(path.name)
    _write_json(out_dir / "transfer.json", {
        "source_cell": args.source_cell,
        "source_city": source_city,
        "target_city": args.target_city,
        "prompt": prompt,
        "seeds": seeds,
        "images": written,
    })
    print(f"wrote {len(written)} transfer images to {out_dir}")
    return 0


def _cmd_oracle(args) -> int:
    config = RunConfig.load(args.config, args.set)
    manifest = _load_corpus(config)
    run_id = args.run_id or f"oracle-{config.digest()[:8]}"
    paths = create_run(config, run_id, _output_root(config))

    images = np.stack([_load_png(manifest.resolve(r.image_path)) for r in manifest.records])
    targets = {
        "bcr": np.array([r.metrics.bcr for r in manifest.records], dtype=np.float64),
        "bvd": np.array([r.metrics.bvd for r in manifest.records], dtype=np.float64),
    }
    oracle = train_density_oracle(
        images, targets, kinds=["real"] * len(manifest.records),
        epochs=args.epochs, seed=config.global_seed,
    )
    oracle_path = paths.checkpoints_dir / "oracle.bin"
    oracle_path.parent.mkdir(parents=True, exist_ok=True)
    save_oracle(oracle, oracle_path)

    predictions = oracle_predict(oracle, images)
    fit = {}
    for metric, true in targets.items():
        pred = predictions[metric]
        ss_res = float(np.sum((true - pred) ** 2))
        ss_tot = float(np.sum((true - true.mean()) ** 2))
        fit[metric] = {
            "r2_train": 1.0 - ss_res / ss_tot if ss_tot else float("nan"),
            "mae_train": float(np.mean(np.abs(true - pred))),
        }
    _write_json(paths.reports_dir / "oracle.json", {
        "fit": fit, "epochs": args.epochs, "cells": len(manifest.records),
        "config_digest": config.digest(),
    })
    append_artifact(paths, "oracle", os.path.relpath(oracle_path, paths.root))
    print(f"oracle: {oracle_path} (train BVD R2 {fit['bvd']['r2_train']:.3f})")
    return 0


def _cmd_augment_exp(args) -> int:
    config = RunConfig.load(args.config, args.set)
    manifest = _load_corpus(config)
    model = _load_model(args.checkpoint)
    run_id = args.run_id or f"augexp-{config.digest()[:8]}"
    paths = create_run(config, run_id, _output_root(config))
    exp = config.section("experiment")["augment"]
    held_out = float(exp["held_out_bvd"])

    records = manifest.records
    real_images = np.stack([_load_png(manifest.resolve(r.image_path)) for r in records])
    real_ids = [r.cell.cell_id for r in records]
    real_targets = np.array([
        synthetic_emission(
            r.metrics.bvd, _record_industrial_ratio(r), r.metrics.road_density,
            np.random.default_rng(derive_seed(config.global_seed, "emission", r.cell.cell_id)),
        )
        for r in records
    ])
    exclude = frozenset(r.cell.cell_id for r in records if r.metrics.bvd > held_out)

    bvd_cap = max(r.metrics.bvd for r in records)
    levels = [l for l in config.section("experiment")["bvd_levels"] if l > held_out]
    if not levels:
        levels = [held_out + 0.5 * (bvd_cap - held_out or 1.0)]
    per_level = int(exp["synthetic_per_level"])

    # Condition synthetic cells on train-side low-density rasters so the
    # contamination guard stays meaningful; replay the experiment's split to
    # know which cells are safe.
    split_rng = np.random.default_rng(derive_seed(config.global_seed, "aug-split"))
    order = split_rng.permutation(len(records))
    n_test = max(1, round(len(records) * float(exp["test_fraction"])))
    train_side = [records[i] for i in np.sort(order[n_test:])]
    sources = [r for r in train_side if r.metrics.bvd <= held_out]
    if not sources:
        raise ConfigError("no low-density training cells to condition synthetics on")

    pick = np.random.default_rng(derive_seed(config.global_seed, "aug-sources"))
    synth_images, synth_targets, synth_ids = [], [], []
    for li, level in enumerate(levels):
        for j in range(per_level):
            src = sources[int(pick.integers(len(sources)))]
            dem = load_raster(manifest.resolve(src.dem_path))
            constraint = load_raster(manifest.resolve(src.constraint_path))
            dem_t, con_t = control_tensors_from_rasters(dem, constraint)
            spec = PromptSpec(
                city_name=city_name_for(int(src.cell.city_id.lstrip("c"))),
                metrics=DensityMetrics(bvd=float(level), road_density=src.metrics.road_density),
                land_use=src.land_use,
            )
            bundle = model.make_bundle([render_prompt(spec)], dem_t, con_t)
            seed = derive_seed(config.global_seed, "aug-synth", li, j)
            synth_images.append(sample_op(model, bundle, seed, steps=args.steps)[0])
            rng = np.random.default_rng(derive_seed(config.global_seed, "aug-target", li, j))
            synth_targets.append(synthetic_emission(
                float(level), _record_industrial_ratio(src), src.metrics.road_density, rng
            ))
            synth_ids.append(src.cell.cell_id)

    aug_config = AugmentationConfig(
        seed=config.global_seed,
        test_fraction=float(exp["test_fraction"]),
        epochs=int(exp["epochs"]),
    )
    report = augmentation_experiment(
        real_images, real_targets, real_ids,
        np.stack(synth_images), np.array(synth_targets), synth_ids,
        aug_config, exclude_train_ids=exclude,
    )
    report.save(paths.reports_dir / "augmentation.json")
    append_artifact(paths, "report", "reports/augmentation.json")
    print(
        f"augmentation: baseline MAE {report.baseline['mae']:.3f} -> "
        f"augmented MAE {report.augmented['mae']:.3f} ({report.n_synthetic} synthetic)"
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import build_state, create_app

    config = RunConfig.load(args.config, args.set)
    service = config.section("service")
    model = _load_model(args.checkpoint)
    manifest = _load_corpus(config)
    oracle = load_oracle(args.oracle) if args.oracle else None
    latent_records = []
    if args.latents:
        from ..analysis import load_embedding_records

        latent_records = [
            {
                "city": rec["city"], "kind": rec["kind"], "id": rec["id"],
                "x": rec["planar"][0], "y": rec["planar"][1],
            }
            for rec in load_embedding_records(args.latents)
            if rec.get("planar") is not None
        ]
    state = build_state(
        model, manifest=manifest, oracle=oracle, latent_records=latent_records,
        workers=int(service["workers"]), queue_size=int(service["queue_size"]),
        global_seed=config.global_seed,
    )
    app = create_app(state)
    uvicorn.run(app, host=service["host"], port=int(service["port"]))
    return 0


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (dotted path, JSON value)",
    )
    parser.add_argument("--run-id", default=None, help="run directory name (default: digest-derived)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbandiff")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build the procedural corpus")
    _add_config_args(p)
    p.add_argument("--overwrite", action="store_true", help="replace an existing corpus")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train-vae", help="train the image autoencoder")
    _add_config_args(p)
    p.set_defaults(fn=_cmd_train_vae)

    p = sub.add_parser("train", help="train the diffusion stages (resumes if the run exists)")
    _add_config_args(p)
    p.add_argument("--init", default=None, help="checkpoint to start from (train-vae output)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sample", help="generate one conditioned image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-json", required=True)
    p.add_argument("--constraint", required=True)
    p.add_argument("--dem", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("inpaint", help="regenerate a masked region")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--prompt-json", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_inpaint)

    p = sub.add_parser("eval", help="score generated images against a real set")
    p.add_argument("--real", required=True, help="directory of real PNGs named {cell_id}.png")
    p.add_argument("--gen", required=True, help="directory of generated PNGs named {cell_id}__{k}.png")
    p.add_argument("--report", required=True)
    p.add_argument("--extractor", default=None, help="saved feature extractor (else train one)")
    p.add_argument("--extractor-steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("analyze", help="latent atlas and city separability")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-points", type=int, default=600)
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("transfer", help="cross-city style transfer for one cell")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--source-cell", required=True)
    p.add_argument("--target-city", required=True)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("oracle", help="train the density-compliance oracle")
    _add_config_args(p)
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("augment-exp", help="generative-augmentation downstream experiment")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=None, help="sampling steps for synthetic images")
    p.set_defaults(fn=_cmd_augment_exp)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--oracle", default=None)
    p.add_argument("--latents", default=None, help="embeddings.jsonl from analyze")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except UrbanDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
