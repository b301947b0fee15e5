"""HTTP service: scenarios, generation/inpaint/transfer jobs, rasters,
images, latent atlas, and compliance fragments over the loaded checkpoint.

All JSON payloads carry schema_version.  The model and checkpoint are
read-only here; anything that generates runs through the bounded job pool.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import tempfile
import threading
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Response
from PIL import Image
from pydantic import BaseModel, Field, field_validator, model_validator

from ..analysis.density_oracle import DensityOracle, oracle_predict
from ..analysis.transfer import transfer_prompt
from ..conditioning.towers import control_tensors_from_rasters
from ..diffusion.sampling import inpaint, sample
from ..errors import JobError, UrbanDiffError
from ..geogrid.manifest import CorpusManifest
from ..geogrid.prompts import PromptSpec, render_prompt
from ..geogrid.rasters import RasterLayer, load_raster
from ..geogrid.density import DensityMetrics, LandUseMix
from ..synthcity.corpus import CITY_NAMES, city_name_for
from .jobs import DONE, JobRegistry

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Request/response models.
# ---------------------------------------------------------------------------


class PromptFields(BaseModel):
    city_name: str
    bcr: Optional[float] = None
    bvd: Optional[float] = None
    rpd: Optional[float] = None
    rvc: Optional[float] = None
    road_density: Optional[float] = None
    emission_tc: Optional[float] = None
    land_use: Optional[dict[str, float]] = None
    free_text: str = ""

    @model_validator(mode="after")
    def _buildable(self) -> "PromptFields":
        self.to_spec()
        return self

    def to_spec(self) -> PromptSpec:
        try:
            metrics = DensityMetrics(
                bcr=self.bcr, bvd=self.bvd, rpd=self.rpd, rvc=self.rvc,
                road_density=self.road_density,
            )
            mix = LandUseMix(ratios=self.land_use) if self.land_use else None
            return PromptSpec(
                city_name=self.city_name, metrics=metrics, land_use=mix,
                emission_tc=self.emission_tc, free_text=self.free_text,
            )
        except ValueError as exc:
            raise ValueError(str(exc)) from exc


class ScenarioRequest(BaseModel):
    prompt: PromptFields
    constraint_id: Optional[str] = None
    constraint_png_base64: Optional[str] = None
    dem_id: Optional[str] = None
    dem_f32_base64: Optional[str] = None
    seed: int = 0
    steps: Optional[int] = Field(default=None, ge=1)
    guidance: Optional[float] = None

    @model_validator(mode="after")
    def _one_source_each(self) -> "ScenarioRequest":
        if (self.constraint_id is None) == (self.constraint_png_base64 is None):
            raise ValueError("provide exactly one of constraint_id or constraint_png_base64")
        if (self.dem_id is None) == (self.dem_f32_base64 is None):
            raise ValueError("provide exactly one of dem_id or dem_f32_base64")
        return self


class InpaintRequest(BaseModel):
    image_id: str
    mask_png_base64: str
    prompt: PromptFields
    seed: int = 0
    steps: Optional[int] = Field(default=None, ge=1)


class TransferRequest(BaseModel):
    source_cell: str
    target_city: str
    seeds: list[int] = Field(min_length=1)

    @field_validator("target_city")
    @classmethod
    def _known_city(cls, value: str) -> str:
        if value not in CITY_NAMES:
            raise ValueError(f"unknown city name {value!r}")
        return value


# ---------------------------------------------------------------------------
# Service state.
# ---------------------------------------------------------------------------


@dataclass
class ServiceState:
    """Every mutable store behind one lock; the model itself is read-only."""

    model: object
    manifest: CorpusManifest | None = None
    oracle: DensityOracle | None = None
    registry: JobRegistry = None  # type: ignore[assignment]
    latent_records: list[dict] = dataclass_field(default_factory=list)
    raster_paths: dict[str, Path] = dataclass_field(default_factory=dict)
    raster_bytes: dict[str, bytes] = dataclass_field(default_factory=dict)
    images: dict[str, bytes] = dataclass_field(default_factory=dict)
    scenarios: dict[str, dict] = dataclass_field(default_factory=dict)
    compliance: dict[str, dict] = dataclass_field(default_factory=dict)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)

    def raster_layer(self, raster_id: str) -> RasterLayer:
        if raster_id in self.raster_paths:
            return load_raster(self.raster_paths[raster_id])
        if raster_id in self.raster_bytes:
            data = self.raster_bytes[raster_id]
            suffix = ".png" if data[:8] == b"\x89PNG\r\n\x1a\n" else ".f32"
            with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
                tmp.write(data)
                tmp_path = Path(tmp.name)
            try:
                return load_raster(tmp_path)
            finally:
                tmp_path.unlink(missing_ok=True)
        raise KeyError(raster_id)

    def raster_payload(self, raster_id: str) -> tuple[bytes, str]:
        if raster_id in self.raster_paths:
            path = self.raster_paths[raster_id]
            media = "image/png" if path.suffix == ".png" else "application/octet-stream"
            return path.read_bytes(), media
        if raster_id in self.raster_bytes:
            data = self.raster_bytes[raster_id]
            media = "image/png" if data[:8] == b"\x89PNG\r\n\x1a\n" else "application/octet-stream"
            return data, media
        raise KeyError(raster_id)


def build_state(
    model,
    manifest: CorpusManifest | None = None,
    oracle: DensityOracle | None = None,
    latent_records: list[dict] | None = None,
    workers: int = 2,
    queue_size: int = 16,
    global_seed: int = 0,
) -> ServiceState:
    state = ServiceState(
        model=model,
        manifest=manifest,
        oracle=oracle,
        registry=JobRegistry(workers=workers, queue_size=queue_size, global_seed=global_seed),
        latent_records=list(latent_records or []),
    )
    if manifest is not None:
        for record in manifest.records:
            cell_id = record.cell.cell_id
            state.raster_paths[f"{cell_id}.image"] = manifest.resolve(record.image_path)
            state.raster_paths[f"{cell_id}.dem"] = manifest.resolve(record.dem_path)
            state.raster_paths[f"{cell_id}.constraint"] = manifest.resolve(record.constraint_path)
    return state


def _png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _decode_base64(data: str, what: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPException(status_code=422, detail=f"{what} is not valid base64")


def _decode_mask_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return (np.asarray(img.convert("L")) > 127).astype(np.uint8)
    except Exception:
        raise HTTPException(status_code=422, detail="mask is not a decodable PNG")


# ---------------------------------------------------------------------------
# Application.
# ---------------------------------------------------------------------------


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="urbandiff workbench", version="0.1.0")
    app.state.service = state

    def versioned(payload: dict) -> dict:
        return {"schema_version": SCHEMA_VERSION, **payload}

    def job_payload(job_id: str) -> dict:
        try:
            job = state.registry.get(job_id)
        except JobError:
            raise HTTPException(status_code=404, detail=f"unknown job id {job_id!r}")
        return versioned({
            "job_id": job.job_id,
            "kind": job.kind,
            "status": job.status,
            "progress": job.progress,
            "result_image_ids": list(job.result_image_ids),
            "error": job.error,
            "scenario": job.scenario,
            **({k: v for k, v in job.extras.items()}),
        })

    def submit(kind: str, scenario: dict, fn) -> dict:
        try:
            job_id = state.registry.submit(kind, scenario, fn)
        except JobError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        return versioned({"job_id": job_id})

    def scenario_tensors(scenario: dict):
        constraint = state.raster_layer(scenario["constraint_ref"])
        dem = state.raster_layer(scenario["dem_ref"])
        dem_t, con_t = control_tensors_from_rasters(dem, constraint)
        return dem_t, con_t

    def store_images(job_id: str, images: np.ndarray) -> list[str]:
        ids = []
        with state.lock:
            for i, image in enumerate(images):
                image_id = f"img-{job_id}-{i}"
                state.images[image_id] = _png_bytes(image)
                ids.append(image_id)
        return ids

    # ---- read endpoints -----------------------------------------------------

    @app.get("/health")
    def health() -> dict:
        return versioned({"status": "ok"})

    @app.get("/cities")
    def cities() -> dict:
        ids = state.manifest.city_ids if state.manifest is not None else []
        return versioned({"cities": ids})

    @app.get("/cells")
    def cells(city: str | None = None) -> dict:
        if state.manifest is None:
            return versioned({"cells": []})
        records = state.manifest.records
        if city is not None:
            if city not in state.manifest.city_ids:
                raise HTTPException(status_code=404, detail=f"unknown city {city!r}")
            records = [r for r in records if r.cell.city_id == city]
        return versioned({
            "cells": [
                {
                    "cell_id": r.cell.cell_id,
                    "city_id": r.cell.city_id,
                    "split": r.cell.split,
                    "prompt": r.prompt,
                    "metrics": r.metrics.to_dict(),
                    "image_id": f"{r.cell.cell_id}.image",
                    "dem_id": f"{r.cell.cell_id}.dem",
                    "constraint_id": f"{r.cell.cell_id}.constraint",
                }
                for r in records
            ]
        })

    @app.get("/rasters/{raster_id}")
    def raster(raster_id: str) -> Response:
        try:
            data, media = state.raster_payload(raster_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown raster id {raster_id!r}")
        return Response(content=data, media_type=media)

    @app.get("/images/{image_id}")
    def image(image_id: str) -> Response:
        with state.lock:
            data = state.images.get(image_id)
        if data is None and image_id in state.raster_paths and image_id.endswith(".image"):
            data = state.raster_paths[image_id].read_bytes()
        if data is None:
            raise HTTPException(status_code=404, detail=f"unknown image id {image_id!r}")
        return Response(content=data, media_type="image/png")

    @app.get("/jobs/{job_id}")
    def job(job_id: str) -> dict:
        return job_payload(job_id)

    @app.get("/latents")
    def latents(city: str | None = None, kind: str | None = None) -> dict:
        points = [
            r for r in state.latent_records
            if (city is None or r.get("city") == city)
            and (kind is None or r.get("kind") == kind)
        ]
        return versioned({"points": points})

    @app.get("/compliance")
    def compliance(job_id: str) -> dict:
        with state.lock:
            cached = state.compliance.get(job_id)
        if cached is not None:
            return versioned(cached)
        if state.oracle is None:
            raise HTTPException(status_code=404, detail="no compliance oracle loaded")
        try:
            job = state.registry.get(job_id)
        except JobError:
            raise HTTPException(status_code=404, detail=f"unknown job id {job_id!r}")
        if job.status != DONE or not job.result_image_ids:
            raise HTTPException(status_code=404, detail=f"job {job_id} has no scored images")
        with state.lock:
            pngs = [state.images[i] for i in job.result_image_ids]
        arrays = np.stack([
            np.asarray(Image.open(io.BytesIO(p)).convert("RGB")) for p in pngs
        ])
        estimates = oracle_predict(state.oracle, arrays)
        prompt_fields = job.scenario.get("prompt", {})
        per_metric = {}
        for metric in state.oracle.metrics:
            prompted = prompt_fields.get(metric)
            values = [float(v) for v in estimates[metric]]
            entry = {"estimates": values, "prompted": prompted}
            if prompted is not None:
                entry["mae"] = float(np.mean(np.abs(np.array(values) - float(prompted))))
            per_metric[metric] = entry
        fragment = {"job_id": job_id, "per_metric": per_metric}
        with state.lock:
            state.compliance[job_id] = fragment
        return versioned(fragment)

    # ---- scenario lifecycle -------------------------------------------------

    @app.post("/scenarios")
    def create_scenario(request: ScenarioRequest) -> dict:
        if request.constraint_id is not None:
            if request.constraint_id not in state.raster_paths and \
                    request.constraint_id not in state.raster_bytes:
                raise HTTPException(
                    status_code=404, detail=f"unknown raster id {request.constraint_id!r}"
                )
            constraint_ref = request.constraint_id
        else:
            data = _decode_base64(request.constraint_png_base64, "constraint_png_base64")
            constraint_ref = "inline-" + hashlib.sha256(data).hexdigest()[:16]
            with state.lock:
                state.raster_bytes[constraint_ref] = data
        if request.dem_id is not None:
            if request.dem_id not in state.raster_paths and \
                    request.dem_id not in state.raster_bytes:
                raise HTTPException(status_code=404, detail=f"unknown raster id {request.dem_id!r}")
            dem_ref = request.dem_id
        else:
            data = _decode_base64(request.dem_f32_base64, "dem_f32_base64")
            dem_ref = "inline-" + hashlib.sha256(data).hexdigest()[:16]
            with state.lock:
                state.raster_bytes[dem_ref] = data

        spec = request.prompt.to_spec()
        scenario = {
            "prompt": request.prompt.model_dump(),
            "prompt_text": render_prompt(spec),
            "constraint_ref": constraint_ref,
            "dem_ref": dem_ref,
            "seed": request.seed,
            "steps": request.steps,
            "guidance": request.guidance,
        }
        blob = repr(sorted(scenario.items())).encode("utf-8")
        scenario_id = "scn-" + hashlib.sha256(blob).hexdigest()[:16]
        with state.lock:
            state.scenarios[scenario_id] = scenario
        return versioned({"scenario_id": scenario_id, "prompt_text": scenario["prompt_text"]})

    @app.post("/scenarios/{scenario_id}/generate")
    def generate(scenario_id: str) -> dict:
        with state.lock:
            scenario = state.scenarios.get(scenario_id)
        if scenario is None:
            raise HTTPException(status_code=404, detail=f"unknown scenario id {scenario_id!r}")

        def run(job_id: str, scn: dict, set_progress, _job_seed: int) -> dict:
            dem_t, con_t = scenario_tensors(scn)
            bundle = state.model.make_bundle(
                [scn["prompt_text"]], dem_t, con_t, guidance_scale=scn["guidance"]
            )
            images = sample(
                state.model, bundle, scn["seed"], steps=scn["steps"],
                on_step=lambda done, total: set_progress(done / total),
            )
            return {"image_ids": store_images(job_id, images)}

        return submit("generate", scenario, run)

    @app.post("/inpaint")
    def inpaint_endpoint(request: InpaintRequest) -> dict:
        with state.lock:
            png = state.images.get(request.image_id)
        if png is None and request.image_id in state.raster_paths \
                and request.image_id.endswith(".image"):
            png = state.raster_paths[request.image_id].read_bytes()
        if png is None:
            raise HTTPException(status_code=404, detail=f"unknown image id {request.image_id!r}")
        mask_bytes = _decode_base64(request.mask_png_base64, "mask_png_base64")
        mask = _decode_mask_png(mask_bytes)
        with Image.open(io.BytesIO(png)) as img:
            image = np.asarray(img.convert("RGB"))
        if mask.shape != image.shape[:2]:
            raise HTTPException(
                status_code=409,
                detail=f"mask {mask.shape} does not match image {image.shape[:2]}",
            )
        spec = request.prompt.to_spec()
        scenario = {
            "image_id": request.image_id,
            "prompt": request.prompt.model_dump(),
            "prompt_text": render_prompt(spec),
            "seed": request.seed,
            "steps": request.steps,
            "mask_digest": hashlib.sha256(mask_bytes).hexdigest(),
        }

        def run(job_id: str, scn: dict, set_progress, _job_seed: int) -> dict:
            px = image.shape[0]
            dem_t = torch.zeros(1, 1, px, px)
            con_t = torch.zeros(1, 1, px, px)
            bundle = state.model.make_bundle([scn["prompt_text"]], dem_t, con_t)
            out = inpaint(
                state.model, image, mask, bundle, scn["seed"], steps=scn["steps"],
                on_step=lambda done, total: set_progress(done / total),
            )
            return {
                "image_ids": store_images(job_id, out[None]),
                "mask_digest": scn["mask_digest"],
            }

        return submit("inpaint", scenario, run)

    @app.post("/transfer")
    def transfer(request: TransferRequest) -> dict:
        if state.manifest is None:
            raise HTTPException(status_code=404, detail="no corpus loaded")
        record = next(
            (r for r in state.manifest.records if r.cell.cell_id == request.source_cell), None
        )
        if record is None:
            raise HTTPException(
                status_code=404, detail=f"unknown cell id {request.source_cell!r}"
            )
        source_city = city_name_for(int(record.cell.city_id.lstrip("c")))
        scenario = {
            "source_cell": request.source_cell,
            "source_city": source_city,
            "target_city": request.target_city,
            "seeds": list(request.seeds),
            "prompt_text": transfer_prompt(request.target_city, source_city),
        }

        def run(job_id: str, scn: dict, set_progress, _job_seed: int) -> dict:
            constraint = state.raster_layer(f"{scn['source_cell']}.constraint")
            dem = state.raster_layer(f"{scn['source_cell']}.dem")
            dem_t, con_t = control_tensors_from_rasters(dem, constraint)
            bundle = state.model.make_bundle([scn["prompt_text"]], dem_t, con_t)
            images = []
            for i, seed in enumerate(scn["seeds"]):
                images.append(sample(state.model, bundle, seed)[0])
                set_progress((i + 1) / len(scn["seeds"]))
            return {"image_ids": store_images(job_id, np.stack(images))}

        return submit("transfer", scenario, run)

    @app.exception_handler(UrbanDiffError)
    def domain_error(_request, exc: UrbanDiffError):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=422, content={
            "schema_version": SCHEMA_VERSION, "detail": str(exc),
        })

    return app
