"""Grid-cell data model, rasters, density metrics, prompts, and manifests."""

from urbandiff.geogrid.cells import GridCell, assign_splits
from urbandiff.geogrid.rasters import (
    CATEGORICAL_KINDS,
    CONTINUOUS_KINDS,
    RASTER_KINDS,
    RasterLayer,
    load_raster,
    raster_path_for,
    save_raster,
)
from urbandiff.geogrid.density import (
    DensityMetrics,
    LandUseMix,
    LAND_USE_CATEGORIES,
    compute_density_metrics,
    compute_land_use_mix,
)
from urbandiff.geogrid.constraints import Geometry, rasterize_constraints
from urbandiff.geogrid.prompts import (
    NumericSlot,
    PromptSpec,
    parse_prompt,
    render_prompt,
    tokenize_prompt,
)
from urbandiff.geogrid.manifest import (
    CorpusManifest,
    ManifestRecord,
    adapt_external_directory,
    load_manifest,
    write_manifest,
)

__all__ = [
    "GridCell",
    "assign_splits",
    "RASTER_KINDS",
    "CONTINUOUS_KINDS",
    "CATEGORICAL_KINDS",
    "RasterLayer",
    "save_raster",
    "load_raster",
    "raster_path_for",
    "DensityMetrics",
    "LandUseMix",
    "LAND_USE_CATEGORIES",
    "compute_density_metrics",
    "compute_land_use_mix",
    "Geometry",
    "rasterize_constraints",
    "PromptSpec",
    "NumericSlot",
    "render_prompt",
    "parse_prompt",
    "tokenize_prompt",
    "CorpusManifest",
    "ManifestRecord",
    "write_manifest",
    "load_manifest",
    "adapt_external_directory",
]
