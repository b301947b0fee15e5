"""Latent-space city analysis, compliance scoring, and the augmentation experiment."""

from .augment import (
    EMISSION_COEFFS,
    AugmentationConfig,
    AugmentationReport,
    EmissionRegressor,
    augmentation_experiment,
    resample_area_weighted,
    synthetic_emission,
)
from .density_oracle import (
    ORACLE_METRICS,
    ComplianceScore,
    DensityOracle,
    compliance_score,
    load_oracle,
    oracle_predict,
    save_oracle,
    train_density_oracle,
)
from .latents import (
    STAGE_ENCODE,
    STAGE_MIDSAMPLE,
    STAGES,
    LatentEmbedding,
    extract_latents,
    load_embedding_records,
    pool_latent,
    save_embeddings,
)
from .pca import PcaProjection, pca_inverse, pca_project
from .plots import plot_embedding_scatter
from .separability import betweenness_statistic, city_separability
from .transfer import TransferResult, cross_city_transfer, transfer_prompt
from .tsne import TsneResult, tsne_embed

__all__ = [
    "AugmentationConfig",
    "AugmentationReport",
    "ComplianceScore",
    "DensityOracle",
    "EMISSION_COEFFS",
    "EmissionRegressor",
    "LatentEmbedding",
    "ORACLE_METRICS",
    "PcaProjection",
    "STAGES",
    "STAGE_ENCODE",
    "STAGE_MIDSAMPLE",
    "TransferResult",
    "TsneResult",
    "augmentation_experiment",
    "betweenness_statistic",
    "city_separability",
    "compliance_score",
    "load_oracle",
    "oracle_predict",
    "save_oracle",
    "cross_city_transfer",
    "extract_latents",
    "load_embedding_records",
    "pca_inverse",
    "pca_project",
    "plot_embedding_scatter",
    "pool_latent",
    "resample_area_weighted",
    "save_embeddings",
    "synthetic_emission",
    "tsne_embed",
    "train_density_oracle",
    "transfer_prompt",
]
