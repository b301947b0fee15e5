"""Procedural desk-scale city corpus with exact ground truth."""

from urbandiff.synthcity.styles import ROAD_RGB, CityStyle, sample_city_style
from urbandiff.synthcity.cellgen import CellRecord, synthesize_cell
from urbandiff.synthcity.corpus import CorpusConfig, build_corpus

__all__ = [
    "CityStyle",
    "sample_city_style",
    "ROAD_RGB",
    "CellRecord",
    "synthesize_cell",
    "CorpusConfig",
    "build_corpus",
]
