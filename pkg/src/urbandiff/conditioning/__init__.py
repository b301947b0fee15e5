"""Conditioning machinery: numeral-aware text encoding, raster control towers,
coordinate-attention masking, gated fusion, and the zero-convolution branch
that injects control residuals into the denoising UNet."""

from .branch import ControlBranch
from .fuse import coordinate_attention, fuse
from .textenc import NumeralTextEncoder, TextEmbedding
from .towers import ControlTowers, normalize_dem
from .vocab import PromptVocabulary

__all__ = [
    "ControlBranch",
    "ControlTowers",
    "NumeralTextEncoder",
    "PromptVocabulary",
    "TextEmbedding",
    "coordinate_attention",
    "fuse",
    "normalize_dem",
]
