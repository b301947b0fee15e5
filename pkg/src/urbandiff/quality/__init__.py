"""Image quality metrics, perceptual distances, and the evaluation report."""

from .features import FeatureExtractor, extractor_digest, load_extractor, save_extractor, train_extractor
from .metrics import fsim, ms_ssim, psnr, ssim
from .perceptual import content_loss, fid, gram, lpips, style_loss
from .report import ConditionSet, EvalReport, build_report, format_report_table

__all__ = [
    "ConditionSet",
    "EvalReport",
    "FeatureExtractor",
    "build_report",
    "content_loss",
    "extractor_digest",
    "fid",
    "format_report_table",
    "fsim",
    "gram",
    "load_extractor",
    "lpips",
    "ms_ssim",
    "psnr",
    "save_extractor",
    "ssim",
    "style_loss",
    "train_extractor",
]
