"""Fidelity / precision / diversity evaluation report over generated image sets.

The protocol mirrors the usual generative-model evaluation table: fidelity
compares the pooled generated set against the real corpus (FID) and each
generation against its condition's ground truth (PSNR); precision averages
the structural metrics against ground truth; diversity averages pairwise
similarity among generations that share a condition (lower = more diverse).
Style and content losses are averaged within each city first so cities with
many conditions do not dominate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EvalError
from .features import FeatureExtractor, extractor_digest, pooled_features
from .metrics import fsim, ms_ssim, psnr, ssim
from .perceptual import content_loss, fid_from_features, lpips, style_loss

REPORT_FORMAT = 1


@dataclass
class ConditionSet:
    """Generations sharing one conditioning input, plus its ground truth."""

    condition_id: str
    city_id: int
    gt_image: np.ndarray
    generations: list[np.ndarray]


@dataclass
class EvalReport:
    """All metric values for one (real set, generated sets) evaluation.

    ``sample_counts`` records, per metric, exactly how many images or pairs
    produced the number; ``diversity_ssim``/``diversity_fsim`` are None when
    no condition had at least two generations, with the exclusion noted.
    """

    fid: float
    psnr: float
    ssim: float
    ms_ssim: float
    fsim: float
    lpips: float
    style_loss: float
    content_loss: float
    diversity_ssim: float | None
    diversity_fsim: float | None
    sample_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    extractor_digest: str = ""
    config_digest: str = ""

    def to_json(self) -> str:
        payload = {
            "format": REPORT_FORMAT,
            "fid": self.fid,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "ms_ssim": self.ms_ssim,
            "fsim": self.fsim,
            "lpips": self.lpips,
            "style_loss": self.style_loss,
            "content_loss": self.content_loss,
            "diversity_ssim": self.diversity_ssim,
            "diversity_fsim": self.diversity_fsim,
            "sample_counts": self.sample_counts,
            "notes": self.notes,
            "extractor_digest": self.extractor_digest,
            "config_digest": self.config_digest,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        if payload.get("format") != REPORT_FORMAT:
            raise EvalError(f"unsupported report format {payload.get('format')!r}")
        kwargs = {k: payload[k] for k in payload if k != "format"}
        return cls(**kwargs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def build_report(
    real_images: np.ndarray,
    real_city_ids: np.ndarray,
    conditions: list[ConditionSet],
    extractor: FeatureExtractor,
    config_digest: str = "",
) -> EvalReport:
    """Score generated sets against ground truth and the real corpus."""
    reals = np.asarray(real_images)
    city_ids = np.asarray(real_city_ids)
    if reals.shape[0] == 0:
        raise EvalError("report needs a nonempty real set")
    if reals.shape[0] != city_ids.shape[0]:
        raise EvalError("real images and city ids must align")
    if not conditions:
        raise EvalError("report needs at least one condition set")
    ordered = sorted(conditions, key=lambda cs: cs.condition_id)
    notes: list[str] = []

    all_gens = [g for cs in ordered for g in cs.generations]
    if not all_gens:
        raise EvalError("no generations across all condition sets")
    gen_stack = np.stack(all_gens)
    fid_value = fid_from_features(
        pooled_features(extractor, reals), pooled_features(extractor, gen_stack)
    )

    psnr_vals: list[float] = []
    ssim_vals: list[float] = []
    ms_ssim_vals: list[float] = []
    fsim_vals: list[float] = []
    lpips_vals: list[float] = []
    for cs in ordered:
        for gen in cs.generations:
            psnr_vals.append(psnr(gen, cs.gt_image))
            ssim_vals.append(ssim(gen, cs.gt_image))
            ms_ssim_vals.append(ms_ssim(gen, cs.gt_image))
            fsim_vals.append(fsim(gen, cs.gt_image))
            lpips_vals.append(lpips(gen, cs.gt_image, extractor))

    div_ssim_vals: list[float] = []
    div_fsim_vals: list[float] = []
    diversity_conditions = 0
    excluded = 0
    for cs in ordered:
        if len(cs.generations) < 2:
            excluded += 1
            continue
        diversity_conditions += 1
        for a, b in itertools.combinations(range(len(cs.generations)), 2):
            div_ssim_vals.append(ssim(cs.generations[a], cs.generations[b]))
            div_fsim_vals.append(fsim(cs.generations[a], cs.generations[b]))
    if excluded:
        notes.append(
            f"{excluded} condition(s) with fewer than 2 generations excluded from diversity"
        )
    diversity_ssim = _mean(div_ssim_vals) if div_ssim_vals else None
    diversity_fsim = _mean(div_fsim_vals) if div_fsim_vals else None
    if diversity_ssim is None:
        notes.append("diversity metrics absent: no condition had 2+ generations")

    # Style and content are averaged within each city first, then across
    # cities, so the report is not skewed toward heavily sampled cities.
    style_by_city: dict[int, list[float]] = {}
    content_by_city: dict[int, list[float]] = {}
    for cs in ordered:
        city_reals = reals[city_ids == cs.city_id]
        if city_reals.shape[0] == 0:
            notes.append(f"city {cs.city_id} has no real images; using full real set")
            city_reals = reals
        for gen in cs.generations:
            style_by_city.setdefault(cs.city_id, []).append(
                style_loss(gen, cs.gt_image, extractor)
            )
            content_by_city.setdefault(cs.city_id, []).append(
                content_loss(gen, city_reals, extractor)
            )
    style_value = _mean([_mean(v) for v in style_by_city.values()])
    content_value = _mean([_mean(v) for v in content_by_city.values()])

    n_gen = len(all_gens)
    counts = {
        "fid": {"real": int(reals.shape[0]), "generated": n_gen},
        "psnr": {"pairs": len(psnr_vals)},
        "ssim": {"pairs": len(ssim_vals)},
        "ms_ssim": {"pairs": len(ms_ssim_vals)},
        "fsim": {"pairs": len(fsim_vals)},
        "lpips": {"pairs": len(lpips_vals)},
        "style_loss": {"generations": n_gen, "cities": len(style_by_city)},
        "content_loss": {"generations": n_gen, "cities": len(content_by_city)},
        "diversity_ssim": {
            "pairs": len(div_ssim_vals),
            "conditions": diversity_conditions,
            "excluded": excluded,
        },
        "diversity_fsim": {
            "pairs": len(div_fsim_vals),
            "conditions": diversity_conditions,
            "excluded": excluded,
        },
    }
    return EvalReport(
        fid=fid_value,
        psnr=_mean(psnr_vals),
        ssim=_mean(ssim_vals),
        ms_ssim=_mean(ms_ssim_vals),
        fsim=_mean(fsim_vals),
        lpips=_mean(lpips_vals),
        style_loss=style_value,
        content_loss=content_value,
        diversity_ssim=diversity_ssim,
        diversity_fsim=diversity_fsim,
        sample_counts=counts,
        notes=notes,
        extractor_digest=extractor_digest(extractor),
        config_digest=config_digest,
    )


def format_report_table(report: EvalReport) -> str:
    """Render the report as the familiar three-block metric table."""

    def fmt(value: float | None) -> str:
        if value is None:
            return "--"
        return f"{value:.4f}"

    def counts(metric: str) -> str:
        entries = report.sample_counts.get(metric, {})
        return " ".join(f"{k}={v}" for k, v in entries.items())

    rows: list[tuple[str, str, str]] = [
        ("Fidelity", "", ""),
        ("  FID", fmt(report.fid), counts("fid")),
        ("  PSNR (dB)", fmt(report.psnr), counts("psnr")),
        ("Precision", "", ""),
        ("  SSIM", fmt(report.ssim), counts("ssim")),
        ("  MS-SSIM", fmt(report.ms_ssim), counts("ms_ssim")),
        ("  FSIM", fmt(report.fsim), counts("fsim")),
        ("  LPIPS", fmt(report.lpips), counts("lpips")),
        ("Diversity (pairwise, lower = more diverse)", "", ""),
        ("  SSIM", fmt(report.diversity_ssim), counts("diversity_ssim")),
        ("  FSIM", fmt(report.diversity_fsim), counts("diversity_fsim")),
        ("Style / content", "", ""),
        ("  Style loss", fmt(report.style_loss), counts("style_loss")),
        ("  Content loss", fmt(report.content_loss), counts("content_loss")),
    ]
    name_w = max(len(r[0]) for r in rows)
    val_w = max(len(r[1]) for r in rows)
    lines = [f"{'Metric':<{name_w}}  {'Value':>{val_w}}  Samples"]
    lines.append("-" * len(lines[0]))
    for name, value, cnt in rows:
        lines.append(f"{name:<{name_w}}  {value:>{val_w}}  {cnt}".rstrip())
    if report.notes:
        lines.append("")
        for note in report.notes:
            lines.append(f"note: {note}")
    lines.append("")
    lines.append(f"extractor digest: {report.extractor_digest[:16]}")
    if report.config_digest:
        lines.append(f"config digest:    {report.config_digest[:16]}")
    return "\n".join(lines) + "\n"
