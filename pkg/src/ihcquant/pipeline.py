"""End-to-end scoring: slide pixels in, clinical score and audit out.

Stages: tissue mask -> overlapping patch grid -> per-patch detection and
stain classification -> border pruning -> stitch -> ROI masking ->
small-cluster filtering -> counting -> scoring. Per-patch work is
parallelizable; everything downstream of the patch loop is order
independent, so worker count never changes the result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import clusters as clusters_mod
from . import roi as roi_mod
from .config import PipelineConfig
from .nuclei import NucleusInstance, detect_nuclei_baseline
from .score import SlideScore, StainCounts, score_counts
from .slideio import (
    BinaryMask,
    Patch,
    SlideImage,
    open_slide,
    patch_tissue_fraction,
    tissue_mask,
)
from .stain import intensity_class_from_mean, mean_cmyk


@dataclass
class PipelineResult:
    score: SlideScore
    instances: list[NucleusInstance]
    roi_provenance: str
    n_detected: int
    n_in_roi: int
    cluster_report: dict | None


def overlapping_origins(width: int, height: int, size: int,
                        halo: int) -> list[tuple[int, int]]:
    """Patch origins with halo overlap plus flush right/bottom rows.

    Consecutive patches overlap by `halo` pixels so any nucleus smaller
    than the halo sits strictly inside at least one patch; extra flush
    patches cover slides whose size is not a multiple of the stride.
    """
    def axis(extent: int) -> list[int]:
        if extent <= size:
            return [0]
        stride = size - halo
        xs = list(range(0, extent - size + 1, stride))
        if xs[-1] != extent - size:
            xs.append(extent - size)
        return xs

    return [(x, y) for y in axis(height) for x in axis(width)]


def _patch_for(slide: SlideImage, origin: tuple[int, int],
               size: int) -> Patch:
    w0, h0 = slide.dimensions
    x, y = origin
    w = min(size, w0 - x)
    h = min(size, h0 - y)
    return Patch(origin=origin, level=0, size=(w, h),
                 pixels=slide.read_region(0, x, y, w, h))


def prune_border_instances(instances: Sequence[NucleusInstance],
                           patch: Patch,
                           slide_dims: tuple[int, int]
                           ) -> list[NucleusInstance]:
    """Drop instances touching a patch edge that is not a slide edge.

    A nucleus cut by an interior patch border is incomplete there; the
    overlapping neighbor patch sees it whole, so dropping the clipped
    copy keeps exactly one full detection per nucleus.
    """
    x0, y0 = patch.origin
    w, h = patch.size
    w0, h0 = slide_dims
    kept = []
    for inst in instances:
        bx0, by0, bw, bh = inst.bbox
        clipped = (
            (bx0 == 0 and x0 > 0)
            or (by0 == 0 and y0 > 0)
            or (bx0 + bw == w and x0 + w < w0)
            or (by0 + bh == h and y0 + h < h0)
        )
        if not clipped:
            kept.append(inst)
    return kept


def detect_and_classify_patch(patch: Patch, cfg: PipelineConfig,
                              slide_dims: tuple[int, int]
                              ) -> list[NucleusInstance]:
    """Pure per-patch stage: detect, prune borders, classify intensity."""
    instances = detect_nuclei_baseline(patch, cfg.detector)
    instances = prune_border_instances(instances, patch, slide_dims)
    classified = []
    for inst in instances:
        mean = mean_cmyk(patch.pixels, inst.xs, inst.ys)
        label = intensity_class_from_mean(mean, cfg.stain)
        classified.append(replace(inst, stain=label))
    return classified


def detect_slide(slide: SlideImage, cfg: PipelineConfig,
                 workers: int | None = None
                 ) -> tuple[list[NucleusInstance], BinaryMask]:
    """Detect and classify nuclei over the whole slide, stitched global.

    The tissue mask is computed at the coarsest level; patches below the
    tissue fraction threshold are skipped entirely.
    """
    from .slideio import stitch

    workers = workers if workers is not None else cfg.workers
    coarsest = len(slide.levels) - 1
    tissue = tissue_mask(slide, coarsest, cfg.tissue.white_threshold,
                         cfg.tissue.min_saturation)
    ds_m = slide.levels[coarsest].downsample
    w0, h0 = slide.dimensions
    size = cfg.patches.size
    origins = []
    for origin in overlapping_origins(w0, h0, size, cfg.patches.halo):
        x, y = origin
        w = min(size, w0 - x)
        h = min(size, h0 - y)
        frac = patch_tissue_fraction(tissue, ds_m, x, y, w, h)
        if frac >= cfg.patches.min_tissue_frac:
            origins.append(origin)

    def work(origin: tuple[int, int]) -> tuple[tuple[int, int],
                                               list[NucleusInstance]]:
        patch = _patch_for(slide, origin, size)
        return origin, detect_and_classify_patch(patch, cfg, (w0, h0))

    if workers == 1:
        per_patch = [work(origin) for origin in origins]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_patch = list(pool.map(work, origins))

    return stitch(per_patch), tissue


def resolve_roi(slide: SlideImage, roi_path: str | Path | None,
                tissue: BinaryMask) -> roi_mod.RoiMask:
    """External ROI when given, else tissue mask, never silently absent."""
    if roi_path is not None:
        return roi_mod.import_roi(roi_path)
    coarsest = len(slide.levels) - 1
    return roi_mod.from_tissue(tissue, slide.levels[coarsest].downsample)


def run_scoring(slide: SlideImage | str | Path, marker: str,
                roi_path: str | Path | None = None,
                cfg: PipelineConfig | None = None,
                workers: int | None = None,
                slide_id: str | None = None) -> PipelineResult:
    """Score one slide end to end. Deterministic for fixed inputs."""
    cfg = cfg or PipelineConfig()
    if not isinstance(slide, SlideImage):
        if slide_id is None:
            slide_id = Path(slide).stem
        slide = open_slide(slide)
    slide_id = slide_id or (slide.path.stem if slide.path else "slide")

    instances, tissue = detect_slide(slide, cfg, workers=workers)
    roimask = resolve_roi(slide, roi_path, tissue)
    in_roi = roi_mod.mask_instances(instances, roimask)

    cluster_report = None
    if cfg.cluster.enabled:
        in_roi, cluster_report = clusters_mod.filter_false_positives(
            in_roi, eps_px=cfg.cluster.eps_px,
            min_size=cfg.cluster.min_size, mode=cfg.cluster.mode,
        )

    counts = StainCounts.from_labels(
        [inst.stain for inst in in_roi if inst.stain is not None], marker
    )
    audit = {
        "roi_provenance": roimask.provenance,
        "n_detected": len(instances),
        "n_in_roi": cluster_report["n_input"] if cluster_report
        else len(in_roi),
        "n_scored": counts.total,
        "cluster_filter": _cluster_audit(cluster_report),
    }
    score = score_counts(counts, slide_id=slide_id,
                         bin_edges=cfg.scoring.ps_bin_edges, audit=audit)
    return PipelineResult(
        score=score,
        instances=in_roi,
        roi_provenance=roimask.provenance,
        n_detected=len(instances),
        n_in_roi=audit["n_in_roi"],
        cluster_report=cluster_report,
    )


def _cluster_audit(report: dict | None) -> dict | None:
    if report is None:
        return None
    # keep the audit compact: membership lists can be huge on real slides
    return {
        "eps_px": report["eps_px"],
        "min_size": report["min_size"],
        "mode": report["mode"],
        "n_input": report["n_input"],
        "n_kept": report["n_kept"],
        "n_removed": len(report["removed_ids"]),
        "removed_ids": report["removed_ids"],
    }
