"""Tumor-region masks and ROI-based filtering of nucleus instances.

ROI masks come from an external segmentation model (ingested as binary
PNG + frame sidecar or RLE JSON); when none is supplied the tissue mask
or the full slide can stand in, with the weaker provenance recorded so
downstream reports can flag that scores were not restricted to tumor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import metrics
from .errors import DimensionMismatch, FrameMissing, UnreadableMask
from .nuclei import NucleusInstance
from .rle import rle_decode, rle_encode
from .slideio import BinaryMask

PROVENANCE_EXTERNAL = "external"
PROVENANCE_TISSUE = "tissue-fallback"
PROVENANCE_FULL = "full-slide"


@dataclass
class RoiMask:
    """Binary tumor mask with frame level, scale, and provenance."""

    mask: BinaryMask
    downsample: float
    provenance: str

    @property
    def level(self) -> int:
        return self.mask.level

    def contains_point(self, x: float, y: float) -> bool:
        """Membership of a level-0 point, scaled into the mask frame."""
        px = int(np.floor(x / self.downsample))
        py = int(np.floor(y / self.downsample))
        if not (0 <= px < self.mask.width and 0 <= py < self.mask.height):
            return False
        return bool(self.mask.data[py, px])


def from_tissue(tissue: BinaryMask, downsample: float) -> RoiMask:
    return RoiMask(tissue, downsample, PROVENANCE_TISSUE)


def full_slide(width: int, height: int) -> RoiMask:
    return RoiMask(BinaryMask(np.ones((height, width), dtype=bool), level=0),
                   1.0, PROVENANCE_FULL)


def save_roi_png(roimask: RoiMask, path: str | Path) -> None:
    """Binary PNG (0/255) plus a <name>.json sidecar declaring the frame."""
    path = Path(path)
    Image.fromarray(roimask.mask.data.astype(np.uint8) * 255).save(path)
    sidecar = {"level": roimask.mask.level, "downsample": roimask.downsample}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def save_roi_rle(roimask: RoiMask, path: str | Path) -> None:
    payload = {
        "width": roimask.mask.width,
        "height": roimask.mask.height,
        "level": roimask.mask.level,
        "downsample": roimask.downsample,
        "counts": rle_encode(roimask.mask.data),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def import_roi(path: str | Path) -> RoiMask:
    """Load an externally produced ROI mask.

    PNG masks need a <name>.json sidecar with at least "level" (and
    "downsample" when level > 0); RLE JSON masks carry the frame inline.
    Missing frame metadata raises FrameMissing; malformed pixels or runs
    raise UnreadableMask.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableMask(f"no such mask file: {path}")
    if path.suffix.lower() == ".json":
        try:
            payload = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UnreadableMask(f"cannot parse RLE mask {path}: {exc}") from exc
        if "level" not in payload:
            raise FrameMissing(f"{path.name}: RLE mask does not declare its level")
        level = int(payload["level"])
        downsample = _frame_downsample(payload, level, path.name)
        try:
            data = rle_decode(payload["counts"], payload["width"], payload["height"])
        except KeyError as exc:
            raise UnreadableMask(f"{path.name}: missing key {exc}") from exc
        return RoiMask(BinaryMask(data, level=level), downsample, PROVENANCE_EXTERNAL)

    if path.suffix.lower() == ".png":
        sidecar = Path(str(path) + ".json")
        if not sidecar.exists():
            raise FrameMissing(f"{path.name}: no frame sidecar {sidecar.name}")
        meta = json.loads(sidecar.read_text())
        if "level" not in meta:
            raise FrameMissing(f"{sidecar.name}: sidecar does not declare a level")
        level = int(meta["level"])
        downsample = _frame_downsample(meta, level, sidecar.name)
        try:
            arr = np.array(Image.open(path))
        except Exception as exc:
            raise UnreadableMask(f"cannot read mask PNG {path}: {exc}") from exc
        if arr.ndim != 2:
            raise UnreadableMask(f"{path.name}: mask PNG must be single-channel")
        return RoiMask(BinaryMask(arr > 0, level=level), downsample,
                       PROVENANCE_EXTERNAL)
    raise UnreadableMask(f"unsupported mask format {path.suffix!r}")


def _frame_downsample(meta: dict, level: int, name: str) -> float:
    if "downsample" in meta:
        return float(meta["downsample"])
    if level == 0:
        return 1.0
    raise FrameMissing(f"{name}: level {level} mask needs an explicit downsample")


def mask_instances(instances: Sequence[NucleusInstance],
                   roimask: RoiMask) -> list[NucleusInstance]:
    """Keep instances whose centroid falls on a set ROI pixel.

    Centroid-in-mask membership (not area fraction) decides inclusion,
    matching the nucleus-count semantics of scoring. Instances must be
    in the global level-0 frame.
    """
    kept = []
    for inst in instances:
        if inst.frame != "global":
            raise ValueError(f"instance {inst.id} not in global frame")
        cx, cy = inst.centroid
        if roimask.contains_point(cx, cy):
            kept.append(inst)
    return kept


def roi_overlap_report(predicted: RoiMask, ground_truth: RoiMask) -> dict:
    """Pixelwise agreement of two ROI masks, for tumor and for the rest."""
    if predicted.mask.data.shape != ground_truth.mask.data.shape:
        raise DimensionMismatch(
            f"mask shapes differ: {predicted.mask.data.shape} vs "
            f"{ground_truth.mask.data.shape}"
        )
    return {
        "tumor": metrics.binary_pixel_metrics(predicted.mask.data,
                                              ground_truth.mask.data),
        "rest": metrics.binary_pixel_metrics(~predicted.mask.data,
                                             ~ground_truth.mask.data),
    }
