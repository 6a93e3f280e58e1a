"""Nucleus instances: baseline detection, ingestion, and detection metrics.

The built-in detector is a classical stand-in for an external instance
segmentation model: candidate nuclear pixels (blue- or brown-dominant in
CMYK) -> 8-connected components -> area filter -> distance-transform
splitting of fused components. External model output is ingested either
as 16-bit label PNGs or as RLE JSON records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.feature import peak_local_max

from . import stain
from .errors import BadLabelImage, SchemaMismatch
from .rle import rle_decode, rle_encode

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

INSTANCES_SCHEMA_VERSION = 1


@dataclass(eq=False)
class NucleusInstance:
    """One detected nucleus as an explicit pixel set.

    xs/ys hold the column/row coordinates of every mask pixel, sorted by
    (row, col) so two instances with the same pixel set compare equal
    byte-for-byte. ``frame`` records whether coordinates are local to a
    patch or global (level-0 slide coordinates).
    """

    id: int
    xs: np.ndarray
    ys: np.ndarray
    frame: str = "patch"
    stain: stain.StainClass | None = None
    patch_of_origin: tuple[int, int] | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.int64)
        ys = np.asarray(self.ys, dtype=np.int64)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise ValueError("xs/ys must be equal-length 1-D arrays")
        if len(xs) == 0:
            raise ValueError("instance with empty pixel set")
        order = np.lexsort((xs, ys))
        object.__setattr__(self, "xs", xs[order])
        object.__setattr__(self, "ys", ys[order])

    @property
    def area(self) -> int:
        return int(len(self.xs))

    @property
    def centroid(self) -> tuple[float, float]:
        """(x, y) pixel centroid."""
        return float(self.xs.mean()), float(self.ys.mean())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(x0, y0, width, height)."""
        x0, y0 = int(self.xs.min()), int(self.ys.min())
        return x0, y0, int(self.xs.max()) - x0 + 1, int(self.ys.max()) - y0 + 1

    def pixel_keys(self) -> np.ndarray:
        """Sorted encoded (y, x) pairs; basis for exact set operations."""
        return self.ys << 32 | self.xs

    def iou(self, other: "NucleusInstance") -> float:
        inter = np.intersect1d(
            self.pixel_keys(), other.pixel_keys(), assume_unique=True
        ).size
        if inter == 0:
            return 0.0
        return inter / (self.area + other.area - inter)

    def translated(self, dx: int, dy: int, frame: str | None = None) -> "NucleusInstance":
        return replace(
            self, xs=self.xs + dx, ys=self.ys + dy, frame=frame or self.frame
        )

    def local_mask(self) -> tuple[np.ndarray, tuple[int, int]]:
        """Boolean mask cropped to the bbox, plus the bbox (x0, y0) offset."""
        x0, y0, w, h = self.bbox
        m = np.zeros((h, w), dtype=bool)
        m[self.ys - y0, self.xs - x0] = True
        return m, (x0, y0)


@dataclass(frozen=True)
class DetectorConfig:
    """Baseline detector parameters.

    min_blue_c / min_brown_y gate the CMYK dominance rule for candidate
    pixels; components outside [min_area_px, max_area_px] are dropped or
    split; split seeds must be at least split_min_distance_px apart.
    """

    min_blue_c: float = 0.15
    min_brown_y: float = 0.15
    min_area_px: int = 40
    max_area_px: int = 5000
    split_min_distance_px: int = 8

    def __post_init__(self):
        if not 0 < self.min_area_px < self.max_area_px:
            raise ValueError(
                f"need 0 < min_area_px < max_area_px, got "
                f"{self.min_area_px} / {self.max_area_px}"
            )
        if self.split_min_distance_px < 1:
            raise ValueError("split_min_distance_px must be >= 1")


def detect_nuclei_baseline(patch, cfg: DetectorConfig = DetectorConfig()) -> list[NucleusInstance]:
    """Detect nuclei in an RGB patch. Coordinates are patch-local."""
    pixels = patch.pixels if hasattr(patch, "pixels") else np.asarray(patch)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("patch must be RGB")
    origin = getattr(patch, "origin", None)

    candidates = stain.nuclear_pixel_map(pixels, cfg.min_blue_c, cfg.min_brown_y)
    labels, n = ndimage.label(candidates, structure=_EIGHT_CONNECTED)
    instances: list[NucleusInstance] = []
    next_id = 1
    for slc, lab in zip(ndimage.find_objects(labels), range(1, n + 1)):
        comp = labels[slc] == lab
        area = int(comp.sum())
        if area < cfg.min_area_px:
            continue
        y_off, x_off = slc[0].start, slc[1].start
        if area <= cfg.max_area_px:
            pieces = [comp]
        else:
            pieces = _split_component(comp, cfg.split_min_distance_px)
        for piece in pieces:
            if int(piece.sum()) < cfg.min_area_px:
                continue
            ys, xs = np.nonzero(piece)
            instances.append(NucleusInstance(
                id=next_id, xs=xs + x_off, ys=ys + y_off,
                frame="patch", patch_of_origin=origin,
            ))
            next_id += 1
    return instances


def _split_component(comp: np.ndarray, min_distance: int) -> list[np.ndarray]:
    """Split a fused component at distance-transform maxima.

    Pixels are assigned to the nearest maximum; ties go to the first
    seed in (y, x) order so the partition is deterministic.
    """
    dist = ndimage.distance_transform_edt(comp)
    peaks = peak_local_max(dist, min_distance=min_distance, exclude_border=False,
                           labels=comp.astype(int))
    if len(peaks) <= 1:
        return [comp]
    peaks = peaks[np.lexsort((peaks[:, 1], peaks[:, 0]))]
    ys, xs = np.nonzero(comp)
    d2 = (ys[:, None] - peaks[None, :, 0]) ** 2 + (xs[:, None] - peaks[None, :, 1]) ** 2
    owner = np.argmin(d2, axis=1)
    pieces = []
    for i in range(len(peaks)):
        m = np.zeros_like(comp)
        sel = owner == i
        m[ys[sel], xs[sel]] = True
        pieces.append(m)
    return pieces


# --- serialization -------------------------------------------------------------


def instances_to_json(instances: Sequence[NucleusInstance], frame: str = "global") -> dict:
    """Serializable record set: id, centroid, bbox-local RLE mask, provenance."""
    records = []
    for inst in instances:
        mask, (x0, y0) = inst.local_mask()
        cx, cy = inst.centroid
        records.append({
            "id": inst.id,
            "centroid": [cx, cy],
            "area": inst.area,
            "bbox": [x0, y0, mask.shape[1], mask.shape[0]],
            "rle": rle_encode(mask),
            "stain": inst.stain.value if inst.stain is not None else None,
            "patch_of_origin": list(inst.patch_of_origin) if inst.patch_of_origin else None,
        })
    return {
        "version": INSTANCES_SCHEMA_VERSION,
        "frame": frame,
        "instances": records,
    }


def instances_from_json(payload: dict) -> list[NucleusInstance]:
    try:
        frame = payload["frame"]
        records = payload["instances"]
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"instance JSON missing key: {exc}") from exc
    out = []
    for rec in records:
        try:
            x0, y0, w, h = rec["bbox"]
            mask = rle_decode(rec["rle"], w, h)
            inst_id = rec["id"]
        except SchemaMismatch:
            raise
        except Exception as exc:
            raise SchemaMismatch(f"bad instance record: {exc}") from exc
        if not mask.any():
            raise BadLabelImage(f"instance {inst_id} has zero area")
        ys, xs = np.nonzero(mask)
        label = rec.get("stain")
        origin = rec.get("patch_of_origin")
        out.append(NucleusInstance(
            id=inst_id, xs=xs + x0, ys=ys + y0, frame=frame,
            stain=stain.StainClass(label) if label else None,
            patch_of_origin=tuple(origin) if origin else None,
        ))
    return out


def save_instances_json(instances: Sequence[NucleusInstance], path: str | Path,
                        frame: str = "global") -> None:
    Path(path).write_text(
        json.dumps(instances_to_json(instances, frame=frame), sort_keys=True)
    )


def write_label_png(instances: Sequence[NucleusInstance], width: int, height: int,
                    path: str | Path) -> None:
    """Render instances into a 16-bit label PNG (0 background, k = id of instance k)."""
    canvas = np.zeros((height, width), dtype=np.uint16)
    for inst in instances:
        if not 0 < inst.id <= np.iinfo(np.uint16).max:
            raise ValueError(f"instance id {inst.id} not representable in 16 bits")
        canvas[inst.ys, inst.xs] = inst.id
    Image.fromarray(canvas).save(path)


def import_instances(path: str | Path, frame: str = "patch") -> list[NucleusInstance]:
    """Load instances from a 16-bit label PNG or an RLE JSON file.

    Label values become instance ids; labels need not be contiguous but
    zero-area (absent) semantics are the caller's concern. RLE JSON must
    follow the schema written by save_instances_json.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            payload = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaMismatch(f"unreadable instance JSON: {exc}") from exc
        instances = instances_from_json(payload)
        return [replace(i, frame=frame) for i in instances]
    if path.suffix.lower() != ".png":
        raise SchemaMismatch(f"unsupported instance file {path.name}")
    arr = np.array(Image.open(path))
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise BadLabelImage(f"{path.name}: label image must be single-channel integer")
    out = []
    for lab in np.unique(arr):
        if lab == 0:
            continue
        ys, xs = np.nonzero(arr == lab)
        out.append(NucleusInstance(id=int(lab), xs=xs, ys=ys, frame=frame))
    return out


# --- detection metrics ----------------------------------------------------------


def detection_report(predicted: Sequence[NucleusInstance],
                     ground_truth: Sequence[NucleusInstance],
                     match_iou: float = 0.5) -> dict:
    """Compare predicted and ground-truth instances by greedy IoU matching.

    Pairs are matched one-to-one in order of descending IoU; a pair
    counts as a true positive when its IoU reaches match_iou. Accuracy
    is TP / (TP + FP + FN) since detection has no true negatives.
    """
    frames = {i.frame for i in predicted} | {i.frame for i in ground_truth}
    if len(frames) > 1:
        raise ValueError(f"mixed coordinate frames: {sorted(frames)}")

    pairs = []
    for pi, p in enumerate(predicted):
        px0, py0, pw, ph = p.bbox
        for gi, g in enumerate(ground_truth):
            gx0, gy0, gw, gh = g.bbox
            if px0 >= gx0 + gw or gx0 >= px0 + pw or py0 >= gy0 + gh or gy0 >= py0 + ph:
                continue
            iou = p.iou(g)
            if iou >= match_iou and iou > 0.0:
                pairs.append((iou, pi, gi))
    # descending IoU, ascending indices on ties: deterministic greedy match
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    tp = 0
    for iou, pi, gi in pairs:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        tp += 1
    fp = len(predicted) - tp
    fn = len(ground_truth) - tp

    def _ratio(num, den):
        return num / den if den else 1.0

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "gt_count": len(ground_truth),
        "pred_count": len(predicted),
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "accuracy": _ratio(tp, tp + fp + fn),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


DETECTION_CSV_FIELDS = ("gt_count", "pred_count", "tp", "fp", "fn",
                        "accuracy", "precision", "recall", "f1")


def detection_report_csv_row(report: dict) -> str:
    return ",".join(str(report[k]) for k in DETECTION_CSV_FIELDS)
