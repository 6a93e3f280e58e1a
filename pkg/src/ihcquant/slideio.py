"""Slide rasters: pyramid metadata, tissue masks, patch grids, stitching.

Supported inputs are tiled/multi-page TIFF (one page per pyramid level)
and plain PNG (treated as a single-level slide). Vendor WSI formats are
out of scope. Pixel reads are lazy: opening a slide only parses level
metadata, and decoded level arrays are cached on first access.

Coordinates are (x, y) with x = column. Patch origins are expressed in
level-0 pixels regardless of the level the pixels were read from.
"""

from __future__ import annotations

import json
import threading
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import (
    CorruptPyramid,
    EmptyTissueMaskWarning,
    LevelOutOfRange,
    UnreadableFile,
    UnsupportedFormat,
)
from .nuclei import NucleusInstance

DEFAULT_PATCH_SIZE = 512
DEFAULT_WHITE_THRESHOLD = 230
DEFAULT_MIN_SATURATION = 25


@dataclass(frozen=True)
class SlideLevel:
    width: int
    height: int
    downsample: float


class SlideImage:
    """Multi-level raster with per-level scale metadata.

    Level 0 is the highest resolution; downsample factors strictly
    increase with level index. Safe for concurrent reads: decoded levels
    are cached behind a lock and never mutated.
    """

    def __init__(self, levels: Sequence[SlideLevel],
                 loaders: Sequence[Callable[[], np.ndarray]],
                 mpp: float | None = None, path: Path | None = None):
        if len(levels) != len(loaders):
            raise ValueError("one loader per level required")
        self.levels = list(levels)
        self.mpp = mpp
        self.path = path
        self._loaders = list(loaders)
        self._cache: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        _validate_pyramid(self.levels, path)

    @property
    def dimensions(self) -> tuple[int, int]:
        return self.levels[0].width, self.levels[0].height

    def check_level(self, level: int) -> int:
        if not 0 <= level < len(self.levels):
            raise LevelOutOfRange(
                f"level {level} out of range (slide has {len(self.levels)} levels)"
            )
        return level

    def level_array(self, level: int) -> np.ndarray:
        """Full decoded RGB array for a level (cached; do not mutate)."""
        self.check_level(level)
        with self._lock:
            if level not in self._cache:
                arr = self._loaders[level]()
                lv = self.levels[level]
                if arr.shape[0] != lv.height or arr.shape[1] != lv.width:
                    raise CorruptPyramid(
                        f"level {level} pixels are {arr.shape[1]}x{arr.shape[0]}, "
                        f"metadata says {lv.width}x{lv.height}"
                    )
                arr.setflags(write=False)
                self._cache[level] = arr
            return self._cache[level]

    def read_region(self, level: int, x: int, y: int, w: int, h: int) -> np.ndarray:
        """RGB region at level coordinates (x, y), size (w, h)."""
        arr = self.level_array(level)
        lv = self.levels[level]
        if x < 0 or y < 0 or x + w > lv.width or y + h > lv.height:
            raise ValueError(
                f"region ({x},{y})+({w}x{h}) outside level {level} "
                f"({lv.width}x{lv.height})"
            )
        return arr[y:y + h, x:x + w]


def _validate_pyramid(levels: Sequence[SlideLevel], path: Path | None) -> None:
    name = path.name if path else "<memory>"
    if not levels:
        raise CorruptPyramid(f"{name}: no levels")
    if abs(levels[0].downsample - 1.0) > 1e-9:
        raise CorruptPyramid(f"{name}: level 0 downsample is {levels[0].downsample}")
    w0, h0 = levels[0].width, levels[0].height
    prev = 0.0
    for i, lv in enumerate(levels):
        if lv.downsample <= prev:
            raise CorruptPyramid(
                f"{name}: downsample not strictly increasing at level {i}"
            )
        prev = lv.downsample
        # dims must match the declared downsample within 1 px rounding
        if abs(w0 / lv.downsample - lv.width) > 1.0 or \
           abs(h0 / lv.downsample - lv.height) > 1.0:
            raise CorruptPyramid(
                f"{name}: level {i} dims {lv.width}x{lv.height} contradict "
                f"downsample {lv.downsample} (level 0 is {w0}x{h0})"
            )


def open_slide(path: str | Path) -> SlideImage:
    """Open a TIFF pyramid or single-level PNG.

    TIFF pages may carry a JSON ImageDescription with a "downsample"
    key (written by the synthetic generator); otherwise the factor is
    inferred from the page dimensions. An "mpp" key on page 0 is
    honored as microns-per-pixel.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        return _open_png(path)
    if suffix in (".tif", ".tiff"):
        return _open_tiff(path)
    raise UnsupportedFormat(f"unsupported slide format {suffix!r} ({path.name})")


def _open_png(path: Path) -> SlideImage:
    try:
        with Image.open(path) as im:
            width, height = im.size
    except Exception as exc:
        raise UnreadableFile(f"cannot read PNG {path}: {exc}") from exc

    def load() -> np.ndarray:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))

    return SlideImage([SlideLevel(width, height, 1.0)], [load], path=path)


def _open_tiff(path: Path) -> SlideImage:
    import tifffile

    try:
        with tifffile.TiffFile(path) as tf:
            pages = list(tf.pages)
            metas = []
            for page in pages:
                shape = page.shape
                if len(shape) == 3:
                    h, w = shape[0], shape[1]
                elif len(shape) == 2:
                    h, w = shape
                else:
                    raise UnsupportedFormat(f"{path.name}: unsupported page shape {shape}")
                desc = {}
                if page.description:
                    try:
                        desc = json.loads(page.description)
                    except (json.JSONDecodeError, TypeError):
                        desc = {}
                metas.append((w, h, desc))
    except (UnsupportedFormat, CorruptPyramid):
        raise
    except Exception as exc:
        raise UnreadableFile(f"cannot read TIFF {path}: {exc}") from exc
    if not metas:
        raise UnreadableFile(f"{path}: TIFF has no pages")

    w0, h0 = metas[0][0], metas[0][1]
    levels = []
    for i, (w, h, desc) in enumerate(metas):
        ds = desc.get("downsample")
        if ds is None:
            ds = 1.0 if i == 0 else w0 / w
        levels.append(SlideLevel(w, h, float(ds)))
    mpp = metas[0][2].get("mpp")

    def make_loader(index: int) -> Callable[[], np.ndarray]:
        def load() -> np.ndarray:
            import tifffile as tff
            with tff.TiffFile(path) as tf:
                arr = tf.pages[index].asarray()
            if arr.ndim == 2:
                arr = np.stack([arr] * 3, axis=-1)
            return np.ascontiguousarray(arr[..., :3].astype(np.uint8))
        return load

    return SlideImage(levels, [make_loader(i) for i in range(len(levels))],
                      mpp=mpp, path=path)


# --- tissue mask ---------------------------------------------------------------


@dataclass
class BinaryMask:
    """Boolean raster with its pyramid level recorded explicitly."""

    data: np.ndarray
    level: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return int(self.data.sum())


def tissue_mask(slide: SlideImage, level: int,
                white_threshold: int = DEFAULT_WHITE_THRESHOLD,
                min_saturation: int = DEFAULT_MIN_SATURATION) -> BinaryMask:
    """Mark tissue pixels, discarding the white background.

    A pixel is tissue iff min(R,G,B) < white_threshold or its HSV
    saturation (0-255 scale) is at least min_saturation.
    """
    slide.check_level(level)
    arr = slide.level_array(level).astype(np.float64)
    mn = arr.min(axis=2)
    mx = arr.max(axis=2)
    sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0) * 255.0, 0.0)
    tissue = (mn < white_threshold) | (sat >= min_saturation)
    return BinaryMask(tissue, level=level)


# --- patch extraction ------------------------------------------------------------


@dataclass
class Patch:
    """One RGB tile; origin is recorded in level-0 pixels."""

    origin: tuple[int, int]
    level: int
    size: tuple[int, int]
    pixels: np.ndarray


def grid_origins(width: int, height: int, size: tuple[int, int],
                 stride: int) -> list[tuple[int, int]]:
    """Row-major aligned grid of patch origins fully inside width x height."""
    w, h = size
    xs = list(range(0, width - w + 1, stride))
    ys = list(range(0, height - h + 1, stride))
    return [(x, y) for y in ys for x in xs]


def patch_tissue_fraction(tissue: BinaryMask, tissue_downsample: float,
                          x0: float, y0: float, w0: float, h0: float) -> float:
    """Tissue fraction of a level-0 footprint, measured in the mask frame."""
    mx0 = max(0, int(np.floor(x0 / tissue_downsample)))
    my0 = max(0, int(np.floor(y0 / tissue_downsample)))
    mx1 = min(tissue.width, int(np.ceil((x0 + w0) / tissue_downsample)))
    my1 = min(tissue.height, int(np.ceil((y0 + h0) / tissue_downsample)))
    if mx1 <= mx0 or my1 <= my0:
        return 0.0
    box = tissue.data[my0:my1, mx0:mx1]
    return float(box.sum()) / box.size


def extract_patches(slide: SlideImage, level: int, size: tuple[int, int],
                    stride: int, tissue: BinaryMask,
                    min_tissue_frac: float) -> Iterator[Patch]:
    """Yield tissue-bearing patches over a row-major aligned grid.

    A patch is yielded iff the tissue fraction of its footprint reaches
    min_tissue_frac. Deterministic: ordering depends only on the grid.
    Emits EmptyTissueMaskWarning when no patch qualifies.
    """
    slide.check_level(level)
    slide.check_level(tissue.level)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not 0.0 <= min_tissue_frac <= 1.0:
        raise ValueError(f"min_tissue_frac must be in [0,1], got {min_tissue_frac}")
    lv = slide.levels[level]
    ds_p = lv.downsample
    ds_m = slide.levels[tissue.level].downsample
    w, h = size
    yielded = 0
    for x, y in grid_origins(lv.width, lv.height, size, stride):
        x0, y0 = x * ds_p, y * ds_p
        frac = patch_tissue_fraction(tissue, ds_m, x0, y0, w * ds_p, h * ds_p)
        if frac >= min_tissue_frac:
            yielded += 1
            yield Patch(
                origin=(int(round(x0)), int(round(y0))),
                level=level,
                size=(w, h),
                pixels=slide.read_region(level, x, y, w, h),
            )
    if yielded == 0:
        warnings.warn("no patch met the tissue threshold", EmptyTissueMaskWarning)


# --- stitching -------------------------------------------------------------------


def stitch(per_patch: Sequence[tuple[tuple[int, int], Sequence[NucleusInstance]]],
           dedup_iou: float = 0.5) -> list[NucleusInstance]:
    """Merge per-patch detections into one global, deduplicated instance set.

    Instances are translated by their patch origin to level-0 global
    coordinates. Duplicates from overlapping patch halos (pairwise mask
    IoU >= dedup_iou) are merged transitively, keeping the largest-area
    member of each group. Output is sorted by centroid (y, x) and
    renumbered 1..n, so the result is byte-identical for any permutation
    of the input list.
    """
    if not 0.0 <= dedup_iou <= 1.0:
        raise ValueError(f"dedup_iou must be in [0,1], got {dedup_iou}")
    globals_: list[NucleusInstance] = []
    for origin, instances in per_patch:
        ox, oy = origin
        for inst in instances:
            moved = inst.translated(ox, oy, frame="global")
            if moved.patch_of_origin is None:
                moved = replace(moved, patch_of_origin=(ox, oy))
            globals_.append(moved)
    if not globals_:
        return []

    n = len(globals_)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    boxes = [inst.bbox for inst in globals_]
    for i in range(n):
        xi, yi, wi, hi = boxes[i]
        for j in range(i + 1, n):
            xj, yj, wj, hj = boxes[j]
            if xi >= xj + wj or xj >= xi + wi or yi >= yj + hj or yj >= yi + hi:
                continue
            if globals_[i].iou(globals_[j]) >= dedup_iou:
                union(i, j)

    groups: dict[int, list[NucleusInstance]] = {}
    for i, inst in enumerate(globals_):
        groups.setdefault(find(i), []).append(inst)

    def keep_key(inst: NucleusInstance):
        cx, cy = inst.centroid
        po = inst.patch_of_origin or (-1, -1)
        return (-inst.area, cy, cx, po[1], po[0])

    survivors = [min(group, key=keep_key) for group in groups.values()]

    def sort_key(inst: NucleusInstance):
        cx, cy = inst.centroid
        return (cy, cx, inst.area, int(inst.ys[0]), int(inst.xs[0]))

    survivors.sort(key=sort_key)
    return [replace(inst, id=i + 1) for i, inst in enumerate(survivors)]
