"""Synthetic slides and HER2 regions with exact ground-truth manifests.

The generator draws flat-color nucleus disks whose CMYK statistics land
safely inside one intensity band, so a correct pipeline must reproduce
the manifest's counts and score exactly, not approximately. Stained
nuclei are placed in spatial groups at least as large as the cluster
filter's minimum so the filter never removes genuine signal, and
optional artifact mode decorates isolated unstained nuclei with stain
smears that a correct filter must remove.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.draw import polygon as draw_polygon

from . import nuclei as nuclei_mod
from . import roi as roi_mod
from . import score as score_mod
from .errors import ConfigInvalid, PlacementImpossible
from .her2 import HER2_CLASSES, Her2Score, MembraneRegion
from .nuclei import NucleusInstance
from .roi import RoiMask
from .score import StainCounts
from .slideio import BinaryMask
from .stain import MARKERS

MANIFEST_SCHEMA_VERSION = 1

CLASS_UNSTAINED = "unstained"
STAINED_CLASSES = ("light", "moderate", "dark")
ALL_CLASSES = (CLASS_UNSTAINED,) + STAINED_CLASSES

# Target K bands per intensity class, strictly inside the default
# thresholds (0.35 / 0.65) with margin to spare for rounding.
DEFAULT_K_BANDS = {
    "light": (0.08, 0.32),
    "moderate": (0.38, 0.62),
    "dark": (0.68, 0.92),
}

ARTIFACT_SMEAR_RGB = (210, 150, 60)
ARTIFACT_RING_PX = 6


def _default_polygon(width: int, height: int) -> list[tuple[float, float]]:
    """A hexagonal ROI so the mask is genuinely non-rectangular."""
    w, h = width, height
    return [(0.50 * w, 0.08 * h), (0.92 * w, 0.32 * h), (0.92 * w, 0.72 * h),
            (0.50 * w, 0.94 * h), (0.08 * w, 0.72 * h), (0.08 * w, 0.32 * h)]


@dataclass(frozen=True)
class SlideSpec:
    """Recipe for one synthetic slide."""

    width: int = 1536
    height: int = 1536
    marker: str = "er"
    seed: int = 0
    counts: dict = field(default_factory=dict)
    outside_counts: dict = field(default_factory=dict)
    roi_polygons: tuple | None = None
    radius_range: tuple[int, int] = (8, 14)
    group_size: int = 6
    group_radius: float = 45.0
    n_artifacts: int = 0
    artifact_isolation_px: float = 130.0
    levels: int = 1
    mpp: float | None = None

    def __post_init__(self):
        if self.marker not in MARKERS:
            raise ConfigInvalid(f"unknown marker {self.marker!r}")
        for name, table in (("counts", self.counts),
                            ("outside_counts", self.outside_counts)):
            for cls, n in table.items():
                if cls not in ALL_CLASSES:
                    raise ConfigInvalid(f"{name}: unknown class {cls!r}")
                if n < 0:
                    raise ConfigInvalid(f"{name}[{cls!r}] is negative")
        rmin, rmax = self.radius_range
        if not 3 <= rmin <= rmax:
            raise ConfigInvalid(f"bad radius_range {self.radius_range}")
        if self.group_size < 1:
            raise ConfigInvalid("group_size must be >= 1")
        n_stained = sum(self.counts.get(c, 0) for c in STAINED_CLASSES)
        if 0 < n_stained < self.group_size:
            raise ConfigInvalid(
                f"{n_stained} stained nuclei cannot form a group of "
                f"{self.group_size}; use 0 or >= group_size"
            )
        if self.n_artifacts > self.counts.get(CLASS_UNSTAINED, 0):
            raise ConfigInvalid("more artifacts than in-ROI unstained nuclei")
        if self.levels < 1:
            raise ConfigInvalid("levels must be >= 1")

    def polygons(self) -> list[list[tuple[float, float]]]:
        if self.roi_polygons is None:
            return [_default_polygon(self.width, self.height)]
        return [list(map(tuple, poly)) for poly in self.roi_polygons]


@dataclass
class _Placed:
    nucleus_id: int
    cx: int
    cy: int
    r: int
    cls: str
    in_roi: bool
    artifact: bool
    rgb: tuple[int, int, int]


def _roi_mask_from_polygons(polygons, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        xs = np.array([p[0] for p in poly], dtype=np.float64)
        ys = np.array([p[1] for p in poly], dtype=np.float64)
        rr, cc = draw_polygon(ys, xs, shape=mask.shape)
        mask[rr, cc] = True
    return mask


def _sample_unstained_rgb(rng: np.random.Generator) -> tuple[int, int, int]:
    """Blue-dominant color: Y = 0 and C comfortably above threshold."""
    b = int(rng.integers(160, 216))
    rg = int(round(b * float(rng.uniform(0.35, 0.55))))
    return rg, rg, b


def _sample_stained_rgb(cls: str, rng: np.random.Generator,
                        k_bands: dict) -> tuple[int, int, int]:
    """Brown-dominant color whose K sits inside the class band.

    R is the max channel so C = 0 < Y, and Y = (R-B)/R >= 0.8 clears the
    stained-vs-unstained threshold regardless of rounding.
    """
    lo, hi = k_bands[cls]
    k = float(rng.uniform(lo + 0.03, hi - 0.03))
    r = int(round(255.0 * (1.0 - k)))
    g = int(round(r * float(rng.uniform(0.45, 0.60))))
    b = int(round(r * float(rng.uniform(0.05, 0.20))))
    return r, g, b


def _disk_indices(cx: int, cy: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.ogrid[-r:r + 1, -r:r + 1]
    inside = xx * xx + yy * yy <= r * r
    ys, xs = np.nonzero(inside)
    return ys - r + cy, xs - r + cx


def _ring_indices(cx: int, cy: int, r: int, width: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    outer = r + width
    yy, xx = np.ogrid[-outer:outer + 1, -outer:outer + 1]
    d2 = xx * xx + yy * yy
    ring = (d2 > r * r) & (d2 <= outer * outer)
    ys, xs = np.nonzero(ring)
    return ys - outer + cy, xs - outer + cx


class _Placer:
    """Rejection-sampling placement with margins and pair separation."""

    def __init__(self, spec: SlideSpec, roi: np.ndarray,
                 rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.dist_in = ndimage.distance_transform_edt(roi)
        self.dist_out = ndimage.distance_transform_edt(~roi)
        self.centers: list[tuple[int, int]] = []
        self.reaches: list[int] = []

    def _clear(self, cx: int, cy: int, reach: int, in_roi: bool) -> bool:
        w, h = self.spec.width, self.spec.height
        if not (reach + 2 <= cx < w - reach - 2
                and reach + 2 <= cy < h - reach - 2):
            return False
        dist = self.dist_in if in_roi else self.dist_out
        # keep the whole footprint (and the detection centroid) strictly
        # on one side of the ROI boundary
        if dist[cy, cx] < reach + 4:
            return False
        for (ox, oy), oreach in zip(self.centers, self.reaches):
            if (cx - ox) ** 2 + (cy - oy) ** 2 < (reach + oreach + 4) ** 2:
                return False
        return True

    def commit(self, cx: int, cy: int, reach: int) -> None:
        self.centers.append((cx, cy))
        self.reaches.append(reach)

    def place_free(self, reach: int, in_roi: bool,
                   attempts: int = 4000) -> tuple[int, int]:
        for _ in range(attempts):
            cx = int(self.rng.integers(0, self.spec.width))
            cy = int(self.rng.integers(0, self.spec.height))
            if self._clear(cx, cy, reach, in_roi):
                return cx, cy
        raise PlacementImpossible(
            f"no free position after {attempts} attempts; slide too crowded"
        )

    def place_center(self, reach: int, attempts: int = 4000
                     ) -> tuple[int, int]:
        """A group anchor: inside the eroded ROI, ignoring separation.

        Anchors are virtual points, so existing nuclei do not block them;
        members placed around the anchor are separation-checked normally.
        """
        w, h = self.spec.width, self.spec.height
        for _ in range(attempts):
            cx = int(self.rng.integers(0, w))
            cy = int(self.rng.integers(0, h))
            if reach + 2 <= cx < w - reach - 2 \
                    and reach + 2 <= cy < h - reach - 2 \
                    and self.dist_in[cy, cx] >= reach + 4:
                return cx, cy
        raise PlacementImpossible(
            f"no group anchor after {attempts} attempts; ROI too small"
        )

    def place_near(self, gx: int, gy: int, radius: float, reach: int,
                   in_roi: bool, attempts: int = 600
                   ) -> tuple[int, int] | None:
        for _ in range(attempts):
            ang = float(self.rng.uniform(0.0, 2.0 * np.pi))
            rad = radius * float(np.sqrt(self.rng.uniform(0.0, 1.0)))
            cx = int(round(gx + rad * np.cos(ang)))
            cy = int(round(gy + rad * np.sin(ang)))
            if self._clear(cx, cy, reach, in_roi):
                return cx, cy
        return None

    def far_from(self, cx: int, cy: int,
                 others: list[tuple[int, int]], min_d: float) -> bool:
        return all((cx - ox) ** 2 + (cy - oy) ** 2 >= min_d ** 2
                   for ox, oy in others)


def _group_sizes(total: int, group: int) -> list[int]:
    """Split a stained count into groups, none smaller than `group`."""
    if total == 0:
        return []
    n_full = total // group
    rem = total - n_full * group
    sizes = [group] * n_full
    if rem:
        sizes[-1] += rem
    return sizes


def generate_slide(spec: SlideSpec, out_dir: str | Path,
                   name: str = "slide") -> dict:
    """Write slide pixels, ROI mask, label image, and the truth manifest.

    Returns the manifest dict (also written as <name>_manifest.json).
    Raises PlacementImpossible when the requested counts cannot be
    placed with the required margins.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    roi_arr = _roi_mask_from_polygons(spec.polygons(), spec.width, spec.height)
    placer = _Placer(spec, roi_arr, rng)
    rmin, rmax = spec.radius_range
    placed: list[_Placed] = []
    next_id = 1

    def radius() -> int:
        return int(rng.integers(rmin, rmax + 1))

    # stained nuclei first, in groups the cluster filter must keep
    stained_list = [cls for cls in STAINED_CLASSES
                    for _ in range(spec.counts.get(cls, 0))]
    for size in _group_sizes(len(stained_list), spec.group_size):
        members, chunk = None, stained_list[:size]
        for _ in range(80):
            gx, gy = placer.place_center(int(spec.group_radius) + rmax + 4)
            trial = []
            for _ in chunk:
                r = radius()
                pos = placer.place_near(gx, gy, spec.group_radius, r,
                                        in_roi=True)
                if pos is None:
                    break
                trial.append((pos[0], pos[1], r))
                placer.commit(pos[0], pos[1], r)
            if len(trial) == len(chunk):
                members = trial
                break
            # roll back the partial group and retry elsewhere
            del placer.centers[len(placer.centers) - len(trial):]
            del placer.reaches[len(placer.reaches) - len(trial):]
        if members is None:
            raise PlacementImpossible(
                f"could not place a stained group of {size}"
            )
        for (cx, cy, r), cls in zip(members, chunk):
            placed.append(_Placed(next_id, cx, cy, r, cls, True, False,
                                  _sample_stained_rgb(cls, rng,
                                                      DEFAULT_K_BANDS)))
            next_id += 1
        stained_list = stained_list[size:]

    stained_centers = [(p.cx, p.cy) for p in placed]

    # unstained in-ROI nuclei; the first n_artifacts get stain smears and
    # must stay isolated from genuine stained signal
    artifact_centers: list[tuple[int, int]] = []
    for i in range(spec.counts.get(CLASS_UNSTAINED, 0)):
        artifact = i < spec.n_artifacts
        r = radius()
        reach = r + (ARTIFACT_RING_PX if artifact else 0)
        for attempt in range(4000):
            cx, cy = placer.place_free(reach, in_roi=True)
            if not artifact:
                break
            if placer.far_from(cx, cy, stained_centers,
                               spec.artifact_isolation_px) and \
               placer.far_from(cx, cy, artifact_centers,
                               spec.artifact_isolation_px):
                break
        else:
            raise PlacementImpossible("could not isolate an artifact nucleus")
        placer.commit(cx, cy, reach)
        if artifact:
            artifact_centers.append((cx, cy))
        placed.append(_Placed(next_id, cx, cy, r, CLASS_UNSTAINED, True,
                              artifact, _sample_unstained_rgb(rng)))
        next_id += 1

    # outside-ROI nuclei are masked away before clustering, so they can
    # be placed individually
    for cls in ALL_CLASSES:
        for _ in range(spec.outside_counts.get(cls, 0)):
            r = radius()
            cx, cy = placer.place_free(r, in_roi=False)
            placer.commit(cx, cy, r)
            rgb = _sample_unstained_rgb(rng) if cls == CLASS_UNSTAINED \
                else _sample_stained_rgb(cls, rng, DEFAULT_K_BANDS)
            placed.append(_Placed(next_id, cx, cy, r, cls, False, False, rgb))
            next_id += 1

    # rasterize
    canvas = np.full((spec.height, spec.width, 3), 255, dtype=np.uint8)
    labels = np.zeros((spec.height, spec.width), dtype=np.uint16)
    for p in placed:
        if p.artifact:
            ys, xs = _ring_indices(p.cx, p.cy, p.r, ARTIFACT_RING_PX)
            canvas[ys, xs] = ARTIFACT_SMEAR_RGB
        ys, xs = _disk_indices(p.cx, p.cy, p.r)
        canvas[ys, xs] = p.rgb
        labels[ys, xs] = p.nucleus_id

    slide_name = f"{name}.png" if spec.levels == 1 else f"{name}.tif"
    _write_slide_pixels(canvas, out_dir / slide_name, spec)
    Image.fromarray(labels).save(out_dir / f"{name}_labels.png")
    roi_mask = RoiMask(BinaryMask(roi_arr, level=0), 1.0,
                       roi_mod.PROVENANCE_EXTERNAL)
    roi_mod.save_roi_png(roi_mask, out_dir / f"{name}_roi.png")

    in_counts = {cls: sum(1 for p in placed if p.in_roi and p.cls == cls)
                 for cls in ALL_CLASSES}
    counts = StainCounts(
        marker=spec.marker,
        n_unstained=in_counts[CLASS_UNSTAINED],
        n_light=in_counts["light"],
        n_moderate=in_counts["moderate"],
        n_dark=in_counts["dark"],
    )
    manifest = {
        "version": MANIFEST_SCHEMA_VERSION,
        "seed": spec.seed,
        "marker": spec.marker,
        "width": spec.width,
        "height": spec.height,
        "files": {"slide": slide_name, "roi": f"{name}_roi.png",
                  "labels": f"{name}_labels.png"},
        "generator": {
            "radius_range": list(spec.radius_range),
            "group_size": spec.group_size,
            "group_radius": spec.group_radius,
            "n_artifacts": spec.n_artifacts,
            "artifact_isolation_px": spec.artifact_isolation_px,
            "levels": spec.levels,
        },
        "nuclei": [
            {"id": p.nucleus_id, "center": [p.cx, p.cy], "radius": p.r,
             "stain_class": p.cls, "in_roi": p.in_roi, "artifact": p.artifact}
            for p in placed
        ],
        "expected_counts": counts.to_dict(),
        "expected_score": _expected_score(counts),
    }
    (out_dir / f"{name}_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2)
    )
    return manifest


def _write_slide_pixels(canvas: np.ndarray, path: Path,
                        spec: SlideSpec) -> None:
    if spec.levels == 1:
        Image.fromarray(canvas).save(path)
        return
    import tifffile
    with tifffile.TiffWriter(path) as tif:
        for i in range(spec.levels):
            ds = 4 ** i
            page = canvas[::ds, ::ds]
            desc: dict = {"downsample": float(ds)}
            if i == 0 and spec.mpp is not None:
                desc["mpp"] = spec.mpp
            tif.write(page, description=json.dumps(desc, sort_keys=True))


def _expected_score(counts: StainCounts) -> dict:
    if counts.total == 0:
        return {"qc": "empty_slide"}
    slide_score = score_mod.score_counts(counts)
    if slide_score.allred is not None:
        return slide_score.allred.to_dict()
    assert slide_score.proliferation is not None
    return slide_score.proliferation.to_dict()


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def truth_instances(manifest: dict) -> list[NucleusInstance]:
    """Ground-truth nuclei as instances in the global frame."""
    out = []
    for rec in manifest["nuclei"]:
        ys, xs = _disk_indices(rec["center"][0], rec["center"][1],
                               rec["radius"])
        out.append(NucleusInstance(id=rec["id"], xs=xs, ys=ys, frame="global"))
    return out


def verify_manifest(manifest: dict, base_dir: str | Path | None = None
                    ) -> list[str]:
    """Internal-consistency check of a manifest; returns found problems.

    Recounts the per-class nucleus records against expected_counts,
    recomputes the score from the counts, and (when base_dir is given)
    checks the referenced label image against the nucleus records.
    """
    problems: list[str] = []
    recount = {cls: 0 for cls in ALL_CLASSES}
    for rec in manifest["nuclei"]:
        if rec["in_roi"]:
            recount[rec["stain_class"]] += 1
    expected = manifest["expected_counts"]
    pairs = (("unstained", CLASS_UNSTAINED), ("light", "light"),
             ("moderate", "moderate"), ("dark", "dark"))
    for key, cls in pairs:
        if expected.get(key) != recount[cls]:
            problems.append(
                f"expected_counts[{key}] = {expected.get(key)} but nucleus "
                f"records give {recount[cls]}"
            )
    counts = StainCounts(
        marker=manifest["marker"],
        n_unstained=recount[CLASS_UNSTAINED],
        n_light=recount["light"],
        n_moderate=recount["moderate"],
        n_dark=recount["dark"],
    )
    rescored = _expected_score(counts)
    if rescored != manifest["expected_score"]:
        problems.append(
            f"expected_score {manifest['expected_score']} does not match "
            f"recomputed {rescored}"
        )

    if base_dir is not None:
        label_path = Path(base_dir) / manifest["files"]["labels"]
        if not label_path.exists():
            problems.append(f"missing label image {label_path.name}")
        else:
            labels = np.array(Image.open(label_path))
            ids = {rec["id"] for rec in manifest["nuclei"]}
            present = {int(v) for v in np.unique(labels)} - {0}
            if ids != present:
                problems.append(
                    f"label image ids {sorted(present)[:5]}... do not match "
                    f"manifest ({len(present)} vs {len(ids)})"
                )
    return problems


# --- HER2 region fixtures ---------------------------------------------------------

# Per-grade membrane rendering: arc completeness, ring width, luminance.
HER2_BAND_PARAMS = {
    "0": {"completeness": (0.0, 0.0), "width": 0, "lum": (0, 0)},
    "1+": {"completeness": (0.20, 0.40), "width": 1, "lum": (190, 215)},
    "2+": {"completeness": (0.55, 0.80), "width": 2, "lum": (120, 150)},
    "3+": {"completeness": (0.95, 1.00), "width": 3, "lum": (60, 85)},
}

_BROWN_BASE = np.array([90.0, 50.0, 10.0])
_BROWN_BASE_LUM = 0.299 * 90 + 0.587 * 50 + 0.114 * 10


def _membrane_rgb(target_lum: float) -> tuple[int, int, int]:
    """Brown blended toward white to hit a target luminance."""
    a = (255.0 - target_lum) / (255.0 - _BROWN_BASE_LUM)
    rgb = 255.0 + a * (_BROWN_BASE - 255.0)
    return tuple(int(round(v)) for v in rgb)


@dataclass(frozen=True)
class Her2RegionSpec:
    target: str
    seed: int = 0
    size: int = 224
    n_nuclei: int = 10
    radius_range: tuple[int, int] = (7, 10)

    def __post_init__(self):
        if self.target not in HER2_CLASSES:
            raise ConfigInvalid(f"unknown HER2 grade {self.target!r}")
        if self.n_nuclei < 1:
            raise ConfigInvalid("n_nuclei must be >= 1")


def make_her2_region(spec: Her2RegionSpec) -> tuple[MembraneRegion, Her2Score]:
    """One region crop with membrane rendered for the target grade."""
    rng = np.random.default_rng(spec.seed)
    params = HER2_BAND_PARAMS[spec.target]
    size = spec.size
    canvas = np.full((size, size, 3), 245, dtype=np.uint8)
    membrane = np.zeros((size, size), dtype=bool)
    rmin, rmax = spec.radius_range
    width = params["width"]

    centers: list[tuple[int, int, int]] = []
    margin = rmax + width + 3
    for _ in range(spec.n_nuclei):
        r = int(rng.integers(rmin, rmax + 1))
        for _ in range(4000):
            cx = int(rng.integers(margin, size - margin))
            cy = int(rng.integers(margin, size - margin))
            if all((cx - ox) ** 2 + (cy - oy) ** 2
                   >= (r + orr + 2 * width + 4) ** 2
                   for ox, oy, orr in centers):
                break
        else:
            raise PlacementImpossible(
                f"cannot fit {spec.n_nuclei} nuclei in a {size}px region"
            )
        centers.append((cx, cy, r))

    instances = []
    for i, (cx, cy, r) in enumerate(centers, start=1):
        ys, xs = _disk_indices(cx, cy, r)
        canvas[ys, xs] = _sample_unstained_rgb(rng)
        instances.append(NucleusInstance(id=i, xs=xs, ys=ys, frame="patch"))
        if width == 0:
            continue
        lum = float(rng.uniform(*params["lum"]))
        completeness = float(rng.uniform(*params["completeness"]))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        rys, rxs = _ring_indices(cx, cy, r, width)
        theta = np.mod(np.arctan2(rys - cy, rxs - cx) - phase, 2.0 * np.pi)
        lit = theta <= 2.0 * np.pi * completeness
        canvas[rys[lit], rxs[lit]] = _membrane_rgb(lum)
        membrane[rys[lit], rxs[lit]] = True

    region = MembraneRegion(
        region_id=f"{spec.target}-{spec.seed}",
        pixels=canvas,
        membrane_mask=membrane,
        nuclei=instances,
    )
    return region, Her2Score(spec.target)


def make_her2_dataset(n_per_class: int, seed: int = 0, size: int = 224,
                      n_nuclei: int = 10
                      ) -> list[tuple[MembraneRegion, Her2Score]]:
    """Balanced labeled region set covering all four HER2 grades."""
    out = []
    seq = np.random.SeedSequence(seed)
    region_seeds = seq.generate_state(len(HER2_CLASSES) * n_per_class)
    i = 0
    for grade in HER2_CLASSES:
        for _ in range(n_per_class):
            spec = Her2RegionSpec(target=grade, seed=int(region_seeds[i]),
                                  size=size, n_nuclei=n_nuclei)
            out.append(make_her2_region(spec))
            i += 1
    return out


def save_her2_region(region: MembraneRegion, label: Her2Score | None,
                     out_dir: str | Path) -> None:
    """Write the {id}_rgb.png / _membrane.png / _nuclei.png triple."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rid = region.region_id
    Image.fromarray(region.pixels).save(out_dir / f"{rid}_rgb.png")
    Image.fromarray(region.membrane_mask.astype(np.uint8) * 255).save(
        out_dir / f"{rid}_membrane.png")
    nuclei_mod.write_label_png(region.nuclei, region.pixels.shape[1],
                               region.pixels.shape[0],
                               out_dir / f"{rid}_nuclei.png")
    if label is not None:
        labels_file = out_dir / "labels.csv"
        header = not labels_file.exists()
        with open(labels_file, "a") as fh:
            if header:
                fh.write("region_id,label\n")
            fh.write(f"{rid},{label.value}\n")


def load_her2_region(out_dir: str | Path, region_id: str) -> MembraneRegion:
    out_dir = Path(out_dir)
    pixels = np.array(Image.open(out_dir / f"{region_id}_rgb.png").convert("RGB"))
    membrane = np.array(Image.open(out_dir / f"{region_id}_membrane.png")) > 0
    instances = nuclei_mod.import_instances(
        out_dir / f"{region_id}_nuclei.png", frame="patch")
    return MembraneRegion(region_id=region_id, pixels=pixels,
                          membrane_mask=membrane, nuclei=instances)
