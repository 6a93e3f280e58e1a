"""Nucleus stain classification in CMYK space.

IHC nuclei come in two color families: blue (hematoxylin counterstain,
no marker expression) and brown (DAB, marker present). In CMYK the Y
component is zero for the blue family and the C component is zero for
the brown family, so the stained/unstained split reads directly off
those two channels. The K component grows with stain darkness and is
thresholded into light / moderate / dark intensity classes.

All CMYK components are kept in [0, 1]. Thresholds are documented with
that scale when persisted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyMask, MissingClass, NonSeparableClasses

MARKERS = ("er", "pr", "ki67")


class StainClass(Enum):
    UNSTAINED = "unstained"
    LIGHT = "light"
    MODERATE = "moderate"
    DARK = "dark"
    # collapsed two-class view used for Ki67
    STAINED = "stained"

    @property
    def is_stained(self) -> bool:
        return self is not StainClass.UNSTAINED

    def collapsed(self) -> "StainClass":
        """Two-class (Ki67) view of this label."""
        if self is StainClass.UNSTAINED:
            return StainClass.UNSTAINED
        return StainClass.STAINED


class CmykPixel(NamedTuple):
    c: float
    m: float
    y: float
    k: float


@dataclass(frozen=True)
class StainThresholds:
    """Stain decision thresholds, all on the [0, 1] component scale.

    delta_u: minimum mean Y for a nucleus to count as stained.
    delta_sl / delta_su: K split points for light/moderate and
    moderate/dark; delta_sl must stay below delta_su.
    """

    delta_u: float = 0.30
    delta_sl: float = 0.35
    delta_su: float = 0.65

    def __post_init__(self):
        if not 0.0 <= self.delta_u <= 1.0:
            raise ValueError(f"delta_u out of [0,1]: {self.delta_u}")
        if not (0.0 <= self.delta_sl <= 1.0 and 0.0 <= self.delta_su <= 1.0):
            raise ValueError("intensity thresholds out of [0,1]")
        if not self.delta_sl < self.delta_su:
            raise ValueError(
                f"delta_sl must be < delta_su, got {self.delta_sl} >= {self.delta_su}"
            )


def rgb_to_cmyk(rgb: Sequence[float]) -> CmykPixel:
    """Convert one RGB triple (0-255) to CMYK (0-1).

    Naive conversion without ICC profiles: K = 1 - max(R,G,B)/255 and
    C,M,Y are the normalized distances of each channel from the max.
    Pure white maps to (0,0,0,0); pure black to (0,0,0,1).
    """
    r, g, b = (float(v) / 255.0 for v in rgb)
    m = max(r, g, b)
    k = 1.0 - m
    if m == 0.0:
        return CmykPixel(0.0, 0.0, 0.0, 1.0)
    return CmykPixel((m - r) / m, (m - g) / m, (m - b) / m, k)


def cmyk_to_rgb(pixel: CmykPixel) -> tuple[float, float, float]:
    """Inverse of rgb_to_cmyk; returns float RGB in 0-255."""
    c, m, y, k = pixel
    return (
        255.0 * (1.0 - c) * (1.0 - k),
        255.0 * (1.0 - m) * (1.0 - k),
        255.0 * (1.0 - y) * (1.0 - k),
    )


def rgb_to_cmyk_array(pixels: np.ndarray) -> np.ndarray:
    """Vectorized conversion of an (..., 3) uint8 image to (..., 4) CMYK."""
    rgbf = np.asarray(pixels, dtype=np.float64) / 255.0
    mx = rgbf.max(axis=-1)
    k = 1.0 - mx
    denom = np.where(mx > 0.0, mx, 1.0)
    cmy = (mx[..., None] - rgbf) / denom[..., None]
    return np.concatenate([cmy, k[..., None]], axis=-1)


def nuclear_pixel_map(
    pixels: np.ndarray, min_blue_c: float = 0.15, min_brown_y: float = 0.15
) -> np.ndarray:
    """Boolean map of pixels that look like nuclear material.

    A pixel is a nucleus candidate iff it is blue-dominant (C above Y
    and above min_blue_c) or brown-dominant (Y above C and above
    min_brown_y). White/gray background has C = Y = 0 and fails both.
    """
    cmyk = rgb_to_cmyk_array(pixels)
    c, y = cmyk[..., 0], cmyk[..., 2]
    blue = (c > y) & (c >= min_blue_c)
    brown = (y > c) & (y >= min_brown_y)
    return blue | brown


def mean_cmyk(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> CmykPixel:
    """Mean per-pixel CMYK over the mask pixels (xs, ys) of an RGB patch."""
    if len(xs) == 0:
        raise EmptyMask("nucleus has no pixels")
    cmyk = rgb_to_cmyk_array(pixels[ys, xs])
    c, m, y, k = cmyk.mean(axis=0)
    return CmykPixel(float(c), float(m), float(y), float(k))


def stain_class_from_mean(
    mean: CmykPixel, thresholds: StainThresholds, marker: str = "er"
) -> StainClass:
    """Classify a nucleus from its mean CMYK color.

    Stained iff mean Y exceeds delta_u and also exceeds mean C (brown
    dominance; the conjunction suppresses gray/artifact pixels). Stained
    nuclei are graded by mean K: light below delta_sl, dark above
    delta_su, moderate otherwise. For Ki67 the grade collapses to the
    two-class stained/unstained view.
    """
    marker = _check_marker(marker)
    stained = mean.y > thresholds.delta_u and mean.y > mean.c
    if not stained:
        return StainClass.UNSTAINED
    if marker == "ki67":
        return StainClass.STAINED
    if mean.k < thresholds.delta_sl:
        return StainClass.LIGHT
    if mean.k > thresholds.delta_su:
        return StainClass.DARK
    return StainClass.MODERATE


def intensity_class_from_mean(
    mean: CmykPixel, thresholds: StainThresholds
) -> StainClass:
    """Four-class label regardless of marker (Ki67 pipelines count with it)."""
    return stain_class_from_mean(mean, thresholds, marker="er")


def classify_stain(nucleus, pixels: np.ndarray, thresholds: StainThresholds,
                   marker: str = "er") -> StainClass:
    """Classify one nucleus instance against an RGB patch.

    ``nucleus`` needs integer pixel coordinate arrays ``xs``/``ys`` in
    the frame of ``pixels``. Raises EmptyMask on an empty mask.
    """
    return stain_class_from_mean(
        mean_cmyk(pixels, nucleus.xs, nucleus.ys), thresholds, marker
    )


def _check_marker(marker: str) -> str:
    m = marker.lower()
    if m not in MARKERS:
        raise ValueError(f"unknown marker {marker!r}, expected one of {MARKERS}")
    return m


def calibrate_thresholds(
    samples: Iterable[tuple[CmykPixel, StainClass]],
) -> StainThresholds:
    """Fit decision thresholds from labeled mean-CMYK samples.

    Every class (unstained, light, moderate, dark) must be present.
    delta_u is the midpoint between the largest unstained Y and the
    smallest stained Y; delta_sl / delta_su are the midpoints between
    the K ranges of adjacent intensity classes. Raises
    NonSeparableClasses when the class ranges overlap in a way the
    threshold rule cannot represent.
    """
    by_class: dict[StainClass, list[CmykPixel]] = {}
    for mean, label in samples:
        if label is StainClass.STAINED:
            raise ValueError("calibration needs intensity sublabels, not STAINED")
        by_class.setdefault(label, []).append(CmykPixel(*mean))

    required = (StainClass.UNSTAINED, StainClass.LIGHT, StainClass.MODERATE,
                StainClass.DARK)
    for cls in required:
        if not by_class.get(cls):
            raise MissingClass(f"no calibration samples for class {cls.value}")

    stained = by_class[StainClass.LIGHT] + by_class[StainClass.MODERATE] \
        + by_class[StainClass.DARK]
    max_y_unstained = max(p.y for p in by_class[StainClass.UNSTAINED])
    min_y_stained = min(p.y for p in stained)
    if max_y_unstained >= min_y_stained:
        raise NonSeparableClasses(
            f"Y ranges overlap: unstained up to {max_y_unstained:.4f}, "
            f"stained from {min_y_stained:.4f}"
        )
    bad = [p for p in stained if p.y <= p.c]
    if bad:
        raise NonSeparableClasses(
            f"{len(bad)} stained samples are not brown-dominant (Y <= C)"
        )
    delta_u = 0.5 * (max_y_unstained + min_y_stained)

    delta_sl = 0.5 * (max(p.k for p in by_class[StainClass.LIGHT])
                      + min(p.k for p in by_class[StainClass.MODERATE]))
    delta_su = 0.5 * (max(p.k for p in by_class[StainClass.MODERATE])
                      + min(p.k for p in by_class[StainClass.DARK]))
    if delta_sl >= delta_su:
        raise NonSeparableClasses(
            f"K ranges overlap: delta_sl {delta_sl:.4f} >= delta_su {delta_su:.4f}"
        )
    return StainThresholds(delta_u=delta_u, delta_sl=delta_sl, delta_su=delta_su)


# --- persistence --------------------------------------------------------------

THRESHOLDS_SCHEMA_VERSION = 1


def save_thresholds(
    thresholds: StainThresholds,
    path: str | Path,
    samples_per_class: dict[str, int] | None = None,
) -> None:
    """Write thresholds as JSON with scale annotation and provenance."""
    payload = {
        "version": THRESHOLDS_SCHEMA_VERSION,
        "scale": "unit",  # components in [0, 1]
        "delta_u": thresholds.delta_u,
        "delta_sl": thresholds.delta_sl,
        "delta_su": thresholds.delta_su,
        "provenance": {"samples_per_class": samples_per_class or {}},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_thresholds(path: str | Path) -> StainThresholds:
    payload = json.loads(Path(path).read_text())
    if payload.get("scale") != "unit":
        raise ValueError(f"unsupported threshold scale {payload.get('scale')!r}")
    return StainThresholds(
        delta_u=payload["delta_u"],
        delta_sl=payload["delta_sl"],
        delta_su=payload["delta_su"],
    )
