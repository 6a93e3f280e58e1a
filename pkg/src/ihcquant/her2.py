"""HER2 membrane scoring: feature extraction and the learned 4-class grader.

HER2 is graded 0, 1+, 2+, 3+ from membrane staining pattern rather than
nuclear counts, so scoring works on region crops with a membrane mask
and nucleus instances, summarised into a fixed-length feature vector
and classified by a random forest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    EmptyInput,
    EmptyRegion,
    FoldTooSmall,
)
from .forest import ForestConfig, RandomForest
from .metrics import ConfusionMatrix, quadratic_kappa
from .nuclei import NucleusInstance

HER2_CLASSES = ("0", "1+", "2+", "3+")

HIST_BINS = 16
MODEL_SCHEMA_VERSION = 1


class Her2Score(Enum):
    ZERO = "0"
    ONE_PLUS = "1+"
    TWO_PLUS = "2+"
    THREE_PLUS = "3+"

    @property
    def index(self) -> int:
        return HER2_CLASSES.index(self.value)

    @classmethod
    def from_index(cls, i: int) -> "Her2Score":
        return cls(HER2_CLASSES[i])

    @property
    def clinical_category(self) -> str:
        if self is Her2Score.THREE_PLUS:
            return "positive"
        if self is Her2Score.TWO_PLUS:
            return "equivocal"
        return "negative"


@dataclass(eq=False)
class MembraneRegion:
    """One region crop: RGB pixels, membrane mask, and its nuclei."""

    region_id: str
    pixels: np.ndarray
    membrane_mask: np.ndarray
    nuclei: list[NucleusInstance] = field(default_factory=list)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        self.membrane_mask = np.asarray(self.membrane_mask, dtype=bool)
        if self.pixels.size == 0:
            raise EmptyRegion(f"region {self.region_id!r} has no pixels")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DimensionMismatch(
                f"region pixels must be HxWx3, got {self.pixels.shape}"
            )
        if self.membrane_mask.shape != self.pixels.shape[:2]:
            raise DimensionMismatch(
                f"membrane mask {self.membrane_mask.shape} does not match "
                f"pixels {self.pixels.shape[:2]}"
            )


@dataclass(frozen=True)
class Her2FeatureVector:
    """Fixed-length description of membrane staining in one region.

    Raw counts ride along so region vectors pool exactly: summing the
    counts of several regions and re-deriving gives the same vector as
    extracting features from the union of the regions.
    """

    membrane_hist_counts: tuple[int, ...]
    nuclei_hist_counts: tuple[int, ...]
    membrane_px: int
    nuclei_px: int
    n_nuclei: int
    n_complete_membrane: int
    ratio_cap: float = 100.0

    def __post_init__(self):
        if len(self.membrane_hist_counts) != HIST_BINS \
                or len(self.nuclei_hist_counts) != HIST_BINS:
            raise ValueError(f"histograms must have {HIST_BINS} bins")

    @property
    def membrane_hist(self) -> np.ndarray:
        return _normalize_hist(self.membrane_hist_counts)

    @property
    def nuclei_hist(self) -> np.ndarray:
        return _normalize_hist(self.nuclei_hist_counts)

    @property
    def membrane_skewness(self) -> float:
        return _binned_skewness(self.membrane_hist_counts)

    @property
    def nuclei_membrane_ratio(self) -> float:
        if self.membrane_px == 0:
            return self.ratio_cap
        return min(self.ratio_cap, self.nuclei_px / self.membrane_px)

    @property
    def pct_complete_membrane(self) -> float:
        if self.n_nuclei == 0:
            return 0.0
        return 100.0 * self.n_complete_membrane / self.n_nuclei

    def as_array(self) -> np.ndarray:
        """16 + 16 histogram bins, skewness, ratio, pct complete: 35 floats."""
        return np.concatenate([
            self.membrane_hist,
            self.nuclei_hist,
            [self.membrane_skewness,
             self.nuclei_membrane_ratio,
             self.pct_complete_membrane],
        ])

    def to_dict(self) -> dict:
        return {
            "membrane_hist_counts": list(self.membrane_hist_counts),
            "nuclei_hist_counts": list(self.nuclei_hist_counts),
            "membrane_px": self.membrane_px,
            "nuclei_px": self.nuclei_px,
            "n_nuclei": self.n_nuclei,
            "n_complete_membrane": self.n_complete_membrane,
            "ratio_cap": self.ratio_cap,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Her2FeatureVector":
        return cls(
            membrane_hist_counts=tuple(payload["membrane_hist_counts"]),
            nuclei_hist_counts=tuple(payload["nuclei_hist_counts"]),
            membrane_px=int(payload["membrane_px"]),
            nuclei_px=int(payload["nuclei_px"]),
            n_nuclei=int(payload["n_nuclei"]),
            n_complete_membrane=int(payload["n_complete_membrane"]),
            ratio_cap=float(payload.get("ratio_cap", 100.0)),
        )


def _normalize_hist(counts: Sequence[int]) -> np.ndarray:
    arr = np.asarray(counts, dtype=np.float64)
    total = arr.sum()
    return arr / total if total > 0 else arr


def _binned_skewness(counts: Sequence[int]) -> float:
    """Skewness of the luminance distribution from its 16-bin histogram."""
    p = _normalize_hist(counts)
    if p.sum() == 0:
        return 0.0
    centers = (np.arange(HIST_BINS) + 0.5) * (256.0 / HIST_BINS)
    mean = float(np.dot(p, centers))
    var = float(np.dot(p, (centers - mean) ** 2))
    if var == 0.0:
        return 0.0
    return float(np.dot(p, (centers - mean) ** 3)) / var ** 1.5


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an RGB array, as float64 in [0, 255]."""
    rgb = np.asarray(pixels, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _luminance_hist_counts(lum: np.ndarray, mask: np.ndarray) -> tuple[int, ...]:
    counts, _ = np.histogram(lum[mask], bins=HIST_BINS, range=(0.0, 256.0))
    return tuple(int(c) for c in counts)


def _nuclei_mask(region: MembraneRegion) -> np.ndarray:
    mask = np.zeros(region.pixels.shape[:2], dtype=bool)
    for nucleus in region.nuclei:
        mask[nucleus.ys, nucleus.xs] = True
    return mask


def ring_coverage(nucleus: NucleusInstance, membrane_mask: np.ndarray,
                  dilation_px: int = 2) -> float:
    """Fraction of the nucleus's perinuclear ring covered by membrane.

    The ring is the nucleus mask dilated by dilation_px minus the
    nucleus itself; a ring fully outside the region (degenerate) counts
    as uncovered.
    """
    h, w = membrane_mask.shape
    mask = np.zeros((h, w), dtype=bool)
    mask[nucleus.ys, nucleus.xs] = True
    ring = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool),
                                   iterations=dilation_px) & ~mask
    ring_px = int(np.count_nonzero(ring))
    if ring_px == 0:
        return 0.0
    return float(np.count_nonzero(ring & membrane_mask)) / ring_px


def extract_features(region: MembraneRegion,
                     ring_completeness_frac: float = 0.9,
                     ring_dilation_px: int = 2,
                     ratio_cap: float = 100.0) -> Her2FeatureVector:
    """Summarise one region into the fixed HER2 feature vector.

    A nucleus has complete membrane when at least ring_completeness_frac
    of its perinuclear ring is covered by the membrane mask.
    """
    if not 0.0 < ring_completeness_frac <= 1.0:
        raise ValueError(
            f"ring_completeness_frac must be in (0, 1], got "
            f"{ring_completeness_frac}"
        )
    lum = luminance(region.pixels)
    nuclei_mask = _nuclei_mask(region)
    n_complete = sum(
        1 for nucleus in region.nuclei
        if ring_coverage(nucleus, region.membrane_mask,
                         ring_dilation_px) >= ring_completeness_frac
    )
    return Her2FeatureVector(
        membrane_hist_counts=_luminance_hist_counts(lum, region.membrane_mask),
        nuclei_hist_counts=_luminance_hist_counts(lum, nuclei_mask),
        membrane_px=int(np.count_nonzero(region.membrane_mask)),
        nuclei_px=int(np.count_nonzero(nuclei_mask)),
        n_nuclei=len(region.nuclei),
        n_complete_membrane=n_complete,
        ratio_cap=ratio_cap,
    )


def pool_features(features: Sequence[Her2FeatureVector]) -> Her2FeatureVector:
    """Combine region vectors into one slide vector by summing raw counts."""
    if len(features) == 0:
        raise EmptyInput("cannot pool zero feature vectors")
    caps = {f.ratio_cap for f in features}
    if len(caps) != 1:
        raise ValueError(f"mixed ratio caps {sorted(caps)} cannot pool")
    return Her2FeatureVector(
        membrane_hist_counts=tuple(
            int(s) for s in np.sum([f.membrane_hist_counts for f in features],
                                   axis=0)),
        nuclei_hist_counts=tuple(
            int(s) for s in np.sum([f.nuclei_hist_counts for f in features],
                                   axis=0)),
        membrane_px=sum(f.membrane_px for f in features),
        nuclei_px=sum(f.nuclei_px for f in features),
        n_nuclei=sum(f.n_nuclei for f in features),
        n_complete_membrane=sum(f.n_complete_membrane for f in features),
        ratio_cap=caps.pop(),
    )


FEATURE_CSV_FIELDS = (
    ("region_id",)
    + tuple(f"membrane_hist_{i}" for i in range(HIST_BINS))
    + tuple(f"nuclei_hist_{i}" for i in range(HIST_BINS))
    + ("membrane_px", "nuclei_px", "n_nuclei", "n_complete_membrane",
       "ratio_cap", "label")
)


def write_feature_csv(path: str | Path,
                      rows: Sequence[tuple[str, Her2FeatureVector,
                                           Her2Score | None]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FEATURE_CSV_FIELDS)
        writer.writeheader()
        for region_id, vec, label in rows:
            row = {"region_id": region_id,
                   "membrane_px": vec.membrane_px,
                   "nuclei_px": vec.nuclei_px,
                   "n_nuclei": vec.n_nuclei,
                   "n_complete_membrane": vec.n_complete_membrane,
                   "ratio_cap": repr(vec.ratio_cap),
                   "label": label.value if label is not None else ""}
            for i in range(HIST_BINS):
                row[f"membrane_hist_{i}"] = vec.membrane_hist_counts[i]
                row[f"nuclei_hist_{i}"] = vec.nuclei_hist_counts[i]
            writer.writerow(row)


def read_feature_csv(path: str | Path
                     ) -> list[tuple[str, Her2FeatureVector,
                                     Her2Score | None]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURE_CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"feature CSV missing columns {sorted(missing)}")
        for row in reader:
            vec = Her2FeatureVector(
                membrane_hist_counts=tuple(
                    int(row[f"membrane_hist_{i}"]) for i in range(HIST_BINS)),
                nuclei_hist_counts=tuple(
                    int(row[f"nuclei_hist_{i}"]) for i in range(HIST_BINS)),
                membrane_px=int(row["membrane_px"]),
                nuclei_px=int(row["nuclei_px"]),
                n_nuclei=int(row["n_nuclei"]),
                n_complete_membrane=int(row["n_complete_membrane"]),
                ratio_cap=float(row["ratio_cap"]),
            )
            label = Her2Score(row["label"]) if row["label"] else None
            out.append((row["region_id"], vec, label))
    return out


def train_rf(dataset: Sequence[tuple[Her2FeatureVector, Her2Score]],
             config: ForestConfig | None = None,
             k_folds: int = 5,
             seed: int = 0) -> tuple[RandomForest, dict]:
    """Train the HER2 forest with k-fold cross-validated quadratic kappa.

    Folds are a seeded permutation split; each fold's held-out
    predictions contribute to a per-fold kappa over the full 4-class
    ordinal scale. The returned model is refit on all data. Reruns with
    identical inputs and seed are byte-identical.
    """
    if len(dataset) == 0:
        raise DegenerateDataset("empty HER2 training set")
    labels = {label for _, label in dataset}
    if len(labels) < 2:
        raise DegenerateDataset(
            f"training set has a single class {labels.pop().value!r}"
        )
    if k_folds < 2:
        raise FoldTooSmall(f"need at least 2 folds, got {k_folds}")
    if k_folds > len(dataset):
        raise FoldTooSmall(
            f"{k_folds} folds but only {len(dataset)} samples"
        )
    config = config or ForestConfig()
    x = np.vstack([vec.as_array() for vec, _ in dataset])
    y = np.array([label.index for _, label in dataset], dtype=np.int64)

    root = np.random.SeedSequence(seed)
    fold_seed_root, final_seed_seq, shuffle_seq = root.spawn(3)
    order = np.random.default_rng(shuffle_seq).permutation(len(dataset))
    folds = np.array_split(order, k_folds)
    fold_seeds = fold_seed_root.spawn(k_folds)

    fold_kappas = []
    for fold, fold_seq in zip(folds, fold_seeds):
        held = np.zeros(len(dataset), dtype=bool)
        held[fold] = True
        model = RandomForest(config, seed=int(fold_seq.generate_state(1)[0]))
        model.fit(x[~held], y[~held], n_classes=len(HER2_CLASSES))
        predicted = model.predict(x[held])
        cm = ConfusionMatrix.from_pairs(
            [HER2_CLASSES[i] for i in y[held]],
            [HER2_CLASSES[i] for i in predicted],
            labels=list(HER2_CLASSES),
        )
        fold_kappas.append(quadratic_kappa(cm))

    final = RandomForest(config,
                         seed=int(final_seed_seq.generate_state(1)[0]))
    final.fit(x, y, n_classes=len(HER2_CLASSES))

    class_counts = {c: int(np.count_nonzero(y == i))
                    for i, c in enumerate(HER2_CLASSES)}
    report = {
        "seed": seed,
        "k_folds": k_folds,
        "n_samples": len(dataset),
        "class_counts": class_counts,
        "fold_kappas": fold_kappas,
        "kappa_mean": float(np.mean(fold_kappas)),
        "kappa_min": float(np.min(fold_kappas)),
        "kappa_std": float(np.std(fold_kappas)),
    }
    return final, report


def predict_her2(model: RandomForest,
                 features: Sequence[Her2FeatureVector],
                 slide_mode: str = "pool"
                 ) -> tuple[list[Her2Score], Her2Score]:
    """Per-region HER2 scores plus one slide-level score.

    Slide aggregation defaults to pooling the region feature vectors and
    classifying the pooled vector, i.e. scoring the union region;
    "vote" instead takes a majority of region scores, ties toward the
    lower grade.
    """
    if len(features) == 0:
        raise EmptyInput("no regions to score")
    if slide_mode not in ("pool", "vote"):
        raise ValueError(f"unknown slide_mode {slide_mode!r}")
    x = np.vstack([vec.as_array() for vec in features])
    per_region = [Her2Score.from_index(int(i)) for i in model.predict(x)]
    if slide_mode == "pool":
        pooled = pool_features(features)
        slide = Her2Score.from_index(
            int(model.predict(pooled.as_array()[None, :])[0]))
    else:
        tally = np.zeros(len(HER2_CLASSES), dtype=np.int64)
        for score in per_region:
            tally[score.index] += 1
        slide = Her2Score.from_index(int(np.argmax(tally)))
    return per_region, slide


def save_model(model: RandomForest, path: str | Path) -> None:
    payload = {
        "version": MODEL_SCHEMA_VERSION,
        "classes": list(HER2_CLASSES),
        "forest": model.to_dict(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path: str | Path) -> RandomForest:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {payload.get('version')!r}")
    if tuple(payload.get("classes", ())) != HER2_CLASSES:
        raise ValueError(f"model classes {payload.get('classes')} do not "
                         f"match {list(HER2_CLASSES)}")
    return RandomForest.from_dict(payload["forest"])
