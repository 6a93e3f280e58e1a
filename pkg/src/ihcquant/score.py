"""Clinical scoring of classified nuclei: Allred (ER/PR) and Ki67 index.

All arithmetic on counts uses exact rationals so bin boundaries behave
identically everywhere: a slide with exactly one third stained lands in
the one-third bin, never on the wrong side of a float rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import EmptySlide
from .stain import MARKERS, StainClass

CATEGORY_POSITIVE = "positive"
CATEGORY_NEGATIVE = "negative"

# Upper edges of the stained-proportion bins for scores 1..4; above the
# last edge scores 5. Edges are inclusive on the right.
DEFAULT_PS_BIN_EDGES = (
    Fraction(1, 100),
    Fraction(1, 10),
    Fraction(1, 3),
    Fraction(2, 3),
)

# Total Allred score at or above which a slide reads positive.
ALLRED_POSITIVE_MIN_TS = 3

# Percentage of stained nuclei at or above which Ki67 reads positive.
KI67_POSITIVE_MIN_PRS = Fraction(15)

INTENSITY_WEIGHTS = {
    StainClass.LIGHT: 1,
    StainClass.MODERATE: 2,
    StainClass.DARK: 3,
}


@dataclass(frozen=True)
class StainCounts:
    """Per-class nucleus counts for one slide and marker.

    n_stained_unspecified holds stained nuclei whose intensity sub-class
    was never graded (Ki67 pipelines may collapse it); intensity scoring
    refuses to guess for those.
    """

    marker: str
    n_unstained: int = 0
    n_light: int = 0
    n_moderate: int = 0
    n_dark: int = 0
    n_stained_unspecified: int = 0

    def __post_init__(self):
        if self.marker not in MARKERS:
            raise ValueError(f"unknown marker {self.marker!r}")
        for name in ("n_unstained", "n_light", "n_moderate", "n_dark",
                     "n_stained_unspecified"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_labels(cls, labels: Sequence[StainClass], marker: str
                    ) -> "StainCounts":
        tally = {cls_: 0 for cls_ in StainClass}
        for label in labels:
            tally[StainClass(label)] += 1
        return cls(
            marker=marker,
            n_unstained=tally[StainClass.UNSTAINED],
            n_light=tally[StainClass.LIGHT],
            n_moderate=tally[StainClass.MODERATE],
            n_dark=tally[StainClass.DARK],
            n_stained_unspecified=tally[StainClass.STAINED],
        )

    @property
    def n_stained(self) -> int:
        return (self.n_light + self.n_moderate + self.n_dark
                + self.n_stained_unspecified)

    @property
    def total(self) -> int:
        return self.n_unstained + self.n_stained

    def to_dict(self) -> dict:
        return {
            "marker": self.marker,
            "unstained": self.n_unstained,
            "light": self.n_light,
            "moderate": self.n_moderate,
            "dark": self.n_dark,
            "stained_unspecified": self.n_stained_unspecified,
            "stained": self.n_stained,
            "total": self.total,
        }


@dataclass(frozen=True)
class AllredScore:
    intensity_score: int
    proportion_score: int
    total_score: int
    category: str

    def to_dict(self) -> dict:
        return {"IS": self.intensity_score, "PS": self.proportion_score,
                "TS": self.total_score, "category": self.category}


@dataclass(frozen=True)
class ProliferationScore:
    prs: float
    category: str

    def to_dict(self) -> dict:
        return {"PRS": self.prs, "category": self.category}


def _require_nuclei(counts: StainCounts) -> None:
    if counts.total == 0:
        raise EmptySlide("no nuclei to score; check ROI and detection")


def proportion_score(counts: StainCounts,
                     bin_edges: Sequence[Fraction | float] | None = None
                     ) -> int:
    """Allred proportion score 0..5 from the stained fraction.

    Zero stained nuclei score 0; otherwise the fraction is binned by
    the right-inclusive edges (defaults: 1%, 10%, 1/3, 2/3).
    """
    _require_nuclei(counts)
    if bin_edges is None:
        bin_edges = DEFAULT_PS_BIN_EDGES
    edges = [Fraction(e) for e in bin_edges]
    if len(edges) != 4 or sorted(edges) != edges or len(set(edges)) != 4:
        raise ValueError(f"need 4 strictly increasing bin edges, got {edges}")
    if not (0 < edges[0] and edges[-1] < 1):
        raise ValueError(f"bin edges must lie strictly inside (0, 1): {edges}")
    if counts.n_stained == 0:
        return 0
    fraction = Fraction(counts.n_stained, counts.total)
    for score, edge in enumerate(edges, start=1):
        if fraction <= edge:
            return score
    return 5


def intensity_score(counts: StainCounts) -> int:
    """Allred intensity score 0..3: rounded mean intensity of stained nuclei.

    Light, moderate, and dark weigh 1, 2, 3; the weighted mean rounds
    half up. No stained nuclei score 0.
    """
    _require_nuclei(counts)
    if counts.n_stained == 0:
        return 0
    if counts.n_stained_unspecified > 0:
        raise ValueError(
            "intensity score needs light/moderate/dark sub-classes; "
            f"{counts.n_stained_unspecified} stained nuclei are ungraded"
        )
    weighted = (INTENSITY_WEIGHTS[StainClass.LIGHT] * counts.n_light
                + INTENSITY_WEIGHTS[StainClass.MODERATE] * counts.n_moderate
                + INTENSITY_WEIGHTS[StainClass.DARK] * counts.n_dark)
    mean = Fraction(weighted, counts.n_stained)
    # floor(mean + 1/2) is round-half-up for the positive rationals here
    return int(mean + Fraction(1, 2))


def allred(counts: StainCounts,
           bin_edges: Sequence[Fraction | float] | None = None) -> AllredScore:
    """Total Allred score and the positive/negative call for ER or PR."""
    if counts.marker not in ("er", "pr"):
        raise ValueError(f"Allred applies to er/pr, not {counts.marker!r}")
    ps = proportion_score(counts, bin_edges)
    strength = intensity_score(counts)
    ts = strength + ps
    category = CATEGORY_POSITIVE if ts >= ALLRED_POSITIVE_MIN_TS \
        else CATEGORY_NEGATIVE
    return AllredScore(intensity_score=strength, proportion_score=ps,
                       total_score=ts, category=category)


def ki67_prs(counts: StainCounts) -> ProliferationScore:
    """Ki67 proliferation rate: percent stained, positive at 15 or more."""
    if counts.marker != "ki67":
        raise ValueError(f"PRS applies to ki67, not {counts.marker!r}")
    _require_nuclei(counts)
    rate = Fraction(100 * counts.n_stained, counts.total)
    category = CATEGORY_POSITIVE if rate >= KI67_POSITIVE_MIN_PRS \
        else CATEGORY_NEGATIVE
    return ProliferationScore(prs=float(rate), category=category)


@dataclass
class SlideScore:
    """Scoring result for one slide with the audit trail that produced it."""

    slide_id: str
    marker: str
    counts: StainCounts
    allred: AllredScore | None = None
    proliferation: ProliferationScore | None = None
    audit: dict | None = None

    @property
    def category(self) -> str:
        if self.allred is not None:
            return self.allred.category
        if self.proliferation is not None:
            return self.proliferation.category
        raise ValueError("slide has no score")

    def to_dict(self) -> dict:
        out = {
            "slide_id": self.slide_id,
            "marker": self.marker,
            "counts": self.counts.to_dict(),
            "category": self.category,
        }
        if self.allred is not None:
            out["allred"] = self.allred.to_dict()
        if self.proliferation is not None:
            out["ki67"] = self.proliferation.to_dict()
        if self.audit is not None:
            out["audit"] = self.audit
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)


def score_counts(counts: StainCounts, slide_id: str = "",
                 bin_edges: Sequence[Fraction | float] | None = None,
                 audit: dict | None = None) -> SlideScore:
    """Score a finished count table with the marker-appropriate system."""
    if counts.marker == "ki67":
        return SlideScore(slide_id=slide_id, marker=counts.marker,
                          counts=counts, proliferation=ki67_prs(counts),
                          audit=audit)
    return SlideScore(slide_id=slide_id, marker=counts.marker, counts=counts,
                      allred=allred(counts, bin_edges), audit=audit)


CSV_FIELDS = ("slide_id", "marker", "IS", "PS", "TS", "PRS", "her2",
              "category", "rater_id")


def score_csv_row(score: SlideScore, rater_id: str = "algorithm") -> dict:
    """Columns for the batch results table; blanks where inapplicable."""
    row = {field: "" for field in CSV_FIELDS}
    row["slide_id"] = score.slide_id
    row["marker"] = score.marker
    row["category"] = score.category
    row["rater_id"] = rater_id
    if score.allred is not None:
        row["IS"] = str(score.allred.intensity_score)
        row["PS"] = str(score.allred.proportion_score)
        row["TS"] = str(score.allred.total_score)
    if score.proliferation is not None:
        row["PRS"] = repr(score.proliferation.prs)
    return row
