"""Agreement and evaluation metrics for categorical and pixel outputs.

Covers percentage agreement between raters, confusion matrices,
one-vs-rest precision/recall/F1/IoU, ROC AUC via the rank statistic,
quadratically weighted kappa for ordinal scales, and strict-majority
consensus with an explicit unresolved outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateMarginals,
    DimensionMismatch,
    EmptyInput,
    EmptyMatrix,
    EmptyVotes,
    LengthMismatch,
    SingleClass,
)

# Sentinel category returned when a vote has no strict majority.
UNRESOLVED = "unresolved"


def percentage_agreement(a: Sequence, b: Sequence) -> float:
    """Share of positions where the two label lists agree, in percent."""
    if len(a) != len(b):
        raise LengthMismatch(f"label lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise EmptyInput("percentage agreement of empty lists is undefined")
    hits = sum(1 for x, y in zip(a, b) if x == y)
    return 100.0 * hits / len(a)


def consensus_label(votes: Sequence[Hashable]) -> Hashable:
    """Label holding a strict majority of votes, else UNRESOLVED.

    Strict majority means more than half the votes; a plurality that
    does not clear half (including exact ties) is not adjudicated.
    """
    if len(votes) == 0:
        raise EmptyVotes("cannot form a consensus from zero votes")
    counts: dict[Hashable, int] = {}
    for v in votes:
        counts[v] = counts.get(v, 0) + 1
    best, best_count = max(counts.items(), key=lambda kv: kv[1])
    if best_count * 2 > len(votes):
        return best
    return UNRESOLVED


@dataclass
class ConfusionMatrix:
    """Row = truth, column = prediction, over a fixed label order."""

    labels: list
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise DimensionMismatch(
                f"confusion counts {self.counts.shape} do not match "
                f"{k} labels"
            )

    @classmethod
    def from_pairs(cls, truth: Sequence, predicted: Sequence,
                   labels: Sequence | None = None) -> "ConfusionMatrix":
        if len(truth) != len(predicted):
            raise LengthMismatch(
                f"truth and prediction lengths differ: {len(truth)} vs "
                f"{len(predicted)}"
            )
        if labels is None:
            labels = sorted(set(truth) | set(predicted), key=str)
        labels = list(labels)
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(truth, predicted):
            if t not in index or p not in index:
                unknown = t if t not in index else p
                raise ValueError(f"label {unknown!r} not in {labels}")
            counts[index[t], index[p]] += 1
        return cls(labels=labels, counts=counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyMatrix("confusion matrix has no observations")
        return float(np.trace(self.counts) / self.total)

    def per_class(self) -> dict:
        """One-vs-rest precision, recall, F1, and IoU per label."""
        out = {}
        for i, label in enumerate(self.labels):
            tp = int(self.counts[i, i])
            fp = int(self.counts[:, i].sum() - tp)
            fn = int(self.counts[i, :].sum() - tp)
            out[label] = {
                "precision": _ratio(tp, tp + fp),
                "recall": _ratio(tp, tp + fn),
                "f1": _ratio(2 * tp, 2 * tp + fp + fn),
                "iou": _ratio(tp, tp + fp + fn),
                "support": tp + fn,
            }
        return out

    def to_dict(self) -> dict:
        return {"labels": [str(l) for l in self.labels],
                "counts": self.counts.tolist()}

    def to_text(self) -> str:
        names = [str(l) for l in self.labels]
        width = max(len(n) for n in names + ["truth\\pred"])
        width = max(width, len(str(int(self.counts.max(initial=0)))))
        head = " ".join(n.rjust(width) for n in ["truth\\pred"] + names)
        lines = [head]
        for name, row in zip(names, self.counts):
            cells = " ".join(str(int(v)).rjust(width) for v in row)
            lines.append(f"{name.rjust(width)} {cells}")
        return "\n".join(lines)


def _ratio(num: float, den: float) -> float:
    # Empty denominators mean "nothing to get wrong": report 1.0, so a
    # prediction identical to an empty truth scores perfect, not NaN.
    return float(num / den) if den else 1.0


def binary_pixel_metrics(predicted: np.ndarray, truth: np.ndarray) -> dict:
    """IoU, precision, recall, sensitivity, specificity, F1 of two masks."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DimensionMismatch(
            f"mask shapes differ: {predicted.shape} vs {truth.shape}"
        )
    p = predicted.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    recall = _ratio(tp, tp + fn)
    return {
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "iou": _ratio(tp, tp + fp + fn),
        "precision": _ratio(tp, tp + fp),
        "recall": recall,
        "sensitivity": recall,
        "specificity": _ratio(tn, tn + fp),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
    }


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve by the Mann-Whitney statistic.

    Equals the probability that a random positive outscores a random
    negative, with ties credited one half, so identical scores for all
    samples give exactly 0.5.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatch(
            f"scores and labels differ in length: {scores.shape} vs "
            f"{labels.shape}"
        )
    if scores.size == 0:
        raise EmptyInput("cannot compute AUC of an empty sample")
    pos = labels == 1
    n_pos = int(np.count_nonzero(pos))
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both a positive and a negative class")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def quadratic_kappa(confusion: ConfusionMatrix | np.ndarray) -> float:
    """Cohen's kappa with quadratic penalty weights for ordinal labels.

    Disagreements are penalised by the squared distance between the two
    label indices, normalised so the largest possible disagreement
    weighs 1. Chance agreement comes from the marginal products.
    """
    counts = confusion.counts if isinstance(confusion, ConfusionMatrix) \
        else np.asarray(confusion, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise DimensionMismatch(f"confusion matrix must be square, got "
                                f"{counts.shape}")
    k = counts.shape[0]
    total = counts.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    if k < 2:
        raise DegenerateMarginals("kappa needs at least two classes")
    observed = counts / total
    rows = observed.sum(axis=1)
    cols = observed.sum(axis=0)
    expected = np.outer(rows, cols)
    idx = np.arange(k)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    expected_penalty = float((weights * expected).sum())
    if expected_penalty == 0.0:
        raise DegenerateMarginals(
            "marginals concentrate on a single class; kappa is undefined"
        )
    return 1.0 - float((weights * observed).sum()) / expected_penalty


def agreement_matrix(raters: Mapping[str, Sequence],
                     algorithm: Sequence,
                     algorithm_name: str = "algorithm") -> dict:
    """Pairwise percentage agreement among raters and the algorithm.

    Also attaches a confusion matrix of each rater (as truth) against
    the algorithm. All label lists must be the same length.
    """
    names = sorted(raters)
    if algorithm_name in names:
        raise ValueError(f"rater name {algorithm_name!r} is reserved")
    columns = {name: list(raters[name]) for name in names}
    columns[algorithm_name] = list(algorithm)
    names.append(algorithm_name)
    lengths = {name: len(col) for name, col in columns.items()}
    if len(set(lengths.values())) > 1:
        raise LengthMismatch(f"label lists differ in length: {lengths}")

    table = [[percentage_agreement(columns[a], columns[b]) for b in names]
             for a in names]
    confusions = {
        name: ConfusionMatrix.from_pairs(columns[name],
                                         columns[algorithm_name]).to_dict()
        for name in names if name != algorithm_name
    }
    return {"names": names, "pa": table, "confusion_vs_algorithm": confusions}


def evaluation_report(truth: Sequence, predicted: Sequence,
                      labels: Sequence | None = None,
                      ordinal: bool = False) -> dict:
    """Bundle PA, confusion, per-class scores, and optionally kappa."""
    cm = ConfusionMatrix.from_pairs(truth, predicted, labels=labels)
    report = {
        "n": cm.total,
        "percentage_agreement": percentage_agreement(list(truth),
                                                     list(predicted)),
        "accuracy": cm.accuracy(),
        "confusion": cm.to_dict(),
        "per_class": {str(k): v for k, v in cm.per_class().items()},
    }
    if ordinal and len(cm.labels) >= 2:
        try:
            report["quadratic_kappa"] = quadratic_kappa(cm)
        except DegenerateMarginals:
            report["quadratic_kappa"] = None
    return report
