"""Batch-instance screening: trap-question cleansing and outlier removal.

Both checks work per batch instance, not per subject, since behavior can
change between a subject's first and second batch. Cleansing scores every
instance by its mean trap accuracy and splits the population at the Otsu
threshold of those accuracies. Outlier removal then compares each
surviving instance's scores against the per-question mean scores of the
survivors and drops instances whose agreement falls below
min(mean - sd, 0.85) of the population agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import QuestionKind, RatingTable
from .numerics import DegenerateInput, otsu_threshold, pearson, spearman

OUTLIER_CORRELATION_CAP = 0.85


class NotATrap(ValueError):
    def __init__(self, kind: QuestionKind):
        super().__init__(f"{kind.value} is not a trap kind")
        self.kind = kind


class NoTrapQuestions(ValueError):
    def __init__(self, instance_id: str):
        super().__init__(f"batch instance {instance_id} contains no trap ratings")
        self.instance_id = instance_id


@dataclass(frozen=True)
class CleansingReport:
    threshold: float
    per_instance_accuracy: dict[str, float]
    kept: frozenset[str]
    discarded: frozenset[str]


@dataclass(frozen=True)
class OutlierReport:
    per_instance_cr: dict[str, float]
    mu: float
    sigma: float
    cutoff: float
    kept: frozenset[str]
    removed: frozenset[str]
    degenerate: frozenset[str] = frozenset()


def trap_accuracy(score: float, kind: QuestionKind) -> float:
    """Accuracy of one trap response on the unit scale.

    A most-distorted pair should be scored near 100, a self-pair near 0;
    accuracy is the scaled distance from the wrong end.
    """
    if kind is QuestionKind.TRAP_I:
        return score / 100.0
    if kind is QuestionKind.TRAP_II:
        return 1.0 - score / 100.0
    raise NotATrap(kind)


def cleanse(table: RatingTable, bins: int = 100) -> CleansingReport:
    """Split instances into reliable/unreliable by trap accuracy.

    Every instance must contain at least one trap rating. Instances whose
    mean accuracy falls strictly below the Otsu threshold of all instance
    accuracies are discarded. A population with identical accuracies has
    no threshold; the DegenerateInput raised by the kernel propagates so
    the caller can decide to skip cleansing.
    """
    accuracies: dict[str, float] = {}
    for instance_id in table.instances:
        values = [
            trap_accuracy(r.score, table.questions[r.question_id].kind)
            for r in table.instance_ratings(instance_id)
            if table.questions[r.question_id].kind is not QuestionKind.STUDY
        ]
        if not values:
            raise NoTrapQuestions(instance_id)
        accuracies[instance_id] = float(np.mean(values))

    threshold = otsu_threshold(list(accuracies.values()), bins=bins)
    kept = frozenset(i for i, a in accuracies.items() if a >= threshold)
    discarded = frozenset(i for i, a in accuracies.items() if a < threshold)
    return CleansingReport(
        threshold=threshold,
        per_instance_accuracy=accuracies,
        kept=kept,
        discarded=discarded,
    )


def remove_outliers(table: RatingTable, kept: set[str] | frozenset[str]) -> OutlierReport:
    """Drop instances that disagree with the consensus of the kept set.

    Consensus is the plain per-question mean over kept instances
    (including the instance under test; with dozens of ratings per
    question the self-influence is negligible). An instance's agreement
    is min(pearson, spearman) between its scores and the consensus on
    the questions it answered. Instances with constant scores cannot be
    correlated and are treated as maximally uninformative (agreement 0)
    rather than aborting the run.
    """
    if not kept:
        raise ValueError("kept set must be non-empty")

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for instance_id in kept:
        for rating in table.instance_ratings(instance_id):
            sums[rating.question_id] = sums.get(rating.question_id, 0.0) + rating.score
            counts[rating.question_id] = counts.get(rating.question_id, 0) + 1
    consensus = {qid: sums[qid] / counts[qid] for qid in sums}

    per_instance_cr: dict[str, float] = {}
    degenerate: set[str] = set()
    for instance_id in sorted(kept):
        ratings = table.instance_ratings(instance_id)
        scores = [r.score for r in ratings]
        means = [consensus[r.question_id] for r in ratings]
        try:
            cr = min(pearson(scores, means), spearman(scores, means))
        except DegenerateInput:
            cr = 0.0
            degenerate.add(instance_id)
        per_instance_cr[instance_id] = cr

    values = np.array(list(per_instance_cr.values()))
    mu = float(values.mean())
    sigma = float(values.std())
    cutoff = min(mu - sigma, OUTLIER_CORRELATION_CAP)
    removed = frozenset(i for i, cr in per_instance_cr.items() if cr < cutoff)
    return OutlierReport(
        per_instance_cr=per_instance_cr,
        mu=mu,
        sigma=sigma,
        cutoff=cutoff,
        kept=frozenset(kept) - removed,
        removed=removed,
        degenerate=frozenset(degenerate),
    )
