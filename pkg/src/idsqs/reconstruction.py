"""Bias-corrected, consistency-weighted quality-scale reconstruction.

The estimator alternates three closed-form updates until the score table
stabilizes: per-subject bias (mean deviation of the subject's ratings
from the current scale), per-subject consistency (inverse variance of
the residuals left after removing scale and bias), and the scale itself
(consistency-weighted mean of bias-corrected ratings). No rating is ever
discarded; inconsistent subjects are merely down-weighted.

DMOS subtracts each source's pristine-image score from the scale, and
bootstrap resampling of the per-question ratings yields empirical
confidence intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Question, RatingTable, Stimulus

# Subjects whose residuals collapse to zero would get infinite weight;
# their variance is floored at half a score point squared.
VARIANCE_FLOOR = 0.25


class NoRatings(ValueError):
    def __init__(self, question_id: str):
        super().__init__(f"question {question_id} has no ratings")
        self.question_id = question_id


class MissingReferenceMos(KeyError):
    def __init__(self, source_id: str):
        super().__init__(f"source {source_id} has no pristine (level 0) score")
        self.source_id = source_id


@dataclass(frozen=True)
class ReconstructionResult:
    mos: dict[str, float]  # question_id -> reconstructed score
    bias: dict[str, float]  # subject_id -> score-unit bias
    consistency: dict[str, float]  # subject_id -> inverse residual variance
    residual_sd: dict[str, float]  # subject_id -> raw residual sd
    iterations: int
    converged: bool


@dataclass(frozen=True)
class DmosTable:
    dmos: dict[str, float]  # stimulus key -> DMOS
    reference_mos: dict[str, float]  # source_id -> pristine-image MOS


@dataclass(frozen=True)
class StimulusInterval:
    point: float
    lo: float
    hi: float


@dataclass(frozen=True)
class BootstrapCI:
    intervals: dict[str, StimulusInterval]  # stimulus key -> interval
    replicates: int
    level: float
    seed: int
    failed_replicates: int = 0
    replicate_dmos: dict[str, tuple[float, ...]] | None = None  # kept on request


@dataclass
class _Observations:
    """Index-encoded rating triples; duplicates (from resampling) allowed."""

    subject_ids: list[str]
    question_ids: list[str]
    subject_idx: np.ndarray
    question_idx: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_table(cls, table: RatingTable) -> "_Observations":
        subject_ids = sorted({r.subject_id for r in table.ratings})
        question_ids = sorted(table.questions)
        rated = {r.question_id for r in table.ratings}
        for question_id in question_ids:
            if question_id not in rated:
                raise NoRatings(question_id)
        s_index = {sid: i for i, sid in enumerate(subject_ids)}
        q_index = {qid: i for i, qid in enumerate(question_ids)}
        return cls(
            subject_ids=subject_ids,
            question_ids=question_ids,
            subject_idx=np.fromiter((s_index[r.subject_id] for r in table.ratings), dtype=np.int64),
            question_idx=np.fromiter((q_index[r.question_id] for r in table.ratings), dtype=np.int64),
            scores=np.fromiter((r.score for r in table.ratings), dtype=float),
        )


def _iterate(obs: _Observations, epsilon: float, max_iter: int):
    n_subjects = len(obs.subject_ids)
    n_questions = len(obs.question_ids)
    if obs.scores.size == 0:
        raise ValueError("empty rating table")

    # resampled inputs may drop a subject entirely; guard those divisions
    per_subject = np.maximum(
        np.bincount(obs.subject_idx, minlength=n_subjects).astype(float), 1.0
    )
    per_question = np.bincount(obs.question_idx, minlength=n_questions).astype(float)

    mos = np.bincount(obs.question_idx, weights=obs.scores, minlength=n_questions) / per_question
    bias = np.zeros(n_subjects)
    variance = np.full(n_subjects, VARIANCE_FLOOR)
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        deviation = obs.scores - mos[obs.question_idx]
        bias = np.bincount(obs.subject_idx, weights=deviation, minlength=n_subjects) / per_subject
        residual = deviation - bias[obs.subject_idx]
        variance = (
            np.bincount(obs.subject_idx, weights=residual**2, minlength=n_subjects) / per_subject
        )
        weight = 1.0 / np.maximum(variance, VARIANCE_FLOOR)
        w_obs = weight[obs.subject_idx]
        corrected = obs.scores - bias[obs.subject_idx]
        new_mos = np.bincount(
            obs.question_idx, weights=w_obs * corrected, minlength=n_questions
        ) / np.bincount(obs.question_idx, weights=w_obs, minlength=n_questions)
        drift = float(((new_mos - mos) ** 2).sum())
        mos = new_mos
        if drift < epsilon:
            converged = True
            break

    return mos, bias, variance, iterations, converged


def reconstruct(table: RatingTable, epsilon: float = 1e-6, max_iter: int = 1000) -> ReconstructionResult:
    """Run the iterative estimator to its fixed point.

    The scale starts at the raw per-question mean. A result is returned
    even when the drift criterion is not met within `max_iter`; the
    `converged` flag records which case occurred.
    """
    obs = _Observations.from_table(table)
    mos, bias, variance, iterations, converged = _iterate(obs, epsilon, max_iter)
    return ReconstructionResult(
        mos={qid: float(mos[i]) for i, qid in enumerate(obs.question_ids)},
        bias={sid: float(bias[i]) for i, sid in enumerate(obs.subject_ids)},
        consistency={
            sid: float(1.0 / max(variance[i], VARIANCE_FLOOR))
            for i, sid in enumerate(obs.subject_ids)
        },
        residual_sd={sid: float(np.sqrt(variance[i])) for i, sid in enumerate(obs.subject_ids)},
        iterations=iterations,
        converged=converged,
    )


def compute_dmos(result: ReconstructionResult, questions: dict[str, Question]) -> DmosTable:
    """Subtract each source's pristine score from its stimuli's scores.

    A stimulus appearing in several questions first gets the mean of its
    question scores. Pristine scores come from whatever questions tested
    the level-0 stimulus (self-pair traps or level-0 study questions).
    """
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for question_id, value in result.mos.items():
        key = questions[question_id].test.key
        sums[key] = sums.get(key, 0.0) + value
        counts[key] = counts.get(key, 0) + 1
    per_stimulus = {key: sums[key] / counts[key] for key in sums}

    reference_mos: dict[str, float] = {}
    for key, value in per_stimulus.items():
        stimulus = Stimulus.from_key(key)
        if stimulus.distortion_level == 0:
            reference_mos[stimulus.source_id] = value

    dmos: dict[str, float] = {}
    for key, value in per_stimulus.items():
        source_id = Stimulus.from_key(key).source_id
        if source_id not in reference_mos:
            raise MissingReferenceMos(source_id)
        dmos[key] = value - reference_mos[source_id]
    return DmosTable(dmos=dmos, reference_mos=reference_mos)


def bootstrap_ci(
    table: RatingTable,
    replicates: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    epsilon: float = 1e-6,
    max_iter: int = 1000,
    keep_replicates: bool = False,
) -> BootstrapCI:
    """Per-stimulus DMOS intervals from per-question resampling.

    Each replicate redraws every question's ratings with replacement
    (subject identity travels with the rating, so bias and consistency
    stay estimable), reruns the full reconstruction, and contributes one
    DMOS value per stimulus. Interval bounds are the empirical quantiles
    at (1 - level)/2 and (1 + level)/2. Replicate r uses an RNG stream
    derived from (seed, r) only, so results are reproducible bit for bit
    regardless of scheduling.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be inside (0, 1)")
    obs = _Observations.from_table(table)
    point = compute_dmos(reconstruct(table, epsilon, max_iter), table.questions)

    by_question = [
        np.flatnonzero(obs.question_idx == q) for q in range(len(obs.question_ids))
    ]
    stimulus_keys = sorted(point.dmos)
    replicate_dmos = np.empty((replicates, len(stimulus_keys)))
    failed = 0

    streams = np.random.SeedSequence(seed).spawn(replicates)
    for r in range(replicates):
        rng = np.random.default_rng(streams[r])
        take = np.concatenate(
            [indices[rng.integers(0, indices.size, size=indices.size)] for indices in by_question]
        )
        resampled = _Observations(
            subject_ids=obs.subject_ids,
            question_ids=obs.question_ids,
            subject_idx=obs.subject_idx[take],
            question_idx=obs.question_idx[take],
            scores=obs.scores[take],
        )
        mos, _, _, _, converged = _iterate(resampled, epsilon, max_iter)
        if not converged:
            failed += 1

        result = ReconstructionResult(
            mos={qid: float(mos[i]) for i, qid in enumerate(obs.question_ids)},
            bias={},
            consistency={},
            residual_sd={},
            iterations=0,
            converged=converged,
        )
        dmos = compute_dmos(result, table.questions)
        replicate_dmos[r] = [dmos.dmos[key] for key in stimulus_keys]

    lo_q = (1.0 - level) / 2.0
    hi_q = (1.0 + level) / 2.0
    lo = np.quantile(replicate_dmos, lo_q, axis=0)
    hi = np.quantile(replicate_dmos, hi_q, axis=0)
    intervals = {
        key: StimulusInterval(point=point.dmos[key], lo=float(lo[i]), hi=float(hi[i]))
        for i, key in enumerate(stimulus_keys)
    }
    kept = None
    if keep_replicates:
        kept = {
            key: tuple(float(v) for v in replicate_dmos[:, i])
            for i, key in enumerate(stimulus_keys)
        }
    return BootstrapCI(
        intervals=intervals,
        replicates=replicates,
        level=level,
        seed=seed,
        failed_replicates=failed,
        replicate_dmos=kept,
    )
