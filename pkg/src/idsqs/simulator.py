"""Synthetic rating populations with known ground truth.

The generator mirrors the additive model the reconstruction stage
assumes: a diligent rater reports the true quality plus a personal bias
plus zero-mean noise, clipped to the 0..100 scale; a random clicker
reports uniform noise. Known truth makes recovery errors measurable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .domain import Question, Rating, RatingTable, Stimulus, StudyConfig
from .numerics import DegenerateInput, pearson


class CoverageGap(KeyError):
    def __init__(self, stimulus_key: str):
        super().__init__(stimulus_key)
        self.stimulus_key = stimulus_key


class RaterKind(str, Enum):
    DILIGENT = "DILIGENT"
    RANDOM_CLICKER = "RANDOM_CLICKER"


@dataclass(frozen=True)
class RaterProfile:
    kind: RaterKind
    bias: float = 0.0
    residual_sd: float = 0.0
    attention: float | None = None

    def effective_attention(self) -> float:
        """Probability of a diligent response on any one question.

        Clickers always answer uniformly; diligent raters default to full
        attention unless the profile dials it down.
        """
        if self.kind is RaterKind.RANDOM_CLICKER:
            return 0.0
        return 1.0 if self.attention is None else self.attention


@dataclass
class GroundTruth:
    true_quality: dict[str, float]  # stimulus key -> quality on 0..100
    profiles: dict[str, RaterProfile]

    def check(self) -> None:
        by_curve: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for key, quality in self.true_quality.items():
            stimulus = Stimulus.from_key(key)
            if stimulus.distortion_level == 0 and quality != 0.0:
                raise ValueError(f"pristine stimulus {key} must have true quality 0")
            by_curve.setdefault((stimulus.source_id, stimulus.codec.value), []).append(
                (stimulus.distortion_level, quality)
            )
        for curve, points in by_curve.items():
            points.sort()
            for (_, lo), (_, hi) in zip(points, points[1:]):
                if hi < lo:
                    raise ValueError(f"true quality not monotone for {curve}")


def default_truth(config: StudyConfig, level_step: float = 10.0) -> dict[str, float]:
    """Quality grid rising by `level_step` per distortion level.

    The default step of 10 spreads ten levels over the whole 0..100 scale,
    mirroring stimuli prepared at roughly equal perceptual spacing.
    """
    truth: dict[str, float] = {}
    for question in config.question_pool().values():
        for stimulus in (question.reference, question.test):
            truth[stimulus.key] = level_step * stimulus.distortion_level
    return truth


def default_profiles(
    n_diligent: int,
    n_clickers: int = 0,
    bias_sd: float = 5.0,
    residual_sd_range: tuple[float, float] = (2.0, 15.0),
    seed: int = 0,
) -> dict[str, RaterProfile]:
    rng = np.random.default_rng(seed)
    profiles: dict[str, RaterProfile] = {}
    for i in range(n_diligent):
        profiles[f"worker-{i:04d}"] = RaterProfile(
            kind=RaterKind.DILIGENT,
            bias=float(rng.normal(0.0, bias_sd)),
            residual_sd=float(rng.uniform(*residual_sd_range)),
        )
    for i in range(n_clickers):
        profiles[f"clicker-{i:04d}"] = RaterProfile(kind=RaterKind.RANDOM_CLICKER)
    return profiles


def simulate(config: StudyConfig, truth: GroundTruth, seed: int) -> RatingTable:
    """Run every subject through every batch of the study once.

    Deterministic for a given (config, truth, seed): each subject draws
    from an independent child stream of the seed, so the table does not
    depend on iteration order.
    """
    questions = config.question_pool()
    for question in questions.values():
        if question.test.key not in truth.true_quality:
            raise CoverageGap(question.test.key)

    subjects = sorted(truth.profiles)
    streams = np.random.SeedSequence(seed).spawn(len(subjects))
    ratings: list[Rating] = []
    timestamp = 0.0
    for subject_id, stream in zip(subjects, streams):
        profile = truth.profiles[subject_id]
        rng = np.random.default_rng(stream)
        attention = profile.effective_attention()
        for batch in config.batches:
            instance_id = f"{subject_id}:{batch.batch_id}"
            for question in batch.questions:
                attended = attention >= 1.0 or rng.random() < attention
                if attended and profile.kind is RaterKind.DILIGENT:
                    quality = truth.true_quality[question.test.key]
                    noise = rng.normal(0.0, profile.residual_sd) if profile.residual_sd > 0 else 0.0
                    score = min(100.0, max(0.0, quality + profile.bias + noise))
                else:
                    score = float(rng.uniform(0.0, 100.0))
                timestamp += 1.0
                ratings.append(
                    Rating(
                        subject_id=subject_id,
                        batch_instance_id=instance_id,
                        batch_id=batch.batch_id,
                        question_id=question.question_id,
                        score=score,
                        toggle_count=int(rng.integers(1, 9)),
                        elapsed_ms=int(rng.integers(2000, 30000)),
                        timestamp=timestamp,
                    )
                )
    return RatingTable.build(questions, ratings)


@dataclass(frozen=True)
class RecoveryMetrics:
    rmse: float
    bias_corr: float
    plcc: float


def stimulus_mos(mos: dict[str, float], questions: dict[str, Question]) -> dict[str, float]:
    """Aggregate per-question MOS to per-stimulus MOS (mean over questions)."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for question_id, value in mos.items():
        key = questions[question_id].test.key
        sums[key] = sums.get(key, 0.0) + value
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def evaluate_recovery(truth: GroundTruth, result, questions: dict[str, Question]) -> RecoveryMetrics:
    """Compare reconstructed MOS and biases against the injected ground truth."""
    per_stimulus = stimulus_mos(result.mos, questions)
    pairs = [
        (truth.true_quality[key], estimate)
        for key, estimate in per_stimulus.items()
        if key in truth.true_quality
    ]
    errors = [(t - e) ** 2 for t, e in pairs]
    rmse = math.sqrt(sum(errors) / len(errors))
    plcc = _safe_pearson([t for t, _ in pairs], [e for _, e in pairs])

    injected, estimated = [], []
    for subject_id, estimate in result.bias.items():
        profile = truth.profiles.get(subject_id)
        if profile is not None and profile.kind is RaterKind.DILIGENT:
            injected.append(profile.bias)
            estimated.append(estimate)
    bias_corr = _safe_pearson(injected, estimated)
    return RecoveryMetrics(rmse=rmse, bias_corr=bias_corr, plcc=plcc)


def _safe_pearson(x, y) -> float:
    """Correlation, or nan when a noiseless fixture leaves nothing to correlate."""
    try:
        return pearson(x, y)
    except (DegenerateInput, ValueError):
        return float("nan")


def save_truth(truth: GroundTruth, path: str | Path) -> None:
    payload = {
        "true_quality": truth.true_quality,
        "profiles": {
            sid: {
                "kind": p.kind.value,
                "bias": p.bias,
                "residual_sd": p.residual_sd,
                "attention": p.attention,
            }
            for sid, p in truth.profiles.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_truth(path: str | Path) -> GroundTruth:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    profiles = {
        sid: RaterProfile(
            kind=RaterKind(p["kind"]),
            bias=float(p.get("bias", 0.0)),
            residual_sd=float(p.get("residual_sd", 0.0)),
            attention=None if p.get("attention") is None else float(p["attention"]),
        )
        for sid, p in data["profiles"].items()
    }
    return GroundTruth(
        true_quality={k: float(v) for k, v in data["true_quality"].items()},
        profiles=profiles,
    )
