"""Beta modeling of per-question score distributions.

Scores normalized to the unit interval are summarized by a two-parameter
Beta fit: maximum likelihood via safeguarded Newton ascent when it
converges, otherwise the method of moments. A chi-square test over
equal-probability bins judges goodness of fit, and the (alpha, beta)
pair is classified into the coarse shape families used when reading
score-distribution scatter plots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betainc, betaincinv, gammaincc

from .domain import QuestionKind, RatingTable
from .numerics import digamma, trigamma

SCORE_CLAMP = 1e-4  # keeps log terms finite for exact 0/100 scores
PARAM_ESCAPE = (1e-6, 1e6)
MAX_NEWTON_ITERATIONS = 500
TARGET_BINS = 10
MIN_EXPECTED_PER_BIN = 5.0
MIN_BINS = 4


class DegenerateSample(ValueError):
    """Sample too small or without variance after clamping."""


class TooFewSamples(ValueError):
    """Chi-square binning needs a minimum sample count."""


class ShapeClass(str, Enum):
    SYMMETRIC = "SYMMETRIC"
    U_SHAPED = "U_SHAPED"
    LEFT_SKEWED = "LEFT_SKEWED"
    RIGHT_SKEWED = "RIGHT_SKEWED"
    UNIFORM = "UNIFORM"


class FitMethod(str, Enum):
    MLE = "MLE"
    MOMENTS = "MOMENTS"


@dataclass(frozen=True)
class BetaFit:
    alpha: float
    beta: float
    method: FitMethod
    loglik: float
    n: int

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("shape parameters must be positive")


@dataclass(frozen=True)
class GofResult:
    statistic: float
    dof: int
    p_value: float
    passed: bool
    bins_used: int
    insufficient_bins: bool = False


def beta_from_moments(mean: float, variance: float) -> tuple[float, float]:
    """Closed-form shape parameters matching the given mean and variance.

    Valid whenever variance < mean*(1-mean), which holds for every sample
    clamped inside the open unit interval.
    """
    if not 0.0 < mean < 1.0:
        raise DegenerateSample(f"mean {mean} outside (0, 1)")
    if variance <= 0.0:
        raise DegenerateSample("variance must be positive")
    spread = mean * (1.0 - mean) / variance - 1.0
    if spread <= 0.0:
        raise DegenerateSample("variance too large for a Beta distribution")
    return mean * spread, (1.0 - mean) * spread


def _clamp(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if np.any((samples < 0.0) | (samples > 1.0)):
        raise ValueError("samples must lie in [0, 1]")
    return np.clip(samples, SCORE_CLAMP, 1.0 - SCORE_CLAMP)


def _loglik(alpha: float, beta: float, t1: float, t2: float, n: int) -> float:
    return (
        n * (math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta))
        + (alpha - 1.0) * t1
        + (beta - 1.0) * t2
    )


def fit_beta(samples) -> BetaFit:
    """Fit shape parameters to unit-interval samples.

    Newton ascent on the log-likelihood runs in log-parameter space
    (positivity is structural) with step halving, starting from the
    moments estimate. If the iteration fails to converge within 500
    steps or wanders outside sane parameter bounds, the moments fit is
    returned instead, flagged by the `method` field.
    """
    x = _clamp(samples)
    n = x.size
    if n < 3:
        raise DegenerateSample(f"need at least 3 samples, got {n}")
    mean = float(x.mean())
    variance = float(x.var())
    if variance <= 0.0:
        raise DegenerateSample("zero variance after clamping")

    alpha0, beta0 = beta_from_moments(mean, variance)
    t1 = float(np.log(x).sum())
    t2 = float(np.log1p(-x).sum())
    moments_loglik = _loglik(alpha0, beta0, t1, t2, n)
    moments_fit = BetaFit(alpha0, beta0, FitMethod.MOMENTS, moments_loglik, n)

    theta = np.log([alpha0, beta0])
    loglik = moments_loglik
    tol = 1e-9 * n

    for _ in range(MAX_NEWTON_ITERATIONS):
        alpha, beta = float(np.exp(theta[0])), float(np.exp(theta[1]))
        if not (PARAM_ESCAPE[0] < alpha < PARAM_ESCAPE[1] and PARAM_ESCAPE[0] < beta < PARAM_ESCAPE[1]):
            return moments_fit
        psi_sum = digamma(alpha + beta)
        grad_a = n * (psi_sum - digamma(alpha)) + t1
        grad_b = n * (psi_sum - digamma(beta)) + t2
        grad_theta = np.array([alpha * grad_a, beta * grad_b])
        if max(abs(grad_theta[0]), abs(grad_theta[1])) < tol:
            return BetaFit(alpha, beta, FitMethod.MLE, loglik, n)

        tri_sum = trigamma(alpha + beta)
        h_aa = n * (tri_sum - trigamma(alpha))
        h_bb = n * (tri_sum - trigamma(beta))
        h_ab = n * tri_sum
        hessian = np.array(
            [
                [alpha * alpha * h_aa + alpha * grad_a, alpha * beta * h_ab],
                [alpha * beta * h_ab, beta * beta * h_bb + beta * grad_b],
            ]
        )
        try:
            step = np.linalg.solve(hessian, -grad_theta)
        except np.linalg.LinAlgError:
            step = grad_theta / n
        if float(step @ grad_theta) <= 0.0:  # not an ascent direction
            step = grad_theta / n

        improved = False
        for _ in range(50):
            candidate = theta + step
            c_alpha, c_beta = np.exp(candidate)
            if PARAM_ESCAPE[0] < c_alpha < PARAM_ESCAPE[1] and PARAM_ESCAPE[0] < c_beta < PARAM_ESCAPE[1]:
                candidate_loglik = _loglik(float(c_alpha), float(c_beta), t1, t2, n)
                if candidate_loglik > loglik:
                    theta = candidate
                    loglik = candidate_loglik
                    improved = True
                    break
            step = 0.5 * step
        if not improved:
            # the likelihood is flat at floating-point resolution: done
            alpha, beta = float(np.exp(theta[0])), float(np.exp(theta[1]))
            return BetaFit(alpha, beta, FitMethod.MLE, loglik, n)

    return moments_fit


def _binned_counts(x: np.ndarray, fit: BetaFit) -> tuple[list[float], list[float]]:
    """Observed/expected counts per bin after the minimum-count merging.

    Expected counts telescope from the fitted CDF at the bin edges, so
    they sum to the sample size exactly, both before and after merging.
    """
    n = x.size
    quantiles = np.arange(1, TARGET_BINS) / TARGET_BINS
    inner_edges = betaincinv(fit.alpha, fit.beta, quantiles)
    edges = np.concatenate(([0.0], inner_edges, [1.0]))
    observed = list(np.histogram(x, bins=edges)[0].astype(float))
    cdf = np.concatenate(([0.0], betainc(fit.alpha, fit.beta, inner_edges), [1.0]))
    expected = list(n * np.diff(cdf))

    while len(expected) > 1 and min(expected) < MIN_EXPECTED_PER_BIN:
        i = int(np.argmin(expected))
        j = i + 1 if i + 1 < len(expected) else i - 1
        lo, hi = min(i, j), max(i, j)
        observed[lo] += observed[hi]
        expected[lo] += expected[hi]
        del observed[hi], expected[hi]
    return observed, expected


def chi_square_gof(samples, fit: BetaFit, significance: float = 0.05) -> GofResult:
    """Chi-square comparison of observed counts against the fitted Beta.

    Ten equal-probability bins under the fit are merged (adjacent-first)
    until every expected count reaches 5. Two estimated shape parameters
    are charged against the degrees of freedom. When merging leaves
    fewer than four bins the result is flagged rather than raised.
    """
    x = _clamp(samples)
    n = x.size
    if n < 10:
        raise TooFewSamples(f"need at least 10 samples, got {n}")

    observed, expected = _binned_counts(x, fit)
    bins_used = len(expected)
    statistic = float(
        sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    )
    insufficient = bins_used < MIN_BINS
    dof = max(bins_used - 1 - 2, 1)
    p_value = float(gammaincc(dof / 2.0, statistic / 2.0))
    return GofResult(
        statistic=statistic,
        dof=dof,
        p_value=p_value,
        passed=p_value >= significance,
        bins_used=bins_used,
        insufficient_bins=insufficient,
    )


def classify_shape(fit: BetaFit, tolerance: float = 0.05) -> ShapeClass:
    """Coarse shape family of a fitted Beta.

    Near-equal parameters mean a symmetric score distribution; symmetric
    fits at or below 1 are U-shaped, and fits with both parameters near 1
    are effectively uniform. Otherwise the heavier parameter tells which
    end of the distortion axis holds the mass: alpha > beta pushes mass
    toward 1 (high impairment), labeled right-skewed on that axis.
    """
    alpha, beta = fit.alpha, fit.beta
    if abs(alpha - beta) <= tolerance * (alpha + beta):
        if abs(alpha - 1.0) <= tolerance and abs(beta - 1.0) <= tolerance:
            return ShapeClass.UNIFORM
        if alpha <= 1.0:
            return ShapeClass.U_SHAPED
        return ShapeClass.SYMMETRIC
    return ShapeClass.RIGHT_SKEWED if alpha > beta else ShapeClass.LEFT_SKEWED


@dataclass(frozen=True)
class QuestionFit:
    question_id: str
    source_id: str
    codec: str
    distortion_level: int
    fit: BetaFit | None
    gof: GofResult | None
    shape: ShapeClass | None
    error: str | None = None


def fit_all_questions(
    table: RatingTable,
    kept: set[str] | frozenset[str] | None = None,
    significance: float = 0.05,
    study_only: bool = True,
) -> dict[str, QuestionFit]:
    """Per-question Beta fits over the scores of the kept instances.

    Scores are divided by 100 before fitting. Questions whose samples are
    degenerate (constant or tiny) or too small for the chi-square test
    are recorded with an error marker instead of failing the batch run.
    The result carries the stimulus coordinates of every question so the
    (alpha, beta) table can be plotted by distortion level directly.
    """
    if kept is None:
        kept = set(table.instances)
    by_question: dict[str, list[float]] = {}
    for rating in table.ratings:
        if rating.batch_instance_id in kept:
            by_question.setdefault(rating.question_id, []).append(rating.score / 100.0)

    results: dict[str, QuestionFit] = {}
    for question_id in sorted(by_question):
        question = table.questions[question_id]
        if study_only and question.kind is not QuestionKind.STUDY:
            continue
        samples = by_question[question_id]
        base = dict(
            question_id=question_id,
            source_id=question.test.source_id,
            codec=question.test.codec.value,
            distortion_level=question.test.distortion_level,
        )
        try:
            fit = fit_beta(samples)
        except DegenerateSample as exc:
            results[question_id] = QuestionFit(
                **base, fit=None, gof=None, shape=None, error=f"degenerate_sample: {exc}"
            )
            continue
        shape = classify_shape(fit)
        try:
            gof = chi_square_gof(samples, fit, significance=significance)
            error = None
        except TooFewSamples as exc:
            gof = None
            error = f"too_few_for_gof: {exc}"
        results[question_id] = QuestionFit(**base, fit=fit, gof=gof, shape=shape, error=error)
    return results
