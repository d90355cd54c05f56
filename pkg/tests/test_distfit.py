import numpy as np
import pytest

from idsqs.distfit import (
    BetaFit,
    DegenerateSample,
    FitMethod,
    ShapeClass,
    TooFewSamples,
    _binned_counts,
    _clamp,
    _loglik,
    beta_from_moments,
    chi_square_gof,
    classify_shape,
    fit_all_questions,
    fit_beta,
)
from idsqs.domain import Codec, Question, QuestionKind, Rating, RatingTable, Stimulus


class TestMoments:
    def test_closed_form_case_is_exact(self):
        alpha, beta = beta_from_moments(0.5, 0.05)
        assert alpha == 2.0 and beta == 2.0

    def test_inverse_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            m = rng.uniform(0.05, 0.95)
            v = rng.uniform(0.2, 0.9) * m * (1 - m)
            alpha, beta = beta_from_moments(m, v)
            mean = alpha / (alpha + beta)
            var = alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1))
            assert mean == pytest.approx(m, rel=1e-12)
            assert var == pytest.approx(v, rel=1e-12)

    def test_rejects_overdispersed(self):
        with pytest.raises(DegenerateSample):
            beta_from_moments(0.5, 0.3)


class TestFitBeta:
    def test_recovers_beta_2_5(self):
        rng = np.random.default_rng(20240501)
        samples = rng.beta(2.0, 5.0, size=10_000)
        fit = fit_beta(samples)
        assert fit.method is FitMethod.MLE
        assert 1.8 <= fit.alpha <= 2.2
        assert 4.5 <= fit.beta <= 5.5

    def test_uniform_samples_fit_near_one_one(self):
        rng = np.random.default_rng(7)
        samples = rng.uniform(0, 1, size=10_000)
        fit = fit_beta(samples)
        assert abs(fit.alpha - 1.0) < 0.15
        assert abs(fit.beta - 1.0) < 0.15

    def test_mle_never_below_moments_likelihood(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            a, b = rng.uniform(0.4, 8.0, size=2)
            samples = rng.beta(a, b, size=int(rng.integers(30, 400)))
            fit = fit_beta(samples)
            if fit.method is FitMethod.MLE:
                x = _clamp(samples)
                t1 = float(np.log(x).sum())
                t2 = float(np.log1p(-x).sum())
                m_alpha, m_beta = beta_from_moments(float(x.mean()), float(x.var()))
                moments_ll = _loglik(m_alpha, m_beta, t1, t2, x.size)
                assert fit.loglik >= moments_ll - 1e-9

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(44)
        for _ in range(50):
            a, b = rng.uniform(0.5, 6.0, size=2)
            samples = rng.beta(a, b, size=200)
            forward = fit_beta(samples)
            mirrored = fit_beta(1.0 - samples)
            tol = 1e-6 if forward.method is FitMethod.MLE else 1e-9
            assert mirrored.alpha == pytest.approx(forward.beta, rel=tol, abs=tol)
            assert mirrored.beta == pytest.approx(forward.alpha, rel=tol, abs=tol)

    def test_degenerate_samples(self):
        with pytest.raises(DegenerateSample):
            fit_beta([0.5, 0.5])
        with pytest.raises(DegenerateSample):
            fit_beta([0.5] * 100)

    def test_extreme_scores_are_clamped_not_fatal(self):
        samples = [0.0, 0.0, 1.0, 1.0, 0.4, 0.6]
        fit = fit_beta(samples)
        assert fit.alpha > 0 and fit.beta > 0


class TestChiSquare:
    def test_self_fitted_passes_mostly(self):
        passes = 0
        runs = 40
        for seed in range(runs):
            rng = np.random.default_rng([101, seed])
            samples = rng.beta(2.0, 5.0, size=1000)
            fit = fit_beta(samples)
            if chi_square_gof(samples, fit).passed:
                passes += 1
        assert passes >= 0.85 * runs

    def test_bimodal_counterexample_rejected(self):
        rng = np.random.default_rng(5)
        samples = np.concatenate(
            [rng.normal(0.05, 0.01, 500), rng.normal(0.95, 0.01, 500)]
        ).clip(0, 1)
        mid = BetaFit(5.0, 5.0, FitMethod.MOMENTS, 0.0, 1000)
        result = chi_square_gof(samples, mid)
        assert not result.passed
        assert result.p_value < 0.001

    def test_expected_counts_sum_to_n(self):
        rng = np.random.default_rng(2)
        for n in (10, 23, 47, 212, 1000):
            samples = _clamp(rng.beta(3.0, 1.5, size=n))
            fit = fit_beta(samples)
            observed, expected = _binned_counts(samples, fit)
            assert sum(expected) == pytest.approx(n, abs=1e-9)
            assert sum(observed) == n

    def test_merging_keeps_minimum_expected(self):
        rng = np.random.default_rng(9)
        samples = _clamp(rng.beta(2.0, 2.0, size=23))
        fit = fit_beta(samples)
        _, expected = _binned_counts(samples, fit)
        assert all(e >= 5.0 for e in expected[:-1]) or len(expected) == 1

    def test_dof_accounts_for_two_parameters(self):
        rng = np.random.default_rng(11)
        samples = rng.beta(2.0, 3.0, size=1000)
        fit = fit_beta(samples)
        result = chi_square_gof(samples, fit)
        assert result.bins_used == 10
        assert result.dof == 7

    def test_small_sample_flagged(self):
        rng = np.random.default_rng(12)
        samples = rng.beta(2.0, 3.0, size=12)
        fit = fit_beta(samples)
        result = chi_square_gof(samples, fit)
        assert result.insufficient_bins
        with pytest.raises(TooFewSamples):
            chi_square_gof(samples[:5], fit)


class TestShapes:
    def test_known_shapes(self):
        assert classify_shape(BetaFit(2, 2, FitMethod.MLE, 0, 10)) is ShapeClass.SYMMETRIC
        assert classify_shape(BetaFit(0.8, 0.8, FitMethod.MLE, 0, 10)) is ShapeClass.U_SHAPED
        assert classify_shape(BetaFit(1.0, 1.0, FitMethod.MLE, 0, 10)) is ShapeClass.UNIFORM

    def test_skew_orientation(self):
        assert classify_shape(BetaFit(8, 2, FitMethod.MLE, 0, 10)) is ShapeClass.RIGHT_SKEWED
        assert classify_shape(BetaFit(2, 8, FitMethod.MLE, 0, 10)) is ShapeClass.LEFT_SKEWED

    def test_tolerance_scales_with_magnitude(self):
        assert classify_shape(BetaFit(50.0, 52.0, FitMethod.MLE, 0, 10)) is ShapeClass.SYMMETRIC


class TestFitAllQuestions:
    def build_table(self, per_question_scores: dict[str, list[float]]):
        questions = {}
        ratings = []
        for idx, (qid_hint, scores) in enumerate(per_question_scores.items()):
            question = Question.build(
                QuestionKind.STUDY, Stimulus("2", Codec.AVIF, 1 + idx % 10)
            )
            question = Question(qid_hint, question.kind, question.reference, question.test)
            questions[qid_hint] = question
            for i, score in enumerate(scores):
                sid = f"s{i:03d}"
                ratings.append(Rating(sid, f"{sid}:b1", "b1", qid_hint, float(score)))
        return RatingTable.build(questions, ratings)

    def test_constant_scores_recorded_not_fatal(self):
        rng = np.random.default_rng(31)
        table = self.build_table(
            {
                "flat": [50.0] * 45,
                "ok": list(100.0 * rng.beta(8, 2, size=45)),
            }
        )
        fits = fit_all_questions(table)
        assert fits["flat"].error is not None and fits["flat"].fit is None
        assert fits["ok"].fit is not None

    def test_right_skew_for_high_distortion_scores(self):
        rng = np.random.default_rng(32)
        table = self.build_table({"hi": list(100.0 * rng.beta(8, 2, size=200))})
        fits = fit_all_questions(table)
        fit = fits["hi"].fit
        assert fit.alpha > fit.beta
        assert fits["hi"].shape is ShapeClass.RIGHT_SKEWED
