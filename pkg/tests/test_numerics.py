import math

import numpy as np
import pytest

from idsqs import numerics
from idsqs.numerics import (
    DegenerateInput,
    DomainError,
    RankDeficient,
    digamma,
    kendall_tau_b,
    otsu_threshold,
    pearson,
    polyfit,
    polyval,
    rank_average,
    spearman,
    trigamma,
)

from oracles import (
    kendall_tau_b_bruteforce,
    otsu_bruteforce,
    pearson_bruteforce,
    polyfit_normal_equations,
    spearman_bruteforce,
)

EULER_GAMMA = 0.5772156649015329


class TestPearson:
    def test_identity(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_reversal(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_value(self):
        # devs x = (-1, 0, 1), y = (-1, 1, 0): sxy=1, sx=sy=sqrt(2)
        assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)

    def test_constant_raises(self):
        with pytest.raises(DegenerateInput):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])


class TestSpearman:
    def test_monotone_map_is_one(self):
        x = [0.1, 1.4, 2.0, 5.5, 9.0]
        y = [math.exp(v) for v in x]
        assert spearman(x, y) == pytest.approx(1.0)

    def test_negation_is_minus_one(self):
        x = [3.0, 1.0, 2.0, 8.0]
        assert spearman(x, [-v for v in x]) == pytest.approx(-1.0)

    def test_tied_ranks_match_plain_pearson_of_ranks(self):
        x = [1.0, 2.0, 3.0, 4.0]
        y = [10.0, 10.0, 20.0, 30.0]
        assert list(rank_average(y)) == [1.5, 1.5, 3.0, 4.0]
        expected = pearson_bruteforce([1, 2, 3, 4], [1.5, 1.5, 3.0, 4.0])
        assert spearman(x, y) == pytest.approx(expected, abs=1e-14)


class TestKendall:
    def test_concordant(self):
        assert kendall_tau_b([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_discordant(self):
        assert kendall_tau_b([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_tied_case_matches_pair_enumeration(self):
        x = [1, 2, 2, 3]
        y = [1, 2, 3, 3]
        assert kendall_tau_b(x, y) == pytest.approx(
            kendall_tau_b_bruteforce(x, y), abs=1e-15
        )

    def test_all_tied_raises(self):
        with pytest.raises(DegenerateInput):
            kendall_tau_b([5, 5, 5], [1, 2, 3])


def test_correlations_match_bruteforce_oracle_with_ties():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        n = int(rng.integers(2, 51))
        # coarse quantization guarantees ties
        x = np.round(rng.uniform(0, 10, size=n) * 2) / 2
        y = np.round(rng.uniform(0, 10, size=n) * 2) / 2
        if np.all(x == x[0]):
            x[0] += 1.0
        if np.all(y == y[0]):
            y[0] += 1.0
        assert pearson(x, y) == pytest.approx(pearson_bruteforce(list(x), list(y)), abs=1e-12)
        assert spearman(x, y) == pytest.approx(spearman_bruteforce(list(x), list(y)), abs=1e-12)
        assert kendall_tau_b(x, y) == pytest.approx(
            kendall_tau_b_bruteforce(list(x), list(y)), abs=1e-12
        )


def test_correlations_symmetric_and_affine_invariant():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 30))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        for f in (pearson, spearman, kendall_tau_b):
            assert f(x, y) == pytest.approx(f(y, x), abs=1e-12)
            assert f(2.5 * x + 3.0, y) == pytest.approx(f(x, y), abs=1e-10)
            assert f(x, 0.1 * y - 40.0) == pytest.approx(f(x, y), abs=1e-10)


class TestOtsu:
    def test_two_clusters(self):
        values = [0.50] * 10 + [0.90] * 10
        t = otsu_threshold(values)
        assert 0.50 < t < 0.90
        assert t == pytest.approx(otsu_bruteforce(values), abs=1e-12)

    def test_pair(self):
        t = otsu_threshold([0.2, 0.8])
        assert 0.2 < t <= 0.8

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            values = np.clip(
                np.concatenate(
                    [rng.normal(0.45, 0.1, size=40), rng.normal(0.9, 0.04, size=40)]
                ),
                0.0,
                1.0,
            )
            assert otsu_threshold(values) == pytest.approx(
                otsu_bruteforce(list(values)), abs=1e-12
            )

    def test_duplication_invariant(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(0, 1, size=30)
        t1 = otsu_threshold(values)
        t3 = otsu_threshold(np.repeat(values, 3))
        assert t1 == pytest.approx(t3, abs=0.0)

    def test_ties_break_low(self):
        # perfectly separated two-point sample: every edge between the
        # clusters maximizes the variance; the lowest must win
        t = otsu_threshold([0.10] * 5 + [0.90] * 5)
        assert t == pytest.approx(0.11)

    def test_constant_raises(self):
        with pytest.raises(DegenerateInput):
            otsu_threshold([0.4, 0.4, 0.4])


class TestPolyfit:
    def test_exact_line(self):
        x = np.array([0.0, 1.0, 2.0, 5.0])
        y = 2.0 + 3.0 * x
        coeffs = polyfit(x, y, 1)
        assert coeffs == pytest.approx([2.0, 3.0], abs=1e-9)

    def test_exact_cubic(self):
        x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        coeffs = polyfit(x, x**3, 3)
        assert coeffs == pytest.approx([0.0, 0.0, 0.0, 1.0], abs=1e-6)

    def test_noisy_cubic_matches_normal_equations(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0, 10, size=40)
        y = 1.0 - 2.0 * x + 0.3 * x**2 + 0.05 * x**3 + rng.normal(0, 0.5, size=40)
        coeffs = polyfit(x, y, 3)
        oracle = polyfit_normal_equations(x, y, 3)
        assert coeffs == pytest.approx(oracle, abs=1e-6)

    def test_residual_orthogonal_to_design(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 100, size=60)
        y = rng.normal(0, 10, size=60) + 0.002 * x**3
        coeffs = polyfit(x, y, 3)
        residual = y - polyval(coeffs, x)
        design = np.vander(x, 4, increasing=True)
        scaled = design / np.linalg.norm(design, axis=0)
        assert np.abs(scaled.T @ residual).max() < 1e-8 * np.linalg.norm(y)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficient):
            polyfit([2.0, 2.0, 2.0, 2.0], [1.0, 2.0, 3.0, 4.0], 3)
        with pytest.raises(RankDeficient):
            polyfit([1.0, 2.0], [1.0, 2.0], 3)


class TestDigamma:
    def test_psi_one_is_minus_euler_gamma(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-12)

    def test_recurrence_identity(self):
        assert digamma(2.0) == pytest.approx(1.0 - EULER_GAMMA, abs=1e-12)
        for x in (0.3, 1.7, 4.2, 9.9):
            assert digamma(x + 1.0) == pytest.approx(digamma(x) + 1.0 / x, rel=1e-12)

    def test_against_high_precision_oracle(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 40
        for x in (1e-4, 0.1, 0.5, 1.0, 2.5, 6.0, 10.5, 123.0, 1e6):
            ref = float(mpmath.digamma(x))
            assert digamma(x) == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_domain(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            digamma(-3.5)


def test_trigamma_against_oracle():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    for x in (0.05, 0.5, 1.0, 3.3, 8.0, 50.0):
        ref = float(mpmath.polygamma(1, x))
        assert trigamma(x) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(DomainError):
        trigamma(-1.0)


def test_correlation_report_bounds():
    with pytest.raises(ValueError):
        numerics.CorrelationReport(plcc=1.2, srocc=0.0, kendall_tau=0.0, n=5)
    report = numerics.correlation_report([1, 2, 3, 4], [1.0, 2.5, 2.0, 4.0])
    assert report.n == 4
    assert -1.0 <= report.kendall_tau <= 1.0
