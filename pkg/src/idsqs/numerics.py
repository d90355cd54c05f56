"""Shared statistical kernel.

Correlation coefficients, Otsu histogram thresholding, stable polynomial
least squares, and the digamma/trigamma functions the Beta fitter needs.
Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

try:  # numpy >= 1.25
    from numpy.exceptions import RankWarning
except ImportError:  # pragma: no cover
    from numpy import RankWarning  # type: ignore[attr-defined,no-redef]


class DegenerateInput(ValueError):
    """Input carries no usable variation (constant series, single bin, ...)."""


class RankDeficient(ValueError):
    """Least-squares design matrix does not have full column rank."""


class DomainError(ValueError):
    """Argument lies outside the mathematical domain of the function."""


@dataclass(frozen=True)
class CorrelationReport:
    """Bundle of the three correlation coefficients over one sample pair."""

    plcc: float
    srocc: float
    kendall_tau: float
    n: int

    def __post_init__(self) -> None:
        for value in (self.plcc, self.srocc, self.kendall_tau):
            if not -1.0 - 1e-12 <= value <= 1.0 + 1e-12:
                raise ValueError(f"correlation {value} outside [-1, 1]")
        if self.n < 2:
            raise ValueError("correlation needs at least two samples")


def _as_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateInput("need at least two observations")
    return x, y


def pearson(x, y) -> float:
    """Product-moment correlation of two equal-length series."""
    x, y = _as_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("constant series has no defined correlation")
    return float((dx @ dy) / (sx * sy))


def rank_average(values) -> np.ndarray:
    """Ranks 1..n, ties replaced by the mean rank of the tied block."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank-order correlation: Pearson correlation of average ranks."""
    x, y = _as_pair(x, y)
    return pearson(rank_average(x), rank_average(y))


def kendall_tau_b(x, y) -> float:
    """Tie-corrected Kendall rank correlation (tau-b) over all pairs."""
    x, y = _as_pair(x, y)
    n = x.size
    sign_x = np.sign(x[:, None] - x[None, :])
    sign_y = np.sign(y[:, None] - y[None, :])
    upper = np.triu_indices(n, k=1)
    products = sign_x[upper] * sign_y[upper]
    concordant_minus_discordant = float(products.sum())

    n0 = n * (n - 1) // 2
    _, counts_x = np.unique(x, return_counts=True)
    _, counts_y = np.unique(y, return_counts=True)
    ties_x = int((counts_x * (counts_x - 1) // 2).sum())
    ties_y = int((counts_y * (counts_y - 1) // 2).sum())
    if ties_x == n0 or ties_y == n0:
        raise DegenerateInput("all pairs tied in one series")
    denom = math.sqrt(float(n0 - ties_x)) * math.sqrt(float(n0 - ties_y))
    return concordant_minus_discordant / denom


def correlation_report(x, y) -> CorrelationReport:
    x, y = _as_pair(x, y)
    return CorrelationReport(
        plcc=pearson(x, y),
        srocc=spearman(x, y),
        kendall_tau=kendall_tau_b(x, y),
        n=int(x.size),
    )


def otsu_threshold(values, bins: int = 100) -> float:
    """Bin-edge threshold over [0, 1] maximizing between-class variance.

    The sample is reduced to a uniform histogram with `bins` bins; every
    interior bin edge is a candidate split (class 0 strictly below the edge).
    Ties are broken toward the lowest qualifying edge.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise DegenerateInput("need at least two values")
    if bins < 2:
        raise ValueError("need at least two bins")
    if float(values.min()) < 0.0 or float(values.max()) > 1.0:
        raise ValueError("values must lie in [0, 1]")
    if np.all(values == values[0]):
        raise DegenerateInput("all values equal")

    hist, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = hist.sum()

    # Split after bin k-1, i.e. at edge k, for k = 1..bins-1.
    w0 = np.cumsum(hist)[:-1]
    w1 = total - w0
    mass0 = np.cumsum(hist * centers)[:-1]
    mass1 = (hist * centers).sum() - mass0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        raise DegenerateInput("all values fall into one histogram bin")
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = mass0 / w0
        mu1 = mass1 / w1
        between = w0.astype(float) * w1.astype(float) * (mu0 - mu1) ** 2
    between[~valid] = -np.inf
    best = int(np.argmax(between))  # first occurrence = lowest edge
    return float(edges[best + 1])


def polyfit(x, y, degree: int):
    """Ordinary least-squares polynomial fit, constant coefficient first.

    The fit runs in a shifted/scaled domain (numpy's windowed polynomial
    fit backed by an SVD solve) and coefficients are mapped back, so cubic
    fits on wide domains such as 0..100 stay well conditioned.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("x and y must be one-dimensional and equally long")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if x.size < degree + 1:
        raise RankDeficient(f"need at least {degree + 1} points for degree {degree}")
    if degree > 0 and np.ptp(x) == 0.0:
        raise RankDeficient("all abscissae equal")

    with warnings.catch_warnings():
        warnings.simplefilter("error", RankWarning)
        try:
            fitted = np.polynomial.Polynomial.fit(x, y, deg=degree)
        except RankWarning as exc:
            raise RankDeficient(str(exc)) from exc
    coeffs = fitted.convert().coef
    if coeffs.size < degree + 1:
        coeffs = np.pad(coeffs, (0, degree + 1 - coeffs.size))
    return coeffs


def polyval(coeffs, x):
    """Evaluate a constant-first coefficient vector at x (Horner)."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    result = np.zeros_like(x)
    for c in coeffs[::-1]:
        result = result * x + c
    return result


# Asymptotic tail coefficients: Bernoulli(2k) / 2k for digamma,
# applied after shifting the argument above _SHIFT_POINT.
_SHIFT_POINT = 8.0
_DIGAMMA_TAIL = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_TRIGAMMA_TAIL = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def digamma(x: float) -> float:
    """Logarithmic derivative of the gamma function for x > 0.

    Uses the recurrence psi(x+1) = psi(x) + 1/x to shift the argument
    above 8, then the asymptotic series; relative error is below 1e-14.
    """
    if not x > 0.0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_POINT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for coeff in reversed(_DIGAMMA_TAIL):
        series = inv2 * (coeff + series)
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    """Derivative of digamma for x > 0; same shift-then-series scheme."""
    if not x > 0.0:
        raise DomainError(f"trigamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_POINT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    for coeff in reversed(_TRIGAMMA_TAIL):
        series = inv2 * (coeff + series)
    return acc + inv * (1.0 + 0.5 * inv + series)
