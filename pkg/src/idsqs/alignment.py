"""Mapping reconstructed DMOS onto an external JND quality scale.

A cubic least-squares regression (the standard objective-metric mapping
curve) aligns the two scales per source or pooled; Pearson, Spearman and
Kendall coefficients then quantify the agreement. Rank metrics are
blind to any monotone mapping, so they are also computed on the raw
DMOS and cross-checked whenever the fitted cubic is monotone over the
observed range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import math

import numpy as np

from .domain import Stimulus
from .numerics import CorrelationReport, kendall_tau_b, pearson, polyfit, polyval, spearman


class Grouping(str, Enum):
    PER_SOURCE = "PER_SOURCE"
    POOLED = "POOLED"


class InsufficientOverlap(ValueError):
    def __init__(self, group: str, count: int):
        super().__init__(f"group {group!r} has {count} common stimuli; a cubic needs 4")
        self.group = group
        self.count = count


@dataclass(frozen=True)
class JndTable:
    jnd: dict[str, float]  # stimulus key -> JND units

    @classmethod
    def load(cls, path: str | Path) -> "JndTable":
        values: dict[str, float] = {}
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                record = json.loads(line)
                stimulus = Stimulus(
                    str(record["source_id"]),
                    record["codec"],
                    int(record["distortion_level"]),
                )
                values[stimulus.key] = float(record["jnd"])
        return cls(values)

    def save(self, path: str | Path) -> None:
        lines = []
        for key in sorted(self.jnd):
            stimulus = Stimulus.from_key(key)
            lines.append(
                json.dumps(
                    {
                        "source_id": stimulus.source_id,
                        "codec": stimulus.codec.value,
                        "distortion_level": stimulus.distortion_level,
                        "jnd": self.jnd[key],
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class GroupAlignment:
    group: str
    cubic_coeffs: tuple[float, float, float, float]
    stimuli: tuple[str, ...]
    mapped: dict[str, float]
    correlations: CorrelationReport
    raw_srocc: float
    raw_kendall: float
    monotone: bool


@dataclass(frozen=True)
class AlignmentReport:
    grouping: Grouping
    groups: dict[str, GroupAlignment]


def _cubic_monotone(coeffs, lo: float, hi: float) -> bool:
    """True when the cubic is strictly monotone over [lo, hi].

    The derivative is a quadratic; its sign is tested at the endpoints
    and between/at every stationary point inside the interval.
    """
    _, c1, c2, c3 = coeffs
    breaks = [lo, hi]
    disc = 4.0 * c2 * c2 - 12.0 * c3 * c1
    if c3 != 0.0 and disc >= 0.0:
        root = math.sqrt(disc)
        for r in ((-2.0 * c2 - root) / (6.0 * c3), (-2.0 * c2 + root) / (6.0 * c3)):
            if lo < r < hi:
                breaks.append(r)
    elif c3 == 0.0 and c2 != 0.0:
        r = -c1 / (2.0 * c2)
        if lo < r < hi:
            breaks.append(r)
    breaks.sort()
    probes = [lo, hi] + [0.5 * (a + b) for a, b in zip(breaks, breaks[1:])]
    derivative = [c1 + 2.0 * c2 * p + 3.0 * c3 * p * p for p in probes]
    return all(d > 1e-12 for d in derivative) or all(d < -1e-12 for d in derivative)


def _align_group(group: str, keys: list[str], dmos: dict[str, float], jnd: dict[str, float]) -> GroupAlignment:
    if len(keys) < 4:
        raise InsufficientOverlap(group, len(keys))
    x = np.array([dmos[k] for k in keys])
    y = np.array([jnd[k] for k in keys])
    coeffs = polyfit(x, y, 3)
    mapped = polyval(coeffs, x)

    report = CorrelationReport(
        plcc=pearson(mapped, y),
        srocc=spearman(mapped, y),
        kendall_tau=kendall_tau_b(mapped, y),
        n=len(keys),
    )
    raw_srocc = spearman(x, y)
    raw_kendall = kendall_tau_b(x, y)
    monotone = _cubic_monotone(coeffs, float(x.min()), float(x.max()))
    if monotone:
        # a monotone mapping cannot change ranks
        assert abs(report.srocc - raw_srocc) < 1e-9
        assert abs(report.kendall_tau - raw_kendall) < 1e-9
    return GroupAlignment(
        group=group,
        cubic_coeffs=tuple(float(c) for c in coeffs),
        stimuli=tuple(keys),
        mapped={k: float(v) for k, v in zip(keys, mapped)},
        correlations=report,
        raw_srocc=raw_srocc,
        raw_kendall=raw_kendall,
        monotone=monotone,
    )


def align(dmos: dict[str, float], jnd: JndTable, grouping: Grouping = Grouping.POOLED) -> AlignmentReport:
    """Fit the mapping cubic(s) and report correlation metrics per group.

    Only stimuli present on both scales participate. `dmos` maps stimulus
    keys to reconstructed scores (a DmosTable's `dmos` field fits as is).
    """
    common = sorted(set(dmos) & set(jnd.jnd))
    groups: dict[str, GroupAlignment] = {}
    if grouping is Grouping.POOLED:
        groups["all"] = _align_group("all", common, dmos, jnd.jnd)
    else:
        by_source: dict[str, list[str]] = {}
        for key in common:
            by_source.setdefault(Stimulus.from_key(key).source_id, []).append(key)
        for source in sorted(by_source):
            groups[source] = _align_group(source, by_source[source], dmos, jnd.jnd)
    return AlignmentReport(grouping=grouping, groups=groups)
