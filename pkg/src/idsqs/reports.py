"""Line-delimited report files for every pipeline stage.

Each stage writes one JSONL file: a summary record first, then one
record per entity. Serialization is deliberately boring so that files
are diffable and byte-stable for a fixed seed.
"""

from __future__ import annotations

import json
from pathlib import Path

from .alignment import AlignmentReport
from .distfit import QuestionFit
from .domain import Question, Stimulus
from .reconstruction import BootstrapCI, DmosTable, ReconstructionResult
from .screening import CleansingReport, OutlierReport
from .simulator import RecoveryMetrics


def _write_lines(path: str | Path, records) -> None:
    text = "\n".join(json.dumps(r) for r in records)
    Path(path).write_text(text + ("\n" if text else ""), encoding="utf-8")


def _read_lines(path: str | Path):
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_cleansing(report: CleansingReport, path: str | Path) -> None:
    records = [
        {
            "type": "cleansing_summary",
            "threshold": report.threshold,
            "total": len(report.per_instance_accuracy),
            "kept": len(report.kept),
            "discarded": len(report.discarded),
        }
    ]
    for instance_id in sorted(report.per_instance_accuracy):
        records.append(
            {
                "type": "instance",
                "batch_instance_id": instance_id,
                "accuracy": report.per_instance_accuracy[instance_id],
                "kept": instance_id in report.kept,
            }
        )
    _write_lines(path, records)


def write_outliers(report: OutlierReport, path: str | Path) -> None:
    records = [
        {
            "type": "outlier_summary",
            "mu": report.mu,
            "sigma": report.sigma,
            "cutoff": report.cutoff,
            "kept": len(report.kept),
            "removed": len(report.removed),
        }
    ]
    for instance_id in sorted(report.per_instance_cr):
        records.append(
            {
                "type": "instance",
                "batch_instance_id": instance_id,
                "cr": report.per_instance_cr[instance_id],
                "kept": instance_id in report.kept,
                "degenerate": instance_id in report.degenerate,
            }
        )
    _write_lines(path, records)


def read_kept(path: str | Path) -> set[str]:
    """Kept batch-instance ids from a cleansing or outlier report file."""
    kept: set[str] = set()
    for record in _read_lines(path):
        if record.get("type") == "instance" and record.get("kept"):
            kept.add(record["batch_instance_id"])
    return kept


def read_summary(path: str | Path) -> dict:
    for record in _read_lines(path):
        if str(record.get("type", "")).endswith("_summary"):
            return record
    return {}


def _stimulus_fields(key: str) -> dict:
    stimulus = Stimulus.from_key(key)
    return {
        "stimulus": key,
        "source_id": stimulus.source_id,
        "codec": stimulus.codec.value,
        "distortion_level": stimulus.distortion_level,
    }


def write_reconstruction(
    result: ReconstructionResult,
    dmos: DmosTable,
    questions: dict[str, Question],
    path: str | Path,
) -> None:
    records = [
        {
            "type": "reconstruction_summary",
            "iterations": result.iterations,
            "converged": result.converged,
            "questions": len(result.mos),
            "subjects": len(result.bias),
        }
    ]
    for question_id in sorted(result.mos):
        records.append({"type": "mos", "question_id": question_id, "mos": result.mos[question_id]})
    for subject_id in sorted(result.bias):
        records.append(
            {
                "type": "subject",
                "subject_id": subject_id,
                "bias": result.bias[subject_id],
                "consistency": result.consistency[subject_id],
                "residual_sd": result.residual_sd[subject_id],
            }
        )
    for source_id in sorted(dmos.reference_mos):
        records.append(
            {"type": "reference_mos", "source_id": source_id, "mos": dmos.reference_mos[source_id]}
        )
    for key in sorted(dmos.dmos):
        records.append({"type": "dmos", **_stimulus_fields(key), "dmos": dmos.dmos[key]})
    _write_lines(path, records)


def read_dmos(path: str | Path) -> dict[str, float]:
    return {
        record["stimulus"]: float(record["dmos"])
        for record in _read_lines(path)
        if record.get("type") == "dmos"
    }


def write_bootstrap(ci: BootstrapCI, path: str | Path) -> None:
    records = [
        {
            "type": "bootstrap_summary",
            "replicates": ci.replicates,
            "level": ci.level,
            "seed": ci.seed,
            "failed_replicates": ci.failed_replicates,
        }
    ]
    for key in sorted(ci.intervals):
        interval = ci.intervals[key]
        records.append(
            {
                "type": "ci",
                **_stimulus_fields(key),
                "point": interval.point,
                "lo": interval.lo,
                "hi": interval.hi,
            }
        )
    _write_lines(path, records)


def write_series(
    dmos: dict[str, float],
    path: str | Path,
    ci: BootstrapCI | None = None,
) -> None:
    """Plot-ready DMOS-vs-level series, one record per (source, codec) panel."""
    panels: dict[tuple[str, str], list[dict]] = {}
    for key in sorted(dmos):
        stimulus = Stimulus.from_key(key)
        point = {"level": stimulus.distortion_level, "dmos": dmos[key]}
        if ci is not None and key in ci.intervals:
            point["lo"] = ci.intervals[key].lo
            point["hi"] = ci.intervals[key].hi
        if stimulus.distortion_level == 0:
            # the pristine anchor is merged into every codec panel below
            panels.setdefault((stimulus.source_id, None), []).append(point)
            continue
        panels.setdefault((stimulus.source_id, stimulus.codec.value), []).append(point)

    records = []
    for source_id, codec in sorted(k for k in panels if k[1] is not None):
        points = panels[(source_id, codec)]
        anchor = panels.get((source_id, None), [])
        merged = sorted(anchor + points, key=lambda p: p["level"])
        records.append(
            {"type": "series", "source_id": source_id, "codec": codec, "points": merged}
        )
    _write_lines(path, records)


def write_fits(fits: dict[str, QuestionFit], path: str | Path) -> None:
    passed = sum(1 for f in fits.values() if f.gof is not None and f.gof.passed)
    total = sum(1 for f in fits.values() if f.gof is not None)
    records = [
        {
            "type": "fit_summary",
            "questions": len(fits),
            "gof_passed": passed,
            "gof_total": total,
            "gof_pass_rate": (passed / total) if total else None,
        }
    ]
    for question_id in sorted(fits):
        fit = fits[question_id]
        record = {
            "type": "beta_fit",
            "question_id": question_id,
            "source_id": fit.source_id,
            "codec": fit.codec,
            "distortion_level": fit.distortion_level,
            "error": fit.error,
        }
        if fit.fit is not None:
            record.update(
                alpha=fit.fit.alpha,
                beta=fit.fit.beta,
                method=fit.fit.method.value,
                loglik=fit.fit.loglik,
                n=fit.fit.n,
                shape=fit.shape.value if fit.shape else None,
            )
        if fit.gof is not None:
            record.update(
                gof_statistic=fit.gof.statistic,
                gof_dof=fit.gof.dof,
                gof_p=fit.gof.p_value,
                gof_passed=fit.gof.passed,
                bins_used=fit.gof.bins_used,
                insufficient_bins=fit.gof.insufficient_bins,
            )
        records.append(record)
    _write_lines(path, records)


def write_alignment(reports: list[AlignmentReport], path: str | Path) -> None:
    records = []
    for report in reports:
        for group_name in sorted(report.groups):
            group = report.groups[group_name]
            records.append(
                {
                    "type": "alignment_group",
                    "grouping": report.grouping.value,
                    "group": group_name,
                    "coeffs": list(group.cubic_coeffs),
                    "monotone": group.monotone,
                    "plcc": group.correlations.plcc,
                    "srocc": group.correlations.srocc,
                    "kendall": group.correlations.kendall_tau,
                    "raw_srocc": group.raw_srocc,
                    "raw_kendall": group.raw_kendall,
                    "n": group.correlations.n,
                }
            )
    for report in reports:
        for group_name in sorted(report.groups):
            group = report.groups[group_name]
            for key in group.stimuli:
                records.append(
                    {
                        "type": "mapped",
                        "grouping": report.grouping.value,
                        "group": group_name,
                        **_stimulus_fields(key),
                        "mapped": group.mapped[key],
                    }
                )
    _write_lines(path, records)


def write_recovery(metrics: RecoveryMetrics, path: str | Path) -> None:
    _write_lines(
        path,
        [
            {
                "type": "recovery_summary",
                "rmse": metrics.rmse,
                "bias_corr": metrics.bias_corr,
                "plcc": metrics.plcc,
            }
        ],
    )
