"""Command line for the whole workflow.

Every stage is a standalone subcommand with explicit --in/--out paths;
`run --manifest` executes a declarative sequence of stages (cleansing
before outlier removal before reconstruction, strictly) with one seed
controlling all randomness.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click

from . import alignment as alignment_mod
from . import distfit as distfit_mod
from . import reconstruction as recon_mod
from . import reports
from . import screening as screening_mod
from . import simulator as simulator_mod
from .domain import (
    Codec,
    Question,
    QuestionKind,
    Rating,
    RatingTable,
    Stimulus,
    default_study_config,
    load_ratings,
    load_study_config,
    save_ratings,
    save_study_config,
    validate_study_config,
)

STAGE_ORDER = (
    "simulate",
    "ingest",
    "clean",
    "outliers",
    "reconstruct",
    "bootstrap",
    "fit-beta",
    "align",
)


class StageError(click.ClickException):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@click.group()
def main():
    """Double-stimulus image quality studies: run, screen, reconstruct, fit, align."""


# ----- simulate ------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--config-out", type=click.Path(), default=None, help="Write the generated config here.")
@click.option("--truth", "truth_path", type=click.Path(exists=True), default=None)
@click.option("--truth-out", type=click.Path(), default=None, help="Write the generated truth here.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--raters", type=int, default=45, show_default=True)
@click.option("--clickers", type=int, default=0, show_default=True)
@click.option("--bias-sd", type=float, default=5.0, show_default=True)
@click.option("--residual-sd-lo", type=float, default=2.0, show_default=True)
@click.option("--residual-sd-hi", type=float, default=15.0, show_default=True)
def simulate(config_path, config_out, truth_path, truth_out, out_path, seed,
             raters, clickers, bias_sd, residual_sd_lo, residual_sd_hi):
    """Generate a synthetic rating table with known ground truth."""
    table, _, _ = _run_simulate(
        config_path, config_out, truth_path, truth_out, out_path, seed,
        raters, clickers, bias_sd, (residual_sd_lo, residual_sd_hi),
    )
    click.echo(f"simulate: {len(table.ratings)} ratings, {len(table.instances)} instances -> {out_path}")


def _run_simulate(config_path, config_out, truth_path, truth_out, out_path, seed,
                  raters, clickers, bias_sd, residual_sd_range):
    if config_path:
        config = load_study_config(config_path)
    else:
        config = default_study_config(seed=seed)
    if config_out:
        save_study_config(config, config_out)
    violations = validate_study_config(config)
    # missing image assets do not matter for simulation
    hard = [v for v in violations if v.code != "MissingAsset"]
    if hard:
        raise StageError("simulate", "; ".join(f"{v.code}: {v.detail}" for v in hard))

    if truth_path:
        truth = simulator_mod.load_truth(truth_path)
    else:
        truth = simulator_mod.GroundTruth(
            true_quality=simulator_mod.default_truth(config),
            profiles=simulator_mod.default_profiles(
                raters, clickers, bias_sd=bias_sd,
                residual_sd_range=residual_sd_range, seed=seed,
            ),
        )
    truth.check()
    if truth_out:
        simulator_mod.save_truth(truth, truth_out)
    table = simulator_mod.simulate(config, truth, seed=seed)
    save_ratings(table, out_path)
    return table, config, truth


# ----- ingest --------------------------------------------------------

CSV_COLUMNS = (
    "subject_id",
    "batch_instance_id",
    "batch_id",
    "question_kind",
    "source_id",
    "codec",
    "distortion_level",
    "score",
)


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--format", "in_format", type=click.Choice(["jsonl", "csv"]), default="jsonl",
              show_default=True, help="csv expects the adapter columns documented in the README.")
def ingest(in_path, out_path, in_format):
    """Validate an external rating file and emit the normalized table."""
    if in_format == "jsonl":
        table = load_ratings(in_path)
    else:
        table = _ingest_csv(in_path)
    save_ratings(table, out_path)
    click.echo(
        f"ingest: {len(table.ratings)} ratings, {len(table.instances)} instances, "
        f"{len(table.questions)} questions -> {out_path}"
    )


def _ingest_csv(path) -> RatingTable:
    questions: dict[str, Question] = {}
    ratings: list[Rating] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise click.ClickException(f"csv missing columns: {sorted(missing)}")
        for row in reader:
            kind = QuestionKind(row["question_kind"])
            test = Stimulus(row["source_id"], Codec(row["codec"]), int(row["distortion_level"]))
            question = Question.build(kind, test)
            questions.setdefault(question.question_id, question)
            ratings.append(
                Rating(
                    subject_id=row["subject_id"],
                    batch_instance_id=row["batch_instance_id"],
                    batch_id=row["batch_id"],
                    question_id=question.question_id,
                    score=float(row["score"]),
                    toggle_count=int(row.get("toggle_count") or 0),
                    elapsed_ms=int(row.get("elapsed_ms") or 0),
                    timestamp=float(row.get("timestamp") or 0.0),
                )
            )
    return RatingTable.build(questions, ratings)


# ----- screening stages ----------------------------------------------


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--bins", type=int, default=100, show_default=True)
def clean(in_path, out_path, bins):
    """Discard batch instances with low trap accuracy (histogram threshold)."""
    table = load_ratings(in_path)
    report = screening_mod.cleanse(table, bins=bins)
    reports.write_cleansing(report, out_path)
    click.echo(
        f"clean: threshold {report.threshold:.2f}; kept {len(report.kept)}"
        f" / discarded {len(report.discarded)} of {len(table.instances)} -> {out_path}"
    )


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--kept", "kept_path", type=click.Path(exists=True), default=None,
              help="Cleansing report; omit to consider every instance.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def outliers(in_path, kept_path, out_path):
    """Remove instances whose scores disagree with the consensus."""
    table = load_ratings(in_path)
    kept = reports.read_kept(kept_path) if kept_path else set(table.instances)
    report = screening_mod.remove_outliers(table, kept)
    reports.write_outliers(report, out_path)
    click.echo(
        f"outliers: cutoff {report.cutoff:.3f}; removed {len(report.removed)},"
        f" remaining {len(report.kept)} -> {out_path}"
    )


# ----- reconstruction ------------------------------------------------


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--kept", "kept_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--series-out", type=click.Path(), default=None)
@click.option("--epsilon", type=float, default=1e-6, show_default=True)
@click.option("--max-iter", type=int, default=1000, show_default=True)
def reconstruct(in_path, kept_path, out_path, series_out, epsilon, max_iter):
    """Estimate bias-corrected quality scores and DMOS."""
    table = _load_screened(in_path, kept_path)
    result = recon_mod.reconstruct(table, epsilon=epsilon, max_iter=max_iter)
    dmos = recon_mod.compute_dmos(result, table.questions)
    reports.write_reconstruction(result, dmos, table.questions, out_path)
    if series_out:
        reports.write_series(dmos.dmos, series_out)
    click.echo(
        f"reconstruct: {len(result.mos)} questions, {len(result.bias)} subjects,"
        f" {result.iterations} iterations, converged={result.converged} -> {out_path}"
    )


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--kept", "kept_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--series-out", type=click.Path(), default=None)
@click.option("--replicates", type=int, default=1000, show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def bootstrap(in_path, kept_path, out_path, series_out, replicates, level, seed):
    """Resample ratings per question and report DMOS confidence intervals."""
    table = _load_screened(in_path, kept_path)
    ci = recon_mod.bootstrap_ci(table, replicates=replicates, level=level, seed=seed)
    reports.write_bootstrap(ci, out_path)
    if series_out:
        point = {key: interval.point for key, interval in ci.intervals.items()}
        reports.write_series(point, series_out, ci=ci)
    click.echo(
        f"bootstrap: {ci.replicates} replicates at level {ci.level}"
        f" ({ci.failed_replicates} non-converged) -> {out_path}"
    )


def _load_screened(in_path, kept_path) -> RatingTable:
    table = load_ratings(in_path)
    if kept_path:
        table = table.filter_instances(reports.read_kept(kept_path))
    return table


# ----- distribution fits ---------------------------------------------


@main.command(name="fit-beta")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--kept", "kept_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--significance", type=float, default=0.05, show_default=True)
def fit_beta(in_path, kept_path, out_path, significance):
    """Fit a Beta distribution to each question's normalized scores."""
    table = load_ratings(in_path)
    kept = reports.read_kept(kept_path) if kept_path else set(table.instances)
    fits = distfit_mod.fit_all_questions(table, kept, significance=significance)
    reports.write_fits(fits, out_path)
    passed = sum(1 for f in fits.values() if f.gof is not None and f.gof.passed)
    total = sum(1 for f in fits.values() if f.gof is not None)
    rate = f"{100.0 * passed / total:.1f}%" if total else "n/a"
    click.echo(f"fit-beta: {len(fits)} questions, GOF pass rate {rate} -> {out_path}")


# ----- alignment ------------------------------------------------------


@main.command()
@click.option("--dmos", "dmos_path", type=click.Path(exists=True), required=True,
              help="Reconstruction report with dmos records.")
@click.option("--jnd", "jnd_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--grouping", type=click.Choice(["pooled", "per-source", "both"]),
              default="both", show_default=True)
def align(dmos_path, jnd_path, out_path, grouping):
    """Map DMOS onto the JND reference scale and report correlations."""
    dmos = reports.read_dmos(dmos_path)
    jnd = alignment_mod.JndTable.load(jnd_path)
    results = []
    if grouping in ("pooled", "both"):
        results.append(alignment_mod.align(dmos, jnd, alignment_mod.Grouping.POOLED))
    if grouping in ("per-source", "both"):
        results.append(alignment_mod.align(dmos, jnd, alignment_mod.Grouping.PER_SOURCE))
    reports.write_alignment(results, out_path)
    for report in results:
        for name in sorted(report.groups):
            group = report.groups[name]
            click.echo(
                f"align[{report.grouping.value}:{name}] plcc={group.correlations.plcc:.3f}"
                f" srocc={group.correlations.srocc:.3f} kendall={group.correlations.kendall_tau:.3f}"
                f" n={group.correlations.n}"
            )


# ----- report ---------------------------------------------------------

STAGE_FILES = {
    "cleansing": "cleansing.jsonl",
    "outliers": "outliers.jsonl",
    "reconstruction": "recon.jsonl",
    "bootstrap": "ci.jsonl",
    "fits": "fits.jsonl",
    "alignment": "alignment.jsonl",
    "recovery": "recovery.jsonl",
}


@main.command()
@click.option("--in-dir", "in_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def report(in_dir, out_path):
    """Combine stage outputs from a directory into one summary."""
    summary = build_summary(Path(in_dir))
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


def build_summary(directory: Path) -> dict:
    summary: dict = {}
    for name, filename in STAGE_FILES.items():
        path = directory / filename
        if path.is_file():
            record = reports.read_summary(path)
            record.pop("type", None)
            summary[name] = record
    alignment_path = directory / STAGE_FILES["alignment"]
    if alignment_path.is_file():
        groups = [
            r for r in reports._read_lines(alignment_path) if r.get("type") == "alignment_group"
        ]
        summary["alignment"] = {
            f"{g['grouping']}:{g['group']}": {
                "plcc": g["plcc"], "srocc": g["srocc"], "kendall": g["kendall"], "n": g["n"]
            }
            for g in groups
        }
    return summary


# ----- serve ----------------------------------------------------------


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--log", "log_path", type=click.Path(), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8600, show_default=True)
@click.option("--seed", type=int, default=None)
def serve(config_path, log_path, host, port, seed):
    """Run the study service (sessions, gates, questions, export)."""
    import uvicorn

    from .service import StudyService, create_app

    config = load_study_config(config_path)
    service = StudyService(config, log_path, seed=seed)
    app = create_app(service)
    uvicorn.run(app, host=host, port=port)


# ----- manifest runner -------------------------------------------------


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
def run(manifest_path):
    """Execute a full pipeline described by a manifest file."""
    summary_path = run_pipeline(Path(manifest_path))
    click.echo(f"pipeline complete -> {summary_path}")


def run_pipeline(manifest_path: Path) -> Path:
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    seed = int(manifest.get("seed", 0))
    params = manifest.get("parameters", {})
    stages = manifest.get("stages", [])
    if not stages:
        raise click.ClickException("manifest has no stages")

    names = [s.get("stage") for s in stages]
    indices = []
    for name in names:
        if name not in STAGE_ORDER:
            raise click.ClickException(f"unknown stage {name!r}")
        indices.append(STAGE_ORDER.index(name))
    if indices != sorted(indices) or len(set(indices)) != len(indices):
        raise click.ClickException(
            "stage order must follow: " + " -> ".join(STAGE_ORDER)
        )

    def resolve(value):
        return base / value if value else None

    truth_path = None
    for stage in stages:
        name = stage["stage"]
        try:
            if name == "simulate":
                _run_simulate(
                    resolve(stage.get("config")),
                    resolve(stage.get("config_out")),
                    resolve(stage.get("truth")),
                    resolve(stage.get("truth_out") or "truth.json"),
                    resolve(stage["out"]),
                    int(stage.get("seed", seed)),
                    int(stage.get("raters", 45)),
                    int(stage.get("clickers", 0)),
                    float(stage.get("bias_sd", 5.0)),
                    (float(stage.get("residual_sd_lo", 2.0)), float(stage.get("residual_sd_hi", 15.0))),
                )
                truth_path = resolve(stage.get("truth") or stage.get("truth_out") or "truth.json")
            elif name == "ingest":
                table = (
                    _ingest_csv(resolve(stage["in"]))
                    if stage.get("format") == "csv"
                    else load_ratings(resolve(stage["in"]))
                )
                save_ratings(table, resolve(stage["out"]))
            elif name == "clean":
                table = load_ratings(resolve(stage["in"]))
                report = screening_mod.cleanse(table, bins=int(params.get("otsu_bins", 100)))
                reports.write_cleansing(report, resolve(stage["out"]))
            elif name == "outliers":
                table = load_ratings(resolve(stage["in"]))
                kept = (
                    reports.read_kept(resolve(stage["kept"]))
                    if stage.get("kept")
                    else set(table.instances)
                )
                report = screening_mod.remove_outliers(table, kept)
                reports.write_outliers(report, resolve(stage["out"]))
            elif name == "reconstruct":
                table = _load_screened(resolve(stage["in"]), resolve(stage.get("kept")))
                result = recon_mod.reconstruct(
                    table,
                    epsilon=float(params.get("epsilon", 1e-6)),
                    max_iter=int(params.get("max_iter", 1000)),
                )
                dmos = recon_mod.compute_dmos(result, table.questions)
                reports.write_reconstruction(result, dmos, table.questions, resolve(stage["out"]))
                if stage.get("series_out"):
                    reports.write_series(dmos.dmos, resolve(stage["series_out"]))
                if truth_path and truth_path.exists():
                    truth = simulator_mod.load_truth(truth_path)
                    metrics = simulator_mod.evaluate_recovery(truth, result, table.questions)
                    reports.write_recovery(metrics, base / "recovery.jsonl")
            elif name == "bootstrap":
                table = _load_screened(resolve(stage["in"]), resolve(stage.get("kept")))
                ci = recon_mod.bootstrap_ci(
                    table,
                    replicates=int(stage.get("replicates", params.get("replicates", 1000))),
                    level=float(params.get("level", 0.95)),
                    seed=int(stage.get("seed", seed)),
                )
                reports.write_bootstrap(ci, resolve(stage["out"]))
                if stage.get("series_out"):
                    point = {key: i.point for key, i in ci.intervals.items()}
                    reports.write_series(point, resolve(stage["series_out"]), ci=ci)
            elif name == "fit-beta":
                table = load_ratings(resolve(stage["in"]))
                kept = (
                    reports.read_kept(resolve(stage["kept"]))
                    if stage.get("kept")
                    else set(table.instances)
                )
                fits = distfit_mod.fit_all_questions(
                    table, kept, significance=float(params.get("significance", 0.05))
                )
                reports.write_fits(fits, resolve(stage["out"]))
            elif name == "align":
                dmos = reports.read_dmos(resolve(stage["dmos"]))
                jnd = alignment_mod.JndTable.load(resolve(stage["jnd"]))
                mode = stage.get("grouping", "both")
                results = []
                if mode in ("pooled", "both"):
                    results.append(alignment_mod.align(dmos, jnd, alignment_mod.Grouping.POOLED))
                if mode in ("per-source", "both"):
                    results.append(alignment_mod.align(dmos, jnd, alignment_mod.Grouping.PER_SOURCE))
                reports.write_alignment(results, resolve(stage["out"]))
        except click.ClickException:
            raise
        except Exception as exc:
            raise StageError(name, str(exc)) from exc

    summary = build_summary(base)
    summary_path = base / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary_path


if __name__ == "__main__":
    main()
