"""Study entities, configuration handling, and rating-file ingestion.

The on-disk rating format is line-delimited JSON with self-describing
records: ``{"type": "question", ...}`` lines declare the question pool
and ``{"type": "rating", ...}`` lines carry one response each. A study
configuration is a single JSON document listing sources, codecs, batches
and session rules.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path


class Codec(str, Enum):
    JPEG = "JPEG"
    JPEG2000 = "JPEG2000"
    AVIF = "AVIF"
    VVC_INTRA = "VVC_INTRA"
    JPEGXL = "JPEGXL"
    NONE = "NONE"


class QuestionKind(str, Enum):
    STUDY = "STUDY"
    TRAP_I = "TRAP_I"
    TRAP_II = "TRAP_II"


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DanglingReference(ValueError):
    def __init__(self, identifier: str):
        super().__init__(f"unresolved reference: {identifier}")
        self.identifier = identifier


class ScoreOutOfRange(ValueError):
    def __init__(self, value: float):
        super().__init__(f"score {value} outside [0, 100]")
        self.value = value


@dataclass(frozen=True)
class Stimulus:
    """One (source, codec, distortion level) image."""

    source_id: str
    codec: Codec
    distortion_level: int

    def __post_init__(self) -> None:
        if not self.source_id:
            raise ValueError("source_id must be non-empty")
        object.__setattr__(self, "codec", Codec(self.codec))
        if not 0 <= self.distortion_level <= 10:
            raise ValueError(f"distortion level {self.distortion_level} outside [0, 10]")
        if self.distortion_level == 0 and self.codec is not Codec.NONE:
            raise ValueError("level 0 denotes the pristine source; codec must be NONE")

    @property
    def key(self) -> str:
        return f"{self.source_id}:{self.codec.value}:{self.distortion_level}"

    @property
    def filename(self) -> str:
        return f"{self.source_id}_{self.codec.value}_{self.distortion_level}.png"

    @classmethod
    def pristine(cls, source_id: str) -> "Stimulus":
        return cls(source_id, Codec.NONE, 0)

    @classmethod
    def from_key(cls, key: str) -> "Stimulus":
        source_id, codec, level = key.rsplit(":", 2)
        return cls(source_id, Codec(codec), int(level))


@dataclass(frozen=True)
class Question:
    """A reference/test pair shown to raters; traps carry known answers."""

    question_id: str
    kind: QuestionKind
    reference: Stimulus
    test: Stimulus

    def __post_init__(self) -> None:
        if self.reference.distortion_level != 0:
            raise ValueError("reference must be the pristine (level 0) stimulus")
        if self.reference.source_id != self.test.source_id:
            raise ValueError("reference and test must share a source")
        if self.kind is QuestionKind.TRAP_I and self.test.distortion_level != 10:
            raise ValueError("type-I traps pair the reference with level 10")
        if self.kind is QuestionKind.TRAP_II and self.test.distortion_level != 0:
            raise ValueError("type-II traps pair the reference with itself")

    @classmethod
    def build(cls, kind: QuestionKind, test: Stimulus) -> "Question":
        prefix = {
            QuestionKind.STUDY: "study",
            QuestionKind.TRAP_I: "trap1",
            QuestionKind.TRAP_II: "trap2",
        }[kind]
        return cls(
            question_id=f"{prefix}:{test.key}",
            kind=kind,
            reference=Stimulus.pristine(test.source_id),
            test=test,
        )


@dataclass(frozen=True)
class Rating:
    subject_id: str
    batch_instance_id: str
    batch_id: str
    question_id: str
    score: float
    toggle_count: int = 0
    elapsed_ms: int = 0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        score = float(self.score)
        if not 0.0 <= score <= 100.0:
            raise ScoreOutOfRange(score)
        object.__setattr__(self, "score", score)
        if self.toggle_count < 0 or self.elapsed_ms < 0:
            raise ValueError("toggle_count and elapsed_ms must be non-negative")


@dataclass(frozen=True)
class BatchInstance:
    """One subject's pass over one batch; the unit of screening."""

    batch_instance_id: str
    subject_id: str
    batch_id: str
    rating_indices: tuple[int, ...]
    completed_at: float


@dataclass
class RatingTable:
    """Flat rating records cross-referenced against questions and instances."""

    ratings: list[Rating]
    questions: dict[str, Question]
    instances: dict[str, BatchInstance]

    @classmethod
    def build(cls, questions: dict[str, Question], ratings: list[Rating]) -> "RatingTable":
        for rating in ratings:
            if rating.question_id not in questions:
                raise DanglingReference(rating.question_id)
        instances: dict[str, BatchInstance] = {}
        grouped: dict[str, list[int]] = {}
        for idx, rating in enumerate(ratings):
            grouped.setdefault(rating.batch_instance_id, []).append(idx)
        for instance_id, indices in grouped.items():
            first = ratings[indices[0]]
            for idx in indices:
                if ratings[idx].subject_id != first.subject_id or ratings[idx].batch_id != first.batch_id:
                    raise MalformedRecord(
                        0, f"instance {instance_id} mixes subjects or batches"
                    )
            instances[instance_id] = BatchInstance(
                batch_instance_id=instance_id,
                subject_id=first.subject_id,
                batch_id=first.batch_id,
                rating_indices=tuple(indices),
                completed_at=max(ratings[idx].timestamp for idx in indices),
            )
        return cls(ratings=ratings, questions=dict(questions), instances=instances)

    def instance_ratings(self, instance_id: str) -> list[Rating]:
        instance = self.instances[instance_id]
        return [self.ratings[i] for i in instance.rating_indices]

    def filter_instances(self, keep: set[str]) -> "RatingTable":
        """Sub-table containing only the given batch instances.

        Questions no longer referenced by any remaining rating are dropped,
        so downstream per-question statistics never see empty questions.
        """
        ratings = [r for r in self.ratings if r.batch_instance_id in keep]
        used = {r.question_id for r in ratings}
        questions = {qid: q for qid, q in self.questions.items() if qid in used}
        return RatingTable.build(questions, ratings)


_RATING_FIELDS = (
    "subject_id",
    "batch_instance_id",
    "batch_id",
    "question_id",
    "score",
    "toggle_count",
    "elapsed_ms",
    "timestamp",
)


def _question_record(question: Question) -> dict:
    return {
        "type": "question",
        "question_id": question.question_id,
        "kind": question.kind.value,
        "source_id": question.test.source_id,
        "codec": question.test.codec.value,
        "distortion_level": question.test.distortion_level,
    }


def _rating_record(rating: Rating) -> dict:
    record = {"type": "rating"}
    for name in _RATING_FIELDS:
        record[name] = getattr(rating, name)
    return record


def dumps_ratings(table: RatingTable) -> str:
    """Serialize a table to the line-delimited record format (normalized order)."""
    lines = []
    for qid in sorted(table.questions):
        lines.append(json.dumps(_question_record(table.questions[qid])))
    for rating in table.ratings:
        lines.append(json.dumps(_rating_record(rating)))
    return "\n".join(lines) + ("\n" if lines else "")


def save_ratings(table: RatingTable, path: str | Path) -> None:
    """Write a table in the line-delimited record format (normalized order)."""
    Path(path).write_text(dumps_ratings(table), encoding="utf-8")


def parse_rating_lines(lines) -> RatingTable:
    questions: dict[str, Question] = {}
    ratings: list[Rating] = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict) or "type" not in record:
            raise MalformedRecord(line_no, "record must be an object with a 'type'")
        kind = record["type"]
        try:
            if kind == "question":
                question = Question(
                    question_id=str(record["question_id"]),
                    kind=QuestionKind(record["kind"]),
                    reference=Stimulus.pristine(str(record["source_id"])),
                    test=Stimulus(
                        str(record["source_id"]),
                        Codec(record["codec"]),
                        int(record["distortion_level"]),
                    ),
                )
                questions[question.question_id] = question
            elif kind == "rating":
                ratings.append(
                    Rating(
                        subject_id=str(record["subject_id"]),
                        batch_instance_id=str(record["batch_instance_id"]),
                        batch_id=str(record["batch_id"]),
                        question_id=str(record["question_id"]),
                        score=float(record["score"]),
                        toggle_count=int(record.get("toggle_count", 0)),
                        elapsed_ms=int(record.get("elapsed_ms", 0)),
                        timestamp=float(record.get("timestamp", 0.0)),
                    )
                )
            else:
                raise MalformedRecord(line_no, f"unknown record type {kind!r}")
        except ScoreOutOfRange:
            raise
        except MalformedRecord:
            raise
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(line_no, str(exc)) from exc
    return RatingTable.build(questions, ratings)


def load_ratings(path: str | Path) -> RatingTable:
    """Load and cross-reference a rating table file."""
    with open(path, encoding="utf-8") as handle:
        return parse_rating_lines(handle)


@dataclass(frozen=True)
class BatchDef:
    batch_id: str
    questions: tuple[Question, ...]


@dataclass(frozen=True)
class AcuityPlate:
    plate_id: str
    image: str
    answer: str


@dataclass(frozen=True)
class TrainingItem:
    question_id: str
    expected_lo: float
    expected_hi: float


@dataclass(frozen=True)
class SessionRules:
    traps_per_batch: int = 10
    trap_split: tuple[int, int] = (5, 5)  # (type I, type II)
    study_per_batch: int = 79
    min_resolution: tuple[int, int] = (1920, 1080)
    break_seconds: int = 180
    batches_per_session: int = 2
    acuity_plates: tuple[AcuityPlate, ...] = ()
    training_items: tuple[TrainingItem, ...] = ()


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    sources: tuple[str, ...]
    codecs: tuple[Codec, ...]
    levels: int
    batches: tuple[BatchDef, ...]
    rules: SessionRules = SessionRules()
    asset_dir: str | None = None

    def question_pool(self) -> dict[str, Question]:
        pool: dict[str, Question] = {}
        for batch in self.batches:
            for question in batch.questions:
                pool[question.question_id] = question
        return pool


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def default_study_config(
    sources=("2", "6", "7", "9", "10"),
    codecs=(Codec.JPEG, Codec.JPEG2000, Codec.AVIF, Codec.VVC_INTRA, Codec.JPEGXL),
    levels: int = 10,
    n_batches: int = 4,
    rules: SessionRules | None = None,
    seed: int = 0,
    study_id: str = "idsqs-study",
    asset_dir: str | None = None,
) -> StudyConfig:
    """Generate a study configuration with the default batch composition.

    All distorted stimuli are spread round-robin over the batches; batches
    are then padded with repeated stimuli (drawn from the other batches)
    until each holds `study_per_batch` study questions, so a question may
    appear in more than one batch.
    """
    caller_rules = rules
    rules = rules or SessionRules()
    codecs = tuple(Codec(c) for c in codecs)
    rng = random.Random(seed)

    stimuli = [
        Stimulus(source, codec, level)
        for source in sources
        for codec in codecs
        if codec is not Codec.NONE
        for level in range(1, levels + 1)
    ]
    rng.shuffle(stimuli)

    distorting = [c for c in codecs if c is not Codec.NONE]
    study_target = min(rules.study_per_batch, len(stimuli))
    trap1_pool = [(s, c) for s in sources for c in distorting]
    n_trap1 = min(rules.trap_split[0], len(trap1_pool))
    n_trap2 = min(rules.trap_split[1], len(sources))
    if caller_rules is None and (
        study_target != rules.study_per_batch or (n_trap1, n_trap2) != tuple(rules.trap_split)
    ):
        rules = replace(
            rules,
            study_per_batch=study_target,
            trap_split=(n_trap1, n_trap2),
            traps_per_batch=n_trap1 + n_trap2,
        )

    per_batch: list[list[Stimulus]] = [[] for _ in range(n_batches)]
    for idx, stimulus in enumerate(stimuli):
        per_batch[idx % n_batches].append(stimulus)

    batches = []
    for b in range(n_batches):
        chosen = list(per_batch[b])
        others = [s for s in stimuli if s not in chosen]
        rng.shuffle(others)
        while len(chosen) < study_target and others:
            chosen.append(others.pop())
        questions = [Question.build(QuestionKind.STUDY, s) for s in chosen]
        for source, codec in rng.sample(trap1_pool, n_trap1):
            questions.append(Question.build(QuestionKind.TRAP_I, Stimulus(source, codec, 10)))
        for source in rng.sample(list(sources), n_trap2):
            questions.append(Question.build(QuestionKind.TRAP_II, Stimulus.pristine(source)))
        batches.append(BatchDef(batch_id=f"batch-{b + 1}", questions=tuple(questions)))

    return StudyConfig(
        study_id=study_id,
        sources=tuple(sources),
        codecs=codecs,
        levels=levels,
        batches=tuple(batches),
        rules=rules,
        asset_dir=asset_dir,
    )


def validate_study_config(config: StudyConfig) -> list[Violation]:
    """Check composition rules and asset availability; violations returned."""
    violations: list[Violation] = []
    for batch in config.batches:
        traps = [q for q in batch.questions if q.kind is not QuestionKind.STUDY]
        study = [q for q in batch.questions if q.kind is QuestionKind.STUDY]
        if not traps:
            violations.append(Violation("MissingTraps", f"batch {batch.batch_id} has no trap questions"))
        elif len(traps) < config.rules.traps_per_batch:
            violations.append(
                Violation(
                    "TrapShortfall",
                    f"batch {batch.batch_id} has {len(traps)} traps, expected {config.rules.traps_per_batch}",
                )
            )
        if len(study) != config.rules.study_per_batch:
            violations.append(
                Violation(
                    "StudyCountMismatch",
                    f"batch {batch.batch_id} has {len(study)} study questions, expected {config.rules.study_per_batch}",
                )
            )
        seen: set[str] = set()
        for question in batch.questions:
            if question.question_id in seen:
                violations.append(
                    Violation("DuplicateQuestion", f"{question.question_id} repeats in {batch.batch_id}")
                )
            seen.add(question.question_id)

    if config.asset_dir is not None:
        asset_dir = Path(config.asset_dir)
        needed: set[str] = set()
        for batch in config.batches:
            for question in batch.questions:
                needed.add(question.reference.filename)
                needed.add(question.test.filename)
        for plate in config.rules.acuity_plates:
            needed.add(plate.image)
        for filename in sorted(needed):
            if not (asset_dir / filename).is_file():
                violations.append(Violation("MissingAsset", str(asset_dir / filename)))
    return violations


def _config_to_json(config: StudyConfig) -> dict:
    return {
        "study_id": config.study_id,
        "sources": list(config.sources),
        "codecs": [c.value for c in config.codecs],
        "levels": config.levels,
        "asset_dir": config.asset_dir,
        "rules": {
            "traps_per_batch": config.rules.traps_per_batch,
            "trap_split": list(config.rules.trap_split),
            "study_per_batch": config.rules.study_per_batch,
            "min_resolution": list(config.rules.min_resolution),
            "break_seconds": config.rules.break_seconds,
            "batches_per_session": config.rules.batches_per_session,
            "acuity_plates": [
                {"plate_id": p.plate_id, "image": p.image, "answer": p.answer}
                for p in config.rules.acuity_plates
            ],
            "training_items": [
                {
                    "question_id": t.question_id,
                    "expected_lo": t.expected_lo,
                    "expected_hi": t.expected_hi,
                }
                for t in config.rules.training_items
            ],
        },
        "batches": [
            {
                "batch_id": batch.batch_id,
                "questions": [
                    {
                        "question_id": q.question_id,
                        "kind": q.kind.value,
                        "source_id": q.test.source_id,
                        "codec": q.test.codec.value,
                        "distortion_level": q.test.distortion_level,
                    }
                    for q in batch.questions
                ],
            }
            for batch in config.batches
        ],
    }


def save_study_config(config: StudyConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_config_to_json(config), indent=2) + "\n", encoding="utf-8")


def load_study_config(path: str | Path) -> StudyConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rules_data = data.get("rules", {})
    rules = SessionRules(
        traps_per_batch=int(rules_data.get("traps_per_batch", 10)),
        trap_split=tuple(rules_data.get("trap_split", (5, 5))),
        study_per_batch=int(rules_data.get("study_per_batch", 79)),
        min_resolution=tuple(rules_data.get("min_resolution", (1920, 1080))),
        break_seconds=int(rules_data.get("break_seconds", 180)),
        batches_per_session=int(rules_data.get("batches_per_session", 2)),
        acuity_plates=tuple(
            AcuityPlate(str(p["plate_id"]), str(p["image"]), str(p["answer"]))
            for p in rules_data.get("acuity_plates", ())
        ),
        training_items=tuple(
            TrainingItem(str(t["question_id"]), float(t["expected_lo"]), float(t["expected_hi"]))
            for t in rules_data.get("training_items", ())
        ),
    )
    batches = []
    for batch_data in data["batches"]:
        questions = tuple(
            Question(
                question_id=str(q["question_id"]),
                kind=QuestionKind(q["kind"]),
                reference=Stimulus.pristine(str(q["source_id"])),
                test=Stimulus(str(q["source_id"]), Codec(q["codec"]), int(q["distortion_level"])),
            )
            for q in batch_data["questions"]
        )
        batches.append(BatchDef(batch_id=str(batch_data["batch_id"]), questions=questions))
    return StudyConfig(
        study_id=str(data["study_id"]),
        sources=tuple(str(s) for s in data["sources"]),
        codecs=tuple(Codec(c) for c in data["codecs"]),
        levels=int(data.get("levels", 10)),
        batches=tuple(batches),
        rules=rules,
        asset_dir=data.get("asset_dir"),
    )
