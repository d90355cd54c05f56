"""HTTP study runner: sessions, gates, question flow, durable responses.

All state changes funnel through a single event applier fed from an
append-only JSONL log. Live requests validate, append (flush + fsync),
then apply; startup replays the log through the same applier, so a
rebuilt service is indistinguishable from one that never stopped.

Clients never learn whether a question is a trap: payloads carry only
opaque per-question stimulus URLs and the same fields for every kind.
"""

import json
import math
import os
import random
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .domain import Question, Rating, RatingTable, StudyConfig, dumps_ratings


class Phase(str, Enum):
    CONSENT = "CONSENT"
    ACUITY = "ACUITY"
    TRAINING = "TRAINING"
    BATCH_1 = "BATCH_1"
    BREAK = "BREAK"
    BATCH_2 = "BATCH_2"
    DONE = "DONE"
    REJECTED = "REJECTED"


class ServiceError(Exception):
    code = "SERVICE_ERROR"
    http_status = 400

    def __init__(self, detail: str = "", **extra):
        super().__init__(detail or self.code)
        self.detail = detail or self.code
        self.extra = extra


class SessionNotFound(ServiceError):
    code = "SESSION_NOT_FOUND"
    http_status = 404


class UnknownStudy(ServiceError):
    code = "UNKNOWN_STUDY"
    http_status = 404


class DuplicateSubject(ServiceError):
    code = "DUPLICATE_SUBJECT"
    http_status = 409


class InsufficientDisplay(ServiceError):
    code = "INSUFFICIENT_DISPLAY"
    http_status = 403


class PhaseViolation(ServiceError):
    code = "PHASE_VIOLATION"
    http_status = 409


class OutOfOrder(ServiceError):
    code = "OUT_OF_ORDER"
    http_status = 409


class DuplicateResponse(ServiceError):
    code = "DUPLICATE_RESPONSE"
    http_status = 409


class ScoreOutOfRangeError(ServiceError):
    code = "SCORE_OUT_OF_RANGE"
    http_status = 422


class InvalidPayload(ServiceError):
    code = "INVALID_PAYLOAD"
    http_status = 422


class Rejected(ServiceError):
    code = "REJECTED"
    http_status = 403


class AssetUnavailable(ServiceError):
    code = "ASSET_UNAVAILABLE"
    http_status = 404


@dataclass(frozen=True)
class StoredResponse:
    question_id: str
    batch_id: str
    score: float
    toggle_count: int
    elapsed_ms: int
    timestamp: float


@dataclass
class SessionState:
    session_id: str
    subject_id: str
    client_metadata: dict
    created_at: float
    phase: Phase = Phase.CONSENT
    assigned_batches: tuple[str, ...] = ()
    question_order: dict[str, tuple[str, ...]] = field(default_factory=dict)
    cursor: int = 0
    break_started_at: float | None = None
    training_passed: frozenset = frozenset()
    responses: tuple[StoredResponse, ...] = ()

    def current_batch_id(self) -> str | None:
        if self.phase is Phase.BATCH_1:
            return self.assigned_batches[0]
        if self.phase is Phase.BATCH_2:
            return self.assigned_batches[1]
        return None

    def answered_ids(self) -> set[str]:
        return {r.question_id for r in self.responses}


GATES = ("consent", "acuity", "training")


class StudyService:
    """Event-sourced core; the HTTP layer is a thin adapter over this."""

    def __init__(
        self,
        config: StudyConfig,
        log_path: str | Path,
        clock=time.time,
        seed: int | None = None,
    ):
        self.config = config
        self.log_path = Path(log_path)
        self.clock = clock
        self.rng = random.Random(seed)
        self.questions = config.question_pool()
        self.sessions: dict[str, SessionState] = {}
        self.subject_index: dict[str, str] = {}
        self.assignment_counts: dict[str, int] = {b.batch_id: 0 for b in config.batches}
        self.session_order: list[str] = []
        self._lock = threading.RLock()
        self._log_handle = None
        if self.log_path.exists():
            self._replay()

    # ----- event log -------------------------------------------------

    def _replay(self) -> None:
        with open(self.log_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _append(self, event: dict) -> None:
        if self._log_handle is None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self._log_handle = open(self.log_path, "a", encoding="utf-8")
        self._log_handle.write(json.dumps(event) + "\n")
        self._log_handle.flush()
        os.fsync(self._log_handle.fileno())

    def _commit(self, event: dict) -> None:
        # write-ahead: the event is durable before any state changes
        self._append(event)
        self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "session_created":
            state = SessionState(
                session_id=event["session_id"],
                subject_id=event["subject_id"],
                client_metadata=event["client_metadata"],
                created_at=event["ts"],
                assigned_batches=tuple(event["assigned_batches"]),
                question_order={
                    batch_id: tuple(order)
                    for batch_id, order in event["question_order"].items()
                },
            )
            self.sessions[state.session_id] = state
            self.subject_index[state.subject_id] = state.session_id
            self.session_order.append(state.session_id)
            for batch_id in state.assigned_batches:
                self.assignment_counts[batch_id] += 1
            return

        state = self.sessions[event["session_id"]]
        if kind == "session_rejected":
            state.phase = Phase.REJECTED
        elif kind == "gate_passed":
            gate = event["gate"]
            if gate == "consent":
                state.phase = Phase.ACUITY
            elif gate == "acuity":
                state.phase = Phase.TRAINING
            elif gate == "training":
                state.phase = Phase.BATCH_1
                state.cursor = 0
        elif kind == "training_item":
            if event["passed"]:
                state.training_passed = state.training_passed | {event["item_id"]}
            items = {t.question_id for t in self.config.rules.training_items}
            if items and items <= state.training_passed:
                state.phase = Phase.BATCH_1
                state.cursor = 0
        elif kind == "response_accepted":
            batch_id = state.current_batch_id()
            state.responses = state.responses + (
                StoredResponse(
                    question_id=event["question_id"],
                    batch_id=batch_id,
                    score=event["score"],
                    toggle_count=event["toggle_count"],
                    elapsed_ms=event["elapsed_ms"],
                    timestamp=event["ts"],
                ),
            )
            state.cursor += 1
            if batch_id is not None and state.cursor >= len(state.question_order[batch_id]):
                if state.phase is Phase.BATCH_1 and len(state.assigned_batches) > 1:
                    state.phase = Phase.BREAK
                    state.break_started_at = event["ts"]
                else:
                    state.phase = Phase.DONE
        elif kind == "second_batch":
            if event["accepted"]:
                state.phase = Phase.BATCH_2
                state.cursor = 0
            else:
                state.phase = Phase.DONE

    # ----- helpers ---------------------------------------------------

    def _session(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise SessionNotFound(f"no session {session_id}")
        return state

    def alias_maps(self, state: SessionState) -> tuple[dict[str, str], dict[tuple[str, str], str]]:
        """Opaque client-facing item names for a session.

        True question ids encode stimulus and kind, which must never reach
        a client, so every payload speaks in per-session aliases: position
        `p` of assigned batch `n` is "b{n}-q{p}", training item `i` is
        "t{i}". Returns (alias -> question_id, (batch_id, question_id) -> alias).
        """
        alias_to_qid: dict[str, str] = {}
        key_to_alias: dict[tuple[str, str], str] = {}
        for n, batch_id in enumerate(state.assigned_batches, start=1):
            for p, question_id in enumerate(state.question_order[batch_id]):
                alias = f"b{n}-q{p:03d}"
                alias_to_qid[alias] = question_id
                key_to_alias[(batch_id, question_id)] = alias
        for i, item in enumerate(self.config.rules.training_items):
            alias = f"t{i:02d}"
            alias_to_qid[alias] = item.question_id
            key_to_alias[("training", item.question_id)] = alias
        return alias_to_qid, key_to_alias

    def _question_payload(self, state: SessionState) -> dict:
        batch_id = state.current_batch_id()
        order = state.question_order[batch_id]
        batch_number = 1 if state.phase is Phase.BATCH_1 else 2
        alias = f"b{batch_number}-q{state.cursor:03d}"
        return {
            "directive": "question",
            "question_id": alias,
            "reference_url": f"/sessions/{state.session_id}/stimuli/{alias}/reference",
            "test_url": f"/sessions/{state.session_id}/stimuli/{alias}/test",
            "index": state.cursor,
            "total": len(order),
            "batch_number": batch_number,
        }

    # ----- operations ------------------------------------------------

    def create_session(self, subject_id: str, client_metadata: dict) -> SessionState:
        with self._lock:
            if not subject_id:
                raise InvalidPayload("subject_id must be non-empty")
            if subject_id in self.subject_index:
                raise DuplicateSubject(f"subject {subject_id} already has a session")
            resolution = client_metadata.get("resolution")
            min_w, min_h = self.config.rules.min_resolution
            if (
                not isinstance(resolution, (list, tuple))
                or len(resolution) != 2
                or int(resolution[0]) < min_w
                or int(resolution[1]) < min_h
            ):
                raise InsufficientDisplay(
                    f"display must report at least {min_w}x{min_h}"
                )

            per_session = min(self.config.rules.batches_per_session, len(self.config.batches))
            pool = sorted(
                self.assignment_counts,
                key=lambda b: (self.assignment_counts[b], self.rng.random()),
            )
            assigned = pool[:per_session]
            order = {}
            for batch_id in assigned:
                batch = next(b for b in self.config.batches if b.batch_id == batch_id)
                ids = [q.question_id for q in batch.questions]
                self.rng.shuffle(ids)
                order[batch_id] = ids

            event = {
                "event": "session_created",
                "ts": self.clock(),
                "session_id": uuid.UUID(int=self.rng.getrandbits(128), version=4).hex,
                "subject_id": subject_id,
                "client_metadata": dict(client_metadata),
                "assigned_batches": assigned,
                "question_order": order,
            }
            self._commit(event)
            return self.sessions[event["session_id"]]

    def next_question(self, session_id: str) -> dict:
        with self._lock:
            state = self._session(session_id)
            phase = state.phase
            if phase is Phase.CONSENT:
                return {"directive": "consent"}
            if phase is Phase.ACUITY:
                return {
                    "directive": "acuity",
                    "plates": [
                        {"plate_id": p.plate_id, "image_url": f"/assets/{p.image}"}
                        for p in self.config.rules.acuity_plates
                    ],
                }
            if phase is Phase.TRAINING:
                return {
                    "directive": "training",
                    "items": [
                        {
                            "question_id": f"t{i:02d}",
                            "reference_url": f"/sessions/{session_id}/stimuli/t{i:02d}/reference",
                            "test_url": f"/sessions/{session_id}/stimuli/t{i:02d}/test",
                            "passed": t.question_id in state.training_passed,
                        }
                        for i, t in enumerate(self.config.rules.training_items)
                    ],
                }
            if phase is Phase.BREAK:
                elapsed = self.clock() - state.break_started_at
                remaining = self.config.rules.break_seconds - elapsed
                if remaining > 0:
                    return {"directive": "break", "wait_remaining": int(math.ceil(remaining))}
                return {"directive": "break_over"}
            if phase in (Phase.BATCH_1, Phase.BATCH_2):
                return self._question_payload(state)
            if phase is Phase.DONE:
                return {"directive": "done"}
            return {"directive": "rejected"}

    def record_gate(self, session_id: str, gate: str, payload: dict) -> dict:
        with self._lock:
            state = self._session(session_id)
            if gate not in GATES:
                raise InvalidPayload(f"unknown gate {gate!r}")
            if gate == "consent":
                if state.phase is not Phase.CONSENT:
                    raise PhaseViolation(f"consent gate in phase {state.phase.value}")
                if payload.get("agreed") is not True:
                    raise InvalidPayload("consent requires agreed=true")
                self._commit(
                    {
                        "event": "gate_passed",
                        "ts": self.clock(),
                        "session_id": session_id,
                        "gate": "consent",
                    }
                )
                return {"phase": state.phase.value}

            if gate == "acuity":
                if state.phase is not Phase.ACUITY:
                    raise PhaseViolation(f"acuity gate in phase {state.phase.value}")
                answers = payload.get("answers") or {}
                correct = all(
                    str(answers.get(p.plate_id, "")).strip().lower() == p.answer.lower()
                    for p in self.config.rules.acuity_plates
                )
                if correct:
                    self._commit(
                        {
                            "event": "gate_passed",
                            "ts": self.clock(),
                            "session_id": session_id,
                            "gate": "acuity",
                        }
                    )
                    return {"phase": state.phase.value}
                self._commit(
                    {
                        "event": "session_rejected",
                        "ts": self.clock(),
                        "session_id": session_id,
                        "reason": "acuity",
                    }
                )
                raise Rejected("visual screening failed")

            # training
            if state.phase is not Phase.TRAINING:
                raise PhaseViolation(f"training gate in phase {state.phase.value}")
            items = {t.question_id: t for t in self.config.rules.training_items}
            if not items:
                self._commit(
                    {
                        "event": "gate_passed",
                        "ts": self.clock(),
                        "session_id": session_id,
                        "gate": "training",
                    }
                )
                return {"phase": state.phase.value}
            alias_to_qid, _ = self.alias_maps(state)
            raw_id = payload.get("question_id")
            item_id = alias_to_qid.get(raw_id, raw_id)
            if item_id not in items:
                raise InvalidPayload(f"unknown training item {raw_id!r}")
            try:
                score = float(payload["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidPayload("training payload needs a numeric score") from exc
            item = items[item_id]
            passed = item.expected_lo <= score <= item.expected_hi
            self._commit(
                {
                    "event": "training_item",
                    "ts": self.clock(),
                    "session_id": session_id,
                    "item_id": item_id,
                    "score": score,
                    "passed": passed,
                }
            )
            return {
                "item": raw_id,
                "ok": passed,
                "expected": [item.expected_lo, item.expected_hi],
                "phase": state.phase.value,
            }

    def submit_response(
        self,
        session_id: str,
        question_id: str,
        score: float,
        toggle_count: int = 0,
        elapsed_ms: int = 0,
    ) -> dict:
        with self._lock:
            state = self._session(session_id)
            if state.phase not in (Phase.BATCH_1, Phase.BATCH_2):
                raise PhaseViolation(f"no active question in phase {state.phase.value}")
            try:
                score = float(score)
            except (TypeError, ValueError) as exc:
                raise InvalidPayload("score must be numeric") from exc
            if not 0.0 <= score <= 100.0:
                raise ScoreOutOfRangeError(f"score {score} outside [0, 100]")
            batch_number = 1 if state.phase is Phase.BATCH_1 else 2
            expected = f"b{batch_number}-q{state.cursor:03d}"
            if question_id != expected:
                if self._alias_already_answered(state, question_id):
                    raise DuplicateResponse(f"question {question_id} already answered")
                raise OutOfOrder(
                    f"expected question {expected}", expected_question=expected
                )
            batch_id = state.current_batch_id()
            self._commit(
                {
                    "event": "response_accepted",
                    "ts": self.clock(),
                    "session_id": session_id,
                    "question_id": state.question_order[batch_id][state.cursor],
                    "score": score,
                    "toggle_count": int(toggle_count),
                    "elapsed_ms": int(elapsed_ms),
                }
            )
            return {"accepted": question_id, "phase": state.phase.value, "cursor": state.cursor}

    def _alias_already_answered(self, state: SessionState, alias: str) -> bool:
        batch_number = 1 if state.phase is Phase.BATCH_1 else 2
        for n, batch_id in enumerate(state.assigned_batches, start=1):
            for p in range(len(state.question_order[batch_id])):
                if alias == f"b{n}-q{p:03d}":
                    if n < batch_number:
                        return True
                    return n == batch_number and p < state.cursor
        return False

    def second_batch(self, session_id: str, accept: bool) -> dict:
        with self._lock:
            state = self._session(session_id)
            if state.phase is not Phase.BREAK:
                raise PhaseViolation(f"no break in phase {state.phase.value}")
            if accept:
                elapsed = self.clock() - state.break_started_at
                remaining = self.config.rules.break_seconds - elapsed
                if remaining > 0:
                    raise PhaseViolation(
                        "break not finished", wait_remaining=int(math.ceil(remaining))
                    )
            self._commit(
                {
                    "event": "second_batch",
                    "ts": self.clock(),
                    "session_id": session_id,
                    "accepted": bool(accept),
                }
            )
            return {"phase": state.phase.value}

    # ----- export and assets -----------------------------------------

    def export_table(self, study_id: str, include_partial: bool = False) -> RatingTable:
        with self._lock:
            if study_id != self.config.study_id:
                raise UnknownStudy(f"unknown study {study_id}")
            ratings: list[Rating] = []
            used_questions: dict[str, Question] = {}
            for session_id in self.session_order:
                state = self.sessions[session_id]
                by_batch: dict[str, list[StoredResponse]] = {}
                for response in state.responses:
                    by_batch.setdefault(response.batch_id, []).append(response)
                for batch_id in state.assigned_batches:
                    responses = by_batch.get(batch_id, [])
                    complete = len(responses) == len(state.question_order[batch_id])
                    if not responses or (not complete and not include_partial):
                        continue
                    for response in responses:
                        used_questions[response.question_id] = self.questions[response.question_id]
                        ratings.append(
                            Rating(
                                subject_id=state.subject_id,
                                batch_instance_id=f"{session_id}:{batch_id}",
                                batch_id=batch_id,
                                question_id=response.question_id,
                                score=response.score,
                                toggle_count=response.toggle_count,
                                elapsed_ms=response.elapsed_ms,
                                timestamp=response.timestamp,
                            )
                        )
            return RatingTable.build(used_questions, ratings)

    def export_text(self, study_id: str, include_partial: bool = False) -> str:
        return dumps_ratings(self.export_table(study_id, include_partial))

    def stimulus_path(self, session_id: str, alias: str, role: str) -> Path:
        with self._lock:
            state = self._session(session_id)
            if self.config.asset_dir is None:
                raise AssetUnavailable("study has no asset directory configured")
            if role not in ("reference", "test"):
                raise InvalidPayload(f"unknown stimulus role {role!r}")
            alias_to_qid, _ = self.alias_maps(state)
            question = self.questions.get(alias_to_qid.get(alias, ""))
            if question is None:
                raise SessionNotFound(f"no stimulus {alias} in session scope")
            stimulus = question.reference if role == "reference" else question.test
            path = Path(self.config.asset_dir) / stimulus.filename
            if not path.is_file():
                raise AssetUnavailable(str(path))
            return path

    def asset_path(self, filename: str) -> Path:
        if self.config.asset_dir is None:
            raise AssetUnavailable("study has no asset directory configured")
        if "/" in filename or "\\" in filename or filename.startswith("."):
            raise InvalidPayload("invalid asset name")
        path = Path(self.config.asset_dir) / filename
        if not path.is_file():
            raise AssetUnavailable(filename)
        return path

    def close(self) -> None:
        if self._log_handle is not None:
            self._log_handle.close()
            self._log_handle = None


def create_app(service: StudyService):
    """FastAPI adapter exposing the service over HTTP+JSON."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        subject_id: str
        client_metadata: dict = {}

    class ResponseBody(BaseModel):
        question_id: str
        score: float
        toggle_count: int = 0
        elapsed_ms: int = 0

    class SecondBatchBody(BaseModel):
        accept: bool

    app = FastAPI(title="idsqs study service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.service = service

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        body = {"error": exc.code, "detail": exc.detail}
        body.update(exc.extra)
        return JSONResponse(status_code=exc.http_status, content=body)

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        state = service.create_session(body.subject_id, body.client_metadata)
        return {
            "session_id": state.session_id,
            "phase": state.phase.value,
            "assigned_batches": list(state.assigned_batches),
        }

    @app.get("/sessions/{session_id}/next")
    def next_question(session_id: str):
        return service.next_question(session_id)

    @app.post("/sessions/{session_id}/responses")
    def submit_response(session_id: str, body: ResponseBody):
        return service.submit_response(
            session_id,
            body.question_id,
            body.score,
            toggle_count=body.toggle_count,
            elapsed_ms=body.elapsed_ms,
        )

    @app.post("/sessions/{session_id}/gates/{gate}")
    async def record_gate(session_id: str, gate: str, request: Request):
        try:
            payload = await request.json()
        except Exception:
            payload = {}
        if not isinstance(payload, dict):
            raise InvalidPayload("gate payload must be a JSON object")
        return service.record_gate(session_id, gate, payload)

    @app.post("/sessions/{session_id}/second-batch")
    def second_batch(session_id: str, body: SecondBatchBody):
        return service.second_batch(session_id, body.accept)

    @app.get("/sessions/{session_id}/stimuli/{question_id}/{role}")
    def stimulus(session_id: str, question_id: str, role: str):
        return FileResponse(service.stimulus_path(session_id, question_id, role))

    @app.get("/studies/{study_id}/export")
    def export(study_id: str, include_partial: bool = False):
        return PlainTextResponse(service.export_text(study_id, include_partial))

    @app.get("/assets/{filename}")
    def asset(filename: str):
        return FileResponse(service.asset_path(filename))

    return app
