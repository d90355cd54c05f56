import json

import pytest
from fastapi.testclient import TestClient

from idsqs.domain import (
    AcuityPlate,
    Codec,
    SessionRules,
    TrainingItem,
    default_study_config,
    parse_rating_lines,
)
from idsqs.service import Phase, StudyService, create_app


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def build_config(tmp_path, with_training=True, n_batches=2, study_per_batch=3):
    rules = SessionRules(
        traps_per_batch=2,
        trap_split=(1, 1),
        study_per_batch=study_per_batch,
        break_seconds=180,
        acuity_plates=(
            AcuityPlate("plate-3", "plate3.png", "29"),
            AcuityPlate("plate-4", "plate4.png", "74"),
        ),
    )
    config = default_study_config(
        sources=("2", "6"),
        codecs=(Codec.JPEG, Codec.AVIF),
        levels=5,
        n_batches=n_batches,
        rules=rules,
        seed=5,
        asset_dir=str(tmp_path / "assets"),
    )
    if with_training:
        pool = config.question_pool()
        easy = next(q for q in pool.values() if q.test.distortion_level == 10)
        rules = config.rules
        object.__setattr__(rules, "training_items", (TrainingItem(easy.question_id, 60.0, 100.0),))
    assets = tmp_path / "assets"
    assets.mkdir(exist_ok=True)
    names = {"plate3.png", "plate4.png"}
    for question in config.question_pool().values():
        names.add(question.reference.filename)
        names.add(question.test.filename)
    for name in names:
        (assets / name).write_bytes(b"\x89PNG fake " + name.encode())
    return config


@pytest.fixture
def harness(tmp_path):
    config = build_config(tmp_path)
    clock = FakeClock()
    service = StudyService(config, tmp_path / "events.jsonl", clock=clock, seed=42)
    client = TestClient(create_app(service))
    return config, clock, service, client


def create_session(client, subject="worker-1", resolution=(1920, 1080)):
    response = client.post(
        "/sessions",
        json={"subject_id": subject, "client_metadata": {"resolution": list(resolution), "display_diagonal": 24}},
    )
    return response


def pass_gates(client, service, session_id):
    assert client.post(f"/sessions/{session_id}/gates/consent", json={"agreed": True}).status_code == 200
    answers = {"plate-3": "29", "plate-4": "74"}
    assert client.post(
        f"/sessions/{session_id}/gates/acuity", json={"answers": answers}
    ).status_code == 200
    for item in service.config.rules.training_items:
        response = client.post(
            f"/sessions/{session_id}/gates/training",
            json={"question_id": item.question_id, "score": 90.0},
        )
        assert response.status_code == 200
    if not service.config.rules.training_items:
        assert client.post(f"/sessions/{session_id}/gates/training", json={}).status_code == 200


def answer_current_batch(client, session_id, score=50.0):
    while True:
        payload = client.get(f"/sessions/{session_id}/next").json()
        if payload["directive"] != "question":
            return payload
        response = client.post(
            f"/sessions/{session_id}/responses",
            json={
                "question_id": payload["question_id"],
                "score": score,
                "toggle_count": 3,
                "elapsed_ms": 4500,
            },
        )
        assert response.status_code == 200, response.text


class TestSessionCreation:
    def test_create_assigns_two_batches(self, harness):
        _, _, service, client = harness
        response = create_session(client)
        assert response.status_code == 200
        body = response.json()
        assert len(body["assigned_batches"]) == 2
        assert body["phase"] == "CONSENT"

    def test_duplicate_subject_rejected(self, harness):
        _, _, _, client = harness
        assert create_session(client).status_code == 200
        response = create_session(client)
        assert response.status_code == 409
        assert response.json()["error"] == "DUPLICATE_SUBJECT"

    def test_low_resolution_rejected(self, harness):
        _, _, _, client = harness
        response = create_session(client, resolution=(1366, 768))
        assert response.status_code == 403
        assert response.json()["error"] == "INSUFFICIENT_DISPLAY"

    def test_assignment_balance(self, tmp_path):
        config = build_config(tmp_path, with_training=False, n_batches=4)
        service = StudyService(config, tmp_path / "log.jsonl", clock=FakeClock(), seed=7)
        client = TestClient(create_app(service))
        for i in range(20):
            assert create_session(client, subject=f"w{i}").status_code == 200
        counts = service.assignment_counts
        assert max(counts.values()) - min(counts.values()) <= 1


class TestGates:
    def test_gate_flow(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        assert client.get(f"/sessions/{session_id}/next").json()["directive"] == "consent"
        pass_gates(client, service, session_id)
        assert client.get(f"/sessions/{session_id}/next").json()["directive"] == "question"

    def test_wrong_acuity_rejects_session(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        client.post(f"/sessions/{session_id}/gates/consent", json={"agreed": True})
        response = client.post(
            f"/sessions/{session_id}/gates/acuity",
            json={"answers": {"plate-3": "29", "plate-4": "99"}},
        )
        assert response.status_code == 403
        assert service.sessions[session_id].phase is Phase.REJECTED
        assert client.get(f"/sessions/{session_id}/next").json()["directive"] == "rejected"

    def test_training_feedback_keeps_phase(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        client.post(f"/sessions/{session_id}/gates/consent", json={"agreed": True})
        client.post(
            f"/sessions/{session_id}/gates/acuity",
            json={"answers": {"plate-3": "29", "plate-4": "74"}},
        )
        listing = client.get(f"/sessions/{session_id}/next").json()
        assert listing["directive"] == "training"
        alias = listing["items"][0]["question_id"]
        assert alias == "t00"
        response = client.post(
            f"/sessions/{session_id}/gates/training",
            json={"question_id": alias, "score": 5.0},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["ok"] is False
        assert body["expected"] == [60.0, 100.0]
        assert "trap" not in json.dumps(body).lower()
        assert service.sessions[session_id].phase is Phase.TRAINING

    def test_gate_out_of_phase(self, harness):
        _, _, _, client = harness
        session_id = create_session(client).json()["session_id"]
        response = client.post(
            f"/sessions/{session_id}/gates/acuity", json={"answers": {}}
        )
        assert response.status_code == 409
        assert response.json()["error"] == "PHASE_VIOLATION"


class TestQuestionFlow:
    def test_randomized_order_is_recorded_and_stable(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        state = service.sessions[session_id]
        first = client.get(f"/sessions/{session_id}/next").json()
        assert first["question_id"] == "b1-q000"
        alias_to_qid, _ = service.alias_maps(state)
        assert alias_to_qid["b1-q000"] == state.question_order[state.assigned_batches[0]][0]

    def test_payload_never_reveals_question_kind(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        seen_fields = set()
        while True:
            payload = client.get(f"/sessions/{session_id}/next").json()
            if payload["directive"] != "question":
                break
            seen_fields.add(frozenset(payload.keys()))
            lowered = json.dumps(payload).lower()
            assert "trap" not in lowered
            assert "kind" not in lowered
            assert payload["reference_url"].endswith("/reference")
            assert payload["test_url"].endswith("/test")
            client.post(
                f"/sessions/{session_id}/responses",
                json={"question_id": payload["question_id"], "score": 10.0},
            )
        assert len(seen_fields) == 1  # identical shape for every question

    def test_out_of_order_rejected(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        response = client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": "b1-q002", "score": 10.0},
        )
        assert response.status_code == 409
        assert response.json()["error"] == "OUT_OF_ORDER"
        assert response.json()["expected_question"] == "b1-q000"

    def test_duplicate_response_rejected(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        payload = client.get(f"/sessions/{session_id}/next").json()
        ok = client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": payload["question_id"], "score": 10.0},
        )
        assert ok.status_code == 200
        again = client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": payload["question_id"], "score": 20.0},
        )
        assert again.status_code == 409
        assert again.json()["error"] == "DUPLICATE_RESPONSE"

    def test_score_out_of_range(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        payload = client.get(f"/sessions/{session_id}/next").json()
        response = client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": payload["question_id"], "score": -1.0},
        )
        assert response.status_code == 422
        assert response.json()["error"] == "SCORE_OUT_OF_RANGE"


class TestBreakGate:
    def test_break_countdown_and_second_batch(self, harness):
        _, clock, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        directive = answer_current_batch(client, session_id)
        assert directive["directive"] == "break"
        assert directive["wait_remaining"] == 180

        clock.advance(60)
        directive = client.get(f"/sessions/{session_id}/next").json()
        assert directive == {"directive": "break", "wait_remaining": 120}

        early = client.post(f"/sessions/{session_id}/second-batch", json={"accept": True})
        assert early.status_code == 409
        assert early.json()["wait_remaining"] == 120

        clock.advance(120)
        assert client.get(f"/sessions/{session_id}/next").json()["directive"] == "break_over"
        accepted = client.post(f"/sessions/{session_id}/second-batch", json={"accept": True})
        assert accepted.status_code == 200
        assert service.sessions[session_id].phase is Phase.BATCH_2

        directive = answer_current_batch(client, session_id, score=70.0)
        assert directive["directive"] == "done"

    def test_responses_blocked_during_break(self, harness):
        _, clock, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        answer_current_batch(client, session_id)
        state = service.sessions[session_id]
        second_batch_first = state.question_order[state.assigned_batches[1]][0]
        response = client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": second_batch_first, "score": 10.0},
        )
        assert response.status_code == 409
        assert response.json()["error"] == "PHASE_VIOLATION"

    def test_decline_second_batch(self, harness):
        _, clock, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        answer_current_batch(client, session_id)
        declined = client.post(f"/sessions/{session_id}/second-batch", json={"accept": False})
        assert declined.status_code == 200
        assert service.sessions[session_id].phase is Phase.DONE


class TestDurabilityAndExport:
    def run_full_session(self, client, service, subject="worker-1"):
        session_id = create_session(client, subject=subject).json()["session_id"]
        pass_gates(client, service, session_id)
        answer_current_batch(client, session_id)
        clock = service.clock
        clock.advance(181)
        client.post(f"/sessions/{session_id}/second-batch", json={"accept": True})
        answer_current_batch(client, session_id, score=61.0)
        return session_id

    def test_replay_reconstructs_state(self, tmp_path, harness):
        config, clock, service, client = harness
        self.run_full_session(client, service)
        partial = create_session(client, subject="worker-2").json()["session_id"]
        pass_gates(client, service, partial)
        payload = client.get(f"/sessions/{partial}/next").json()
        client.post(
            f"/sessions/{partial}/responses",
            json={"question_id": payload["question_id"], "score": 33.0},
        )

        rebuilt = StudyService(config, service.log_path, clock=clock)
        assert rebuilt.sessions == service.sessions
        assert rebuilt.assignment_counts == service.assignment_counts
        assert rebuilt.session_order == service.session_order

    def test_export_idempotent_and_parseable(self, harness):
        config, _, service, client = harness
        self.run_full_session(client, service)
        a = client.get(f"/studies/{config.study_id}/export").text
        b = client.get(f"/studies/{config.study_id}/export").text
        assert a == b
        table = parse_rating_lines(a.splitlines())
        assert len(table.instances) == 2  # both batches completed
        per_batch = len(config.batches[0].questions)
        assert len(table.ratings) == 2 * per_batch

    def test_export_excludes_partial_by_default(self, harness):
        config, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        payload = client.get(f"/sessions/{session_id}/next").json()
        client.post(
            f"/sessions/{session_id}/responses",
            json={"question_id": payload["question_id"], "score": 12.0},
        )
        text = client.get(f"/studies/{config.study_id}/export").text
        assert text == ""
        text = client.get(f"/studies/{config.study_id}/export?include_partial=true").text
        table = parse_rating_lines(text.splitlines())
        assert len(table.ratings) == 1

    def test_unknown_study_404(self, harness):
        _, _, _, client = harness
        assert client.get("/studies/nope/export").status_code == 404

    def test_crash_after_append_preserves_response(self, tmp_path, harness):
        config, clock, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        payload = client.get(f"/sessions/{session_id}/next").json()

        # simulate a crash between the durable append and the state update
        original_apply = service._apply

        def exploding_apply(event):
            raise RuntimeError("crash before in-memory apply")

        service._apply = exploding_apply
        with pytest.raises(RuntimeError):
            service.submit_response(session_id, payload["question_id"], 55.0)
        service._apply = original_apply

        rebuilt = StudyService(config, service.log_path, clock=clock)
        state = rebuilt.sessions[session_id]
        alias_to_qid, _ = rebuilt.alias_maps(state)
        true_id = alias_to_qid[payload["question_id"]]
        assert any(r.question_id == true_id for r in state.responses)


class TestAssets:
    def test_opaque_stimulus_urls_serve_files(self, harness):
        _, _, service, client = harness
        session_id = create_session(client).json()["session_id"]
        pass_gates(client, service, session_id)
        payload = client.get(f"/sessions/{session_id}/next").json()
        ref = client.get(payload["reference_url"])
        test = client.get(payload["test_url"])
        assert ref.status_code == 200
        assert test.status_code == 200

    def test_plain_asset_route(self, harness):
        _, _, _, client = harness
        assert client.get("/assets/plate3.png").status_code == 200
        assert client.get("/assets/missing.png").status_code == 404
        assert client.get("/assets/..%2Fsecret").status_code in (404, 422)

    def test_out_of_scope_question_denied(self, tmp_path):
        config = build_config(tmp_path, with_training=False, n_batches=4)
        service = StudyService(config, tmp_path / "log.jsonl", clock=FakeClock(), seed=3)
        client = TestClient(create_app(service))
        session_id = create_session(client).json()["session_id"]
        response = client.get(f"/sessions/{session_id}/stimuli/b9-q999/test")
        assert response.status_code == 404
