import numpy as np
import pytest

from idsqs.domain import (
    Codec,
    Question,
    QuestionKind,
    Rating,
    RatingTable,
    SessionRules,
    Stimulus,
    default_study_config,
)
from idsqs.numerics import DegenerateInput
from idsqs.screening import (
    NoTrapQuestions,
    NotATrap,
    cleanse,
    remove_outliers,
    trap_accuracy,
)
from idsqs.simulator import GroundTruth, RaterKind, RaterProfile, default_truth, simulate


def small_config(seed=0):
    return default_study_config(
        sources=("2", "6"),
        codecs=(Codec.JPEG, Codec.AVIF),
        levels=5,
        n_batches=1,
        rules=SessionRules(traps_per_batch=10, trap_split=(5, 5), study_per_batch=20),
        seed=seed,
    )


def trap_fixture(accuracy_per_instance: dict[str, float], jitter_sd=0.0, seed=0):
    """Instances rating ten traps each, engineered to hit a target accuracy."""
    rng = np.random.default_rng(seed)
    questions = {}
    traps = []
    for i in range(5):
        t1 = Question.build(QuestionKind.TRAP_I, Stimulus(f"s{i}", Codec.JPEG, 10))
        t2 = Question.build(QuestionKind.TRAP_II, Stimulus.pristine(f"s{i}"))
        traps.extend([t1, t2])
    for q in traps:
        questions[q.question_id] = q
    ratings = []
    for instance_id, accuracy in accuracy_per_instance.items():
        subject = instance_id.split(":")[0]
        for q in traps:
            a = float(np.clip(accuracy + rng.normal(0.0, jitter_sd), 0.0, 1.0))
            score = 100.0 * a if q.kind is QuestionKind.TRAP_I else 100.0 * (1.0 - a)
            ratings.append(Rating(subject, instance_id, "b1", q.question_id, score))
    return RatingTable.build(questions, ratings)


class TestTrapAccuracy:
    def test_endpoints(self):
        assert trap_accuracy(100.0, QuestionKind.TRAP_I) == 1.0
        assert trap_accuracy(0.0, QuestionKind.TRAP_II) == 1.0
        assert trap_accuracy(80.0, QuestionKind.TRAP_I) == pytest.approx(0.8)

    def test_study_is_not_a_trap(self):
        with pytest.raises(NotATrap):
            trap_accuracy(50.0, QuestionKind.STUDY)


class TestCleanse:
    def test_separates_diligent_from_clickers(self):
        # representative seed: across 30 seeds the median threshold is 0.71
        # and >80% of runs discard at least 95% of the clickers
        config = small_config()
        profiles = {}
        rng = np.random.default_rng(1002)
        for i in range(50):
            profiles[f"good-{i:03d}"] = RaterProfile(
                RaterKind.DILIGENT, bias=float(rng.normal(0, 3)), residual_sd=5.0
            )
        for i in range(50):
            profiles[f"bad-{i:03d}"] = RaterProfile(RaterKind.RANDOM_CLICKER)
        truth = GroundTruth(default_truth(config), profiles)
        table = simulate(config, truth, seed=1002)

        report = cleanse(table)
        assert 0.6 < report.threshold < 0.8
        clickers = {i for i in table.instances if i.startswith("bad")}
        diligent = {i for i in table.instances if i.startswith("good")}
        assert len(report.discarded & clickers) >= 0.95 * len(clickers)
        assert len(report.discarded & diligent) <= 0.05 * len(diligent)

    def test_kept_vs_discarded_threshold_rule(self):
        accuracies = {f"w{i}:b1": a for i, a in enumerate(np.linspace(0.3, 1.0, 40))}
        table = trap_fixture(accuracies)
        report = cleanse(table)
        for instance_id in report.kept:
            assert report.per_instance_accuracy[instance_id] >= report.threshold
        for instance_id in report.discarded:
            assert report.per_instance_accuracy[instance_id] < report.threshold
        assert report.kept | report.discarded == set(table.instances)
        assert not (report.kept & report.discarded)

    def test_permutation_invariant(self):
        accuracies = {f"w{i}:b1": a for i, a in enumerate(np.linspace(0.2, 0.95, 30))}
        table = trap_fixture(accuracies, seed=1)
        report = cleanse(table)
        reversed_table = RatingTable.build(table.questions, list(reversed(table.ratings)))
        report_rev = cleanse(reversed_table)
        assert report.threshold == report_rev.threshold
        assert report.kept == report_rev.kept

    def test_all_perfect_accuracy_degenerate(self):
        accuracies = {f"w{i}:b1": 1.0 for i in range(10)}
        table = trap_fixture(accuracies)
        with pytest.raises(DegenerateInput):
            cleanse(table)

    def test_instance_without_traps(self):
        q = Question.build(QuestionKind.STUDY, Stimulus("2", Codec.JPEG, 3))
        table = RatingTable.build(
            {q.question_id: q}, [Rating("w", "w:b1", "b1", q.question_id, 10.0)]
        )
        with pytest.raises(NoTrapQuestions):
            cleanse(table)


def consensus_fixture(n_faithful=20, seed=3):
    """Faithful instances all rate close to a shared profile of 30 questions."""
    rng = np.random.default_rng(seed)
    questions = {}
    qids = []
    profile = rng.uniform(5, 95, size=30)
    for q in range(30):
        question = Question.build(QuestionKind.STUDY, Stimulus("2", Codec.AVIF, 1 + q % 10))
        question = Question(f"q{q:02d}:{question.question_id}", question.kind,
                            question.reference, question.test)
        questions[question.question_id] = question
        qids.append(question.question_id)
    ratings = []
    for i in range(n_faithful):
        sid = f"w{i:03d}"
        for q, qid in enumerate(qids):
            score = float(np.clip(profile[q] + rng.normal(0, 2), 0, 100))
            ratings.append(Rating(sid, f"{sid}:b1", "b1", qid, score))
    return questions, qids, profile, ratings


class TestRemoveOutliers:
    def test_echoing_consensus_keeps_instance(self):
        questions, qids, profile, ratings = consensus_fixture()
        # one instance that scores the consensus exactly
        for q, qid in enumerate(qids):
            ratings.append(Rating("echo", "echo:b1", "b1", qid, float(profile[q])))
        table = RatingTable.build(questions, ratings)
        report = remove_outliers(table, set(table.instances))
        assert report.per_instance_cr["echo:b1"] > 0.99
        assert "echo:b1" in report.kept

    def test_anticorrelated_instance_removed(self):
        questions, qids, profile, ratings = consensus_fixture()
        for q, qid in enumerate(qids):
            ratings.append(Rating("contra", "contra:b1", "b1", qid, float(100.0 - profile[q])))
        table = RatingTable.build(questions, ratings)
        report = remove_outliers(table, set(table.instances))
        assert report.per_instance_cr["contra:b1"] < -0.9
        assert "contra:b1" in report.removed
        assert report.cutoff == min(report.mu - report.sigma, 0.85)

    def test_constant_scores_get_zero_cr(self):
        questions, qids, profile, ratings = consensus_fixture()
        for qid in qids:
            ratings.append(Rating("flat", "flat:b1", "b1", qid, 50.0))
        table = RatingTable.build(questions, ratings)
        report = remove_outliers(table, set(table.instances))
        assert report.per_instance_cr["flat:b1"] == 0.0
        assert "flat:b1" in report.degenerate

    def test_never_removes_above_cap(self):
        questions, qids, profile, ratings = consensus_fixture(n_faithful=40)
        table = RatingTable.build(questions, ratings)
        report = remove_outliers(table, set(table.instances))
        for instance_id, cr in report.per_instance_cr.items():
            if cr >= 0.85:
                assert instance_id in report.kept

    def test_duplicate_faithful_instance_cannot_evict_others(self):
        questions, qids, profile, ratings = consensus_fixture(n_faithful=25)
        table = RatingTable.build(questions, ratings)
        before = remove_outliers(table, set(table.instances))

        clone = [
            Rating("w000b", "w000b:b1", "b1", r.question_id, r.score)
            for r in table.instance_ratings("w000:b1")
        ]
        bigger = RatingTable.build(questions, ratings + clone)
        after = remove_outliers(bigger, set(bigger.instances))
        # the rule is capped at 0.85, so adding agreement can only relax it
        flipped = (before.kept - {"w000b:b1"}) - after.kept
        assert not flipped
