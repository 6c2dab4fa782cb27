import random

import pytest

from simlabel.inference import RankedAssignment
from simlabel.metrics import (
    EvalReport,
    MetricsError,
    emr_trend,
    evaluate,
    noisy_baseline,
    precision_recall,
)

from conftest import make_corpus
from oracles import GOLDEN_EVAL, oracle_baseline, oracle_evaluate


def ranking(ids, start=0.9, step=0.1):
    return tuple((t, round(start - k * step, 6)) for k, t in enumerate(ids))


def golden_corpus():
    return make_corpus(
        4,
        [
            ("c1", "text", {0, 1}, {0, 1}),
            ("c2", "text", {2}, {2}),
            ("c3", "text", {1, 3}, {1, 3}),
        ],
    )


def golden_assignments():
    return [
        RankedAssignment(cid, ranking(ids), 2)
        for cid, ids, _ in GOLDEN_EVAL["rankings"]
    ]


def test_hand_computed_golden():
    report = evaluate(golden_assignments(), golden_corpus(), k=GOLDEN_EVAL["k"])
    assert report.ap == GOLDEN_EVAL["ap"]
    assert report.ar == GOLDEN_EVAL["ar"]
    assert report.p_at_k[1] == GOLDEN_EVAL["p_at_1"]
    assert report.p_at_k[2] == GOLDEN_EVAL["p_at_2"]
    assert report.evaluated == 3
    assert report.skipped == 0


def test_golden_class_decomposition():
    report = evaluate(golden_assignments(), golden_corpus(), k=2)
    # all three companies have noisy == gold
    assert report.classes["exact"].count == 3
    assert report.classes["partial"].count == 0
    assert report.classes["incorrect"].count == 0
    assert report.classes["exact"].ap == report.ap
    assert report.classes["partial"].ap == 0.0


def test_precision_recall_basics():
    assert precision_recall({0, 1}, {1, 2}) == (0.5, 0.5)
    assert precision_recall({1}, {1}) == (1.0, 1.0)
    with pytest.raises(MetricsError):
        precision_recall(set(), {1})
    with pytest.raises(MetricsError):
        precision_recall({1}, set())


def test_evaluate_matches_oracle_on_random_instances():
    rng = random.Random(17)
    for trial in range(50):
        n_tags = rng.randint(2, 6)
        n_companies = rng.randint(1, 20)
        companies = []
        rows = []
        assignments = []
        for c in range(n_companies):
            gold = (
                None
                if rng.random() < 0.15
                else frozenset(rng.sample(range(n_tags), rng.randint(1, n_tags)))
            )
            noisy = frozenset(rng.sample(range(n_tags), rng.randint(1, n_tags)))
            cid = f"c{c}"
            companies.append((cid, "words", noisy, gold))
            ids = list(range(n_tags))
            rng.shuffle(ids)
            sims = sorted((rng.uniform(-1, 1) for _ in ids), reverse=True)
            assignments.append(RankedAssignment(cid, tuple(zip(ids, sims)), n_tags))
            rows.append((ids, sims, gold, noisy))
        corpus = make_corpus(n_tags, companies)
        k = rng.randint(1, n_tags)
        if all(g is None for _, _, g, _ in rows):
            with pytest.raises(MetricsError):
                evaluate(assignments, corpus, k)
            continue
        got = evaluate(assignments, corpus, k).to_dict()
        want = oracle_evaluate(rows, k)
        assert got["ap"] == want["ap"], f"trial {trial}"
        assert got["ar"] == want["ar"]
        assert got["evaluated"] == want["evaluated"]
        assert got["skipped"] == want["skipped"]
        for kk in range(1, k + 1):
            assert got["p_at_k"][str(kk)] == want["p_at_k"][kk]
            assert got["sim_at_k"][str(kk)] == want["sim_at_k"][kk]
        for cls in ("exact", "partial", "incorrect"):
            assert got["classes"][cls] == want["classes"][cls]


def test_noisy_baseline_matches_oracle():
    rng = random.Random(23)
    for _ in range(50):
        n_tags = rng.randint(2, 6)
        companies = []
        rows = []
        for c in range(rng.randint(1, 20)):
            gold = (
                None
                if rng.random() < 0.2
                else frozenset(rng.sample(range(n_tags), rng.randint(1, n_tags)))
            )
            noisy = frozenset(rng.sample(range(n_tags), rng.randint(1, n_tags)))
            companies.append((f"c{c}", "words", noisy, gold))
            rows.append((noisy, gold))
        corpus = make_corpus(n_tags, companies)
        if all(g is None for _, g in rows):
            with pytest.raises(MetricsError):
                noisy_baseline(corpus)
            continue
        got = noisy_baseline(corpus)
        want = oracle_baseline(rows)
        assert got.ap == want["ap"]
        assert got.ar == want["ar"]
        assert got.p_at_k is None and got.sim_at_k is None
        for cls in ("exact", "partial", "incorrect"):
            sub = got.classes[cls]
            assert (sub.ap, sub.ar, sub.count) == (
                want["classes"][cls]["ap"],
                want["classes"][cls]["ar"],
                want["classes"][cls]["count"],
            )


def test_exact_class_baseline_is_perfect():
    corpus = make_corpus(3, [("c1", "t", {0, 1}, {0, 1}), ("c2", "t", {2}, {2})])
    report = noisy_baseline(corpus)
    assert report.ap == 1.0 and report.ar == 1.0
    assert report.classes["exact"].count == 2


def test_incorrect_class_baseline_recall_is_zero():
    corpus = make_corpus(3, [("c1", "t", {2}, {0, 1}), ("c2", "t", {0}, {1})])
    report = noisy_baseline(corpus)
    assert report.ar == 0.0
    assert report.classes["incorrect"].ar == 0.0
    assert report.classes["incorrect"].count == 2


def test_evaluate_validates_k_and_companies():
    corpus = golden_corpus()
    asgs = golden_assignments()
    with pytest.raises(MetricsError):
        evaluate(asgs, corpus, 0)
    with pytest.raises(MetricsError):
        evaluate(asgs, corpus, 5)
    rogue = [RankedAssignment("ghost", ranking([0, 1, 2, 3]), 2)]
    with pytest.raises(MetricsError, match="ghost"):
        evaluate(rogue, corpus, 2)


def test_evaluate_skips_goldless_companies():
    corpus = make_corpus(
        3, [("c1", "t", {0}, {0}), ("c2", "t", {1}, None)]
    )
    asgs = [
        RankedAssignment("c1", ranking([0, 1, 2]), 1),
        RankedAssignment("c2", ranking([1, 0, 2]), 1),
    ]
    report = evaluate(asgs, corpus, 1)
    assert report.evaluated == 1
    assert report.skipped == 1


def test_report_serialization_keys():
    report = evaluate(golden_assignments(), golden_corpus(), 2)
    d = report.to_dict()
    assert set(d) == {"ap", "ar", "p_at_k", "sim_at_k", "classes", "evaluated", "skipped"}
    assert set(d["p_at_k"]) == {"1", "2"}
    assert isinstance(report, EvalReport)


def test_emr_trend():
    trend = emr_trend([0.68, 0.60, 0.72])
    assert trend["first"] == 0.68
    assert trend["best"] == 0.72
    assert trend["last"] == 0.72
    assert trend["delta"] == pytest.approx(0.04)
    assert len(trend["steps"]) == 2
    with pytest.raises(MetricsError):
        emr_trend([])
