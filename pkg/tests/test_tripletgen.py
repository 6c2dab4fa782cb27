import pytest
from hypothesis import given, settings, strategies as st

from simlabel.corpus import generate_synthetic
from simlabel.lsm import CellState, Lsm, apply_sme_updates
from simlabel.tripletgen import (
    VALID_SCORES,
    SamplingConfig,
    Triplet,
    TripletError,
    build_training_set,
    expand_pair,
    load_triplets,
    normalize_rating,
    save_triplets,
    self_triplets,
)
from simlabel.tripletgen import augment_from_diff

from conftest import make_corpus

CORPUS = make_corpus(
    3,
    [
        ("a1", "alpha words one", {0}, {0}),
        ("a2", "alpha words two", {0}, {0}),
        ("b1", "beta words one", {1}, {1}),
        ("b2", "beta words two", {1}, {1}),
        ("ab", "alpha beta blend", {0, 1}, {0, 1}),
        ("c1", "gamma words", {2}, {2}),
    ],
)


def rated_lsm(entries, n=3, round=1):
    lsm = Lsm(n)
    for i, j, r in entries:
        lsm.set_rating(i, j, r, CellState.SME_RATED, round)
    return lsm


def test_normalize_rating_exact_values():
    assert [normalize_rating(r) for r in range(6)] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    with pytest.raises(Exception):
        normalize_rating(6)


def test_expand_pair_both_directions():
    cfg = SamplingConfig(per_stratum=8, seed=0)
    out = expand_pair(0, 1, 3, CORPUS, cfg)
    # tag-0 companies against ITD_1 and tag-1 companies against ITD_0
    targets = {(t.company_id, t.target_tag) for t in out}
    assert ("a1", 1) in targets and ("b1", 0) in targets
    for t in out:
        assert t.score == 0.6
        assert t.source_pair == (0, 1)
        assert t.itd == CORPUS.tag(t.target_tag).itd
        src = 0 if t.target_tag == 1 else 1
        assert src in CORPUS.company(t.company_id).noisy_tags


def test_expand_pair_canonicalizes_order():
    cfg = SamplingConfig(seed=3)
    assert expand_pair(1, 0, 2, CORPUS, cfg) == expand_pair(0, 1, 2, CORPUS, cfg)


def test_expand_pair_respects_per_stratum():
    cfg = SamplingConfig(per_stratum=1, seed=0)
    out = expand_pair(0, 1, 5, CORPUS, cfg)
    per_side = {}
    for t in out:
        per_side[t.target_tag] = per_side.get(t.target_tag, 0) + 1
    assert all(v <= 1 for v in per_side.values())


def test_expand_pair_empty_pools_warns_not_raises(caplog):
    lonely = make_corpus(3, [("x", "text", {2}, None)])
    out = expand_pair(0, 1, 3, lonely, SamplingConfig(seed=0))
    assert out == []


def test_self_triplets_full_similarity():
    out = self_triplets(CORPUS, SamplingConfig(per_stratum=8, seed=1))
    assert out
    for t in out:
        assert t.score == 1.0
        assert t.source_pair is None
        assert t.itd == CORPUS.tag(t.target_tag).itd
        assert t.target_tag in CORPUS.company(t.company_id).noisy_tags


def test_self_triplets_can_be_disabled():
    assert self_triplets(CORPUS, SamplingConfig(include_self=False)) == []


def test_build_requires_rated_cells():
    with pytest.raises(TripletError, match="no reviewer-rated"):
        build_training_set(Lsm(3), CORPUS, SamplingConfig())


def test_build_scores_are_legal_and_unique_per_company_tag():
    lsm = rated_lsm([(0, 1, 2), (0, 2, 0), (1, 2, 5)])
    out = build_training_set(lsm, CORPUS, SamplingConfig(per_stratum=8, seed=2))
    keys = [(t.company_id, t.target_tag) for t in out]
    assert len(keys) == len(set(keys))
    for t in out:
        assert t.score in VALID_SCORES


def test_build_deterministic_and_seed_sensitive():
    lsm = rated_lsm([(0, 1, 2), (1, 2, 4)])
    a = build_training_set(lsm, CORPUS, SamplingConfig(seed=5))
    b = build_training_set(lsm, CORPUS, SamplingConfig(seed=5))
    c = build_training_set(lsm, CORPUS, SamplingConfig(seed=6))
    assert a == b
    assert {(t.company_id, t.target_tag) for t in a} == {
        (t.company_id, t.target_tag) for t in c
    }
    assert a != c  # shuffle order differs


def test_pair_triplet_outranks_self_for_shared_company():
    # "ab" carries both tags of the rated pair, so its (company, target)
    # slots take the pair's score, not the self-pair's 1.0.
    lsm = rated_lsm([(0, 1, 2)])
    out = build_training_set(lsm, CORPUS, SamplingConfig(per_stratum=8, seed=0))
    ab = {t.target_tag: t for t in out if t.company_id == "ab"}
    assert ab[0].score == 0.4 and ab[0].source_pair == (0, 1)
    assert ab[1].score == 0.4 and ab[1].source_pair == (0, 1)


def test_newer_round_wins_cross_pair_collision():
    # "ab" reaches target 2 through both rated cells; the round-2 cell wins.
    corpus = make_corpus(
        3,
        [
            ("ab", "alpha beta blend", {0, 1}, None),
            ("c1", "gamma words", {2}, None),
        ],
    )
    lsm = Lsm(3)
    lsm.set_rating(0, 2, 1, CellState.SME_RATED, round=1)
    lsm.set_rating(1, 2, 4, CellState.SME_RATED, round=2)
    out = build_training_set(lsm, corpus, SamplingConfig(per_stratum=8, seed=0))
    hits = [t for t in out if t.company_id == "ab" and t.target_tag == 2]
    assert len(hits) == 1
    assert hits[0].score == 0.8
    assert hits[0].source_pair == (1, 2)


def test_augment_drops_stale_scores():
    lsm1 = rated_lsm([(0, 1, 1)])
    cfg = SamplingConfig(per_stratum=8, seed=4)
    first = build_training_set(lsm1, CORPUS, cfg)
    assert any(t.score == 0.2 for t in first)

    lsm2, diff = apply_sme_updates(lsm1, None, [(0, 1, 4)], round=2)
    out = augment_from_diff(first, diff, lsm2, CORPUS, cfg)
    pair_scores = {t.score for t in out if t.source_pair == (0, 1)}
    assert pair_scores == {0.8}


def test_augment_equals_rebuild_simple():
    cfg = SamplingConfig(per_stratum=2, seed=9)
    lsm1 = rated_lsm([(0, 1, 3)])
    existing = build_training_set(lsm1, CORPUS, cfg)
    lsm2, diff = apply_sme_updates(lsm1, None, [(0, 2, 2), (0, 1, 5)], round=2)
    assert augment_from_diff(existing, diff, lsm2, CORPUS, cfg) == build_training_set(
        lsm2, CORPUS, cfg
    )


SYNTH, _ = generate_synthetic(4, 40, seed=13)
PAIRS = [(i, j) for i in range(4) for j in range(i + 1, 4)]


@settings(deadline=None, max_examples=60)
@given(
    st.lists(
        st.tuples(st.sampled_from(PAIRS), st.integers(min_value=0, max_value=5)),
        min_size=1,
        max_size=8,
    ),
    st.lists(
        st.tuples(st.sampled_from(PAIRS), st.integers(min_value=0, max_value=5)),
        min_size=1,
        max_size=8,
    ),
    st.integers(min_value=0, max_value=50),
)
def test_augment_equals_rebuild_property(first_updates, second_updates, seed):
    """Incremental augmentation replays to exactly what a rebuild produces."""
    cfg = SamplingConfig(per_stratum=3, seed=seed)
    lsm0 = Lsm(4)
    lsm1, _ = apply_sme_updates(
        lsm0, None, [(i, j, r) for (i, j), r in first_updates], round=1
    )
    existing = build_training_set(lsm1, SYNTH, cfg)
    lsm2, diff = apply_sme_updates(
        lsm1, None, [(i, j, r) for (i, j), r in second_updates], round=2
    )
    assert augment_from_diff(existing, diff, lsm2, SYNTH, cfg) == build_training_set(
        lsm2, SYNTH, cfg
    )


def test_save_load_round_trip(tmp_path):
    lsm = rated_lsm([(0, 1, 2), (1, 2, 4)])
    out = build_training_set(lsm, CORPUS, SamplingConfig(per_stratum=8, seed=2))
    path = tmp_path / "triplets.jsonl"
    save_triplets(out, path)
    loaded = load_triplets(path)
    assert [(t.cbd, t.itd, t.score) for t in loaded] == [
        (t.cbd, t.itd, t.score) for t in out
    ]
    assert [t.company_id for t in loaded] == [t.company_id for t in out]


def test_sampling_config_validation():
    with pytest.raises(TripletError):
        SamplingConfig(per_stratum=0)
