import json
from pathlib import Path

import pytest

from simlabel.corpus import generate_synthetic, save_corpus_dir
from simlabel.lsm import CellState, Lsm, load_lsm, save_lsm
from simlabel.pipeline import (
    IterationState,
    LiveOracle,
    Phase,
    Pipeline,
    PipelineConfig,
    PipelineError,
    SimulatedOracle,
    open_state,
    status,
)

CORPUS, TRUTH = generate_synthetic(4, 48, seed=21)

FAST = PipelineConfig(
    initial_fraction=0.4,
    max_rounds=3,
    learning_rates=(0.01,),
    dims=(8,),
    k=3,
    per_stratum=4,
    seed=1,
    epochs=6,
    batch_size=8,
    patience=0,
    vocab_size=1024,
    benchmark_fraction=0.25,
)


def snapshot(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# --- config -------------------------------------------------------------------

def test_config_round_trip_and_digest():
    d = FAST.to_dict()
    again = PipelineConfig.from_dict(d)
    assert again == FAST
    assert again.digest() == FAST.digest()
    assert PipelineConfig().digest() != FAST.digest()


def test_config_validation():
    with pytest.raises(PipelineError):
        PipelineConfig(initial_fraction=0.0)
    with pytest.raises(PipelineError):
        PipelineConfig(learning_rates=())
    with pytest.raises(PipelineError):
        PipelineConfig(dims=())
    with pytest.raises(PipelineError):
        PipelineConfig(max_rounds=0)


# --- oracles ------------------------------------------------------------------

def test_simulated_oracle_zero_jitter_returns_truth():
    oracle = SimulatedOracle(TRUTH, jitter=0.0, seed=0)
    pairs = [(0, 1), (1, 3)]
    got = oracle.rate(pairs, None, round=1)
    assert got == {p: TRUTH.rating(*p) for p in pairs}


def test_simulated_oracle_full_jitter_moves_every_rating_by_one():
    oracle = SimulatedOracle(TRUTH, jitter=1.0, seed=3)
    pairs = TRUTH.pairs()
    got = oracle.rate(pairs, None, round=2)
    for p in pairs:
        true = TRUTH.rating(*p)
        assert got[p] != true or true in (0, 5)  # clamped at the edges
        assert abs(got[p] - true) <= 1
        assert 0 <= got[p] <= 5
    # deterministic for the same round, different across rounds
    assert oracle.rate(pairs, None, round=2) == got


def test_simulated_oracle_rejects_bad_jitter():
    with pytest.raises(PipelineError):
        SimulatedOracle(TRUTH, jitter=1.5)


def test_live_oracle_drains_primed_ratings():
    oracle = LiveOracle()
    assert oracle.is_live
    oracle.prime([{"i": 0, "j": 1, "rating": 4}])
    assert oracle.rate([(0, 1)], None) == {(0, 1): 4}
    assert oracle.rate([(0, 1)], None) == {}


# --- bootstrap ----------------------------------------------------------------

def test_bootstrap_simulated_writes_round0_and_applies(tmp_path):
    pipe = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path)
    state = pipe.bootstrap()
    assert state.phase is Phase.TRAINING
    assert state.round == 1

    d = tmp_path / "round_0"
    assert load_lsm(d / "lsm.json") == Lsm(4)  # snapshot predates the ratings
    queue = json.loads((d / "queue.json").read_text())
    inbox = json.loads((d / "inbox.json").read_text())
    assert len(queue) == len(inbox) == 3  # ceil(0.4 * 6)
    assert {(q["i"], q["j"]) for q in queue} == {(e["i"], e["j"]) for e in inbox}

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["phase"] == "training"
    assert manifest["latest_round"] == 0

    for e in inbox:
        cell = state.lsm.cell(e["i"], e["j"])
        assert cell.rating == e["rating"] == TRUTH.rating(e["i"], e["j"])
        assert cell.state is CellState.SME_RATED
        assert cell.round == 1


def test_bootstrap_requires_ratings_from_simulated_oracle(tmp_path):
    class Mute:
        is_live = False

        def rate(self, pairs, model_ratings=None, round=0):
            return {}

    pipe = Pipeline(CORPUS, FAST, Mute(), tmp_path)
    with pytest.raises(PipelineError, match="no ratings"):
        pipe.bootstrap()


def test_bootstrap_live_parks_awaiting_ratings(tmp_path):
    pipe = Pipeline(CORPUS, FAST, LiveOracle(), tmp_path)
    state = pipe.bootstrap()
    assert state.phase is Phase.AWAIT_RATINGS
    assert state.pending_queue
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["phase"] == "await_ratings"
    assert json.loads((tmp_path / "round_0" / "inbox.json").read_text()) == []


# --- full loop ----------------------------------------------------------------

def test_run_completes_and_persists_rounds(tmp_path):
    pipe = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path)
    state = pipe.run()
    assert state.phase is Phase.DONE
    assert state.history, "no round was ever accepted"
    assert state.best is not None

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    last = manifest["latest_round"]
    assert last >= 1
    for r in range(1, last + 1):
        d = tmp_path / f"round_{r}"
        for name in ("lsm.json", "metrics.json", "queue.json", "inbox.json"):
            assert (d / name).exists(), f"round {r} missing {name}"
    best_round = state.best["round"]
    assert (tmp_path / f"round_{best_round}" / "model.ckpt").exists()
    assert (tmp_path / f"round_{best_round}" / "model_lsm.json").exists()

    # reviewer cells only ever grow, and ratings come from the oracle's truth
    for i, j in state.lsm.sme_pairs():
        assert state.lsm.cell(i, j).rating == TRUTH.rating(i, j)


def test_run_round_requires_training_phase(tmp_path):
    pipe = Pipeline(CORPUS, FAST, LiveOracle(), tmp_path)
    state = pipe.bootstrap()
    with pytest.raises(PipelineError, match="training"):
        pipe.run_round(state)


def test_exhausted_search_marks_done_with_empty_queue(tmp_path):
    # max_rounds high, single-cell grid: the first non-improving round ends it
    cfg = PipelineConfig(
        initial_fraction=0.9,
        max_rounds=6,
        learning_rates=(0.01,),
        dims=(8,),
        k=3,
        per_stratum=4,
        seed=2,
        epochs=4,
        batch_size=8,
        patience=0,
        vocab_size=1024,
        benchmark_fraction=0.25,
    )
    pipe = Pipeline(CORPUS, cfg, SimulatedOracle(TRUTH), tmp_path)
    state = pipe.run()
    assert state.phase is Phase.DONE
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    last = manifest["latest_round"]
    metrics = json.loads((tmp_path / f"round_{last}" / "metrics.json").read_text())
    if metrics["accepted"] is None:
        assert json.loads((tmp_path / f"round_{last}" / "queue.json").read_text()) == []
        assert metrics["attempts"]


# --- determinism and resume -----------------------------------------------------

def test_identical_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), a).run()
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), b).run()
    assert snapshot(a) == snapshot(b)


def test_resume_after_interrupt_reproduces_run(tmp_path):
    full_dir, cut_dir = tmp_path / "full", tmp_path / "cut"
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), full_dir).run()

    # interrupted run: stop after the first trained round
    pipe = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), cut_dir)
    state = pipe.bootstrap()
    state = pipe.run_round(state)
    assert state.round == 2

    # fresh process: reopen, resume, continue to the end
    pipe2 = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), cut_dir)
    resumed = pipe2.resume()
    final = pipe2.run(resumed)
    assert final.phase is Phase.DONE
    assert snapshot(full_dir) == snapshot(cut_dir)


def test_resume_rejects_config_mismatch(tmp_path):
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path).run()
    other = PipelineConfig.from_dict({**FAST.to_dict(), "epochs": 7})
    pipe = Pipeline(CORPUS, other, SimulatedOracle(TRUTH), tmp_path)
    with pytest.raises(PipelineError, match="different configuration"):
        pipe.resume()


def test_resume_without_manifest(tmp_path):
    pipe = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path)
    with pytest.raises(PipelineError, match="nothing to resume"):
        pipe.resume()


def test_resume_done_state_is_terminal(tmp_path):
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path).run()
    pipe = Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path)
    state = pipe.resume()
    assert state.phase is Phase.DONE
    assert state.history
    again = pipe.run(state)
    assert again.phase is Phase.DONE


# --- live flow ------------------------------------------------------------------

def test_poke_applies_inbox_written_while_parked(tmp_path):
    from simlabel.util import write_json

    pipe = Pipeline(CORPUS, FAST, LiveOracle(), tmp_path)
    state = pipe.bootstrap()
    assert state.phase is Phase.AWAIT_RATINGS

    entries = [
        {"i": q.i, "j": q.j, "rating": TRUTH.rating(q.i, q.j)}
        for q in state.pending_queue
    ]
    write_json(tmp_path / "round_0" / "inbox.json", entries)
    state = pipe.poke(state)
    assert state.phase is Phase.TRAINING
    assert len(state.lsm.sme_pairs()) == len(entries)

    state = pipe.run(state)
    assert state.phase in (Phase.AWAIT_REVIEW, Phase.DONE)
    if state.phase is Phase.AWAIT_REVIEW:
        # queue persisted for the UI; nothing applied yet
        parked = state.round - 1
        queue = json.loads((tmp_path / f"round_{parked}" / "queue.json").read_text())
        assert [(q.i, q.j) for q in state.pending_queue] == [
            (q["i"], q["j"]) for q in queue
        ]


# --- reopening ------------------------------------------------------------------

def test_open_state_rebuilds_simulated_pipeline(tmp_path):
    corpus_dir = tmp_path / "corpus"
    save_corpus_dir(CORPUS, corpus_dir)
    save_lsm(TRUTH, corpus_dir / "truth_lsm.json")
    state_dir = tmp_path / "state"
    spec = {
        "kind": "simulated",
        "truth_path": str(corpus_dir / "truth_lsm.json"),
        "jitter": 0.0,
        "seed": 5,
    }
    Pipeline(
        CORPUS,
        FAST,
        SimulatedOracle(TRUTH, seed=5),
        state_dir,
        corpus_dir=str(corpus_dir),
        oracle_spec=spec,
    ).run()

    pipe = open_state(state_dir)
    assert pipe.cfg == FAST
    assert isinstance(pipe.oracle, SimulatedOracle)
    assert pipe.oracle.seed == 5
    state = pipe.resume()
    assert state.phase is Phase.DONE


def test_open_state_requires_config(tmp_path):
    with pytest.raises(PipelineError, match="no configuration"):
        open_state(tmp_path)


def test_status_reports_history(tmp_path):
    Pipeline(CORPUS, FAST, SimulatedOracle(TRUTH), tmp_path).run()
    info = status(tmp_path)
    assert info["phase"] == "done"
    assert info["latest_round"] >= 1
    assert info["best"]["checkpoint"].endswith("model.ckpt")
    assert all(set(h) == {"round", "emr", "ap", "ar", "p_at_1"} for h in info["history"])
    with pytest.raises(PipelineError):
        status(tmp_path / "nowhere")
