"""Iterative human-in-the-loop training: initial pair labeling, triplet
training, matrix reconstruction, improvement-gated review, augmentation.

Persistence layout (all JSON canonical, no wall-clock anywhere, so repeat
runs with equal seeds produce byte-identical state directories):

    state/config.json              run configuration + corpus/oracle pointers
    state/manifest.json            latest complete round, phase, cursors, best
    state/round_0/                 bootstrap snapshot (empty matrix + queue)
    state/round_<r>/lsm.json       matrix the round trained against
    state/round_<r>/model.ckpt     accepted encoder parameters
    state/round_<r>/model_lsm.json reconstructed matrix of the accepted model
    state/round_<r>/queue.json     review queue generated from the round
    state/round_<r>/inbox.json     reviewer ratings answering that queue
    state/round_<r>/metrics.json   per-attempt records + accepted metrics

A round directory is written completely before the manifest advances, and
reviewer ratings are applied only at the start of the next round, re-derived
from persisted files. Interrupting anywhere therefore replays identically.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

from .corpus import Corpus, load_corpus_dir, split_benchmark
from .encoder import (
    EncoderError,
    EncoderParams,
    TokenizerConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .inference import build_itd_index, rank_corpus, reconstruct_lsm
from .lsm import (
    Lsm,
    QueueItem,
    apply_sme_updates,
    emr,
    load_lsm,
    pending_review_queue,
    save_lsm,
    select_initial_pairs,
)
from .metrics import evaluate
from .tripletgen import SamplingConfig, augment_from_diff, build_training_set
from .util import canonical_json, child_seed, read_json, sha256_hex, write_json


class PipelineError(ValueError):
    """Raised for invalid configs, inconsistent state, or bad oracles."""


class Phase(Enum):
    AWAIT_RATINGS = "await_ratings"
    TRAINING = "training"
    AWAIT_REVIEW = "await_review"
    DONE = "done"


@dataclass(frozen=True)
class PipelineConfig:
    initial_fraction: float = 0.15
    improvement_epsilon: float = 0.005
    max_rounds: int = 5
    learning_rates: tuple[float, ...] = (0.01, 0.003)
    dims: tuple[int, ...] = (64, 128, 256)
    k: int = 5
    per_stratum: int = 8
    seed: int = 0
    epochs: int = 60
    batch_size: int = 32
    patience: int = 8
    validation_fraction: float = 0.1
    optimizer: str = "adam"
    vocab_size: int = 4096
    benchmark_fraction: float = 0.2
    unrated_cap: int | None = 0
    review_extra_frac: float = 0.10

    def __post_init__(self):
        if not 0 < self.initial_fraction <= 1:
            raise PipelineError(f"initial_fraction {self.initial_fraction} outside (0, 1]")
        if not self.learning_rates:
            raise PipelineError("learning-rate grid is empty")
        if not self.dims:
            raise PipelineError("capacity ladder is empty")
        if self.max_rounds < 1:
            raise PipelineError(f"max_rounds must be >= 1, got {self.max_rounds}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        kwargs = dict(data)
        for key in ("learning_rates", "dims"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()).encode())


class SimulatedOracle:
    """Answers every requested pair from a reference matrix, with optional
    seeded probability of drifting the rating by one point."""

    is_live = False

    def __init__(self, truth: Lsm, jitter: float = 0.0, seed: int = 0):
        if not 0 <= jitter <= 1:
            raise PipelineError(f"jitter {jitter} outside [0, 1]")
        self.truth = truth
        self.jitter = jitter
        self.seed = seed

    def rate(self, pairs, model_ratings=None, round: int = 0) -> dict:
        out = {}
        for i, j in pairs:
            r = self.truth.rating(i, j)
            if self.jitter > 0:
                roll = child_seed(self.seed, "jitter", i, j, round) / 2**64
                if roll < self.jitter:
                    up = child_seed(self.seed, "dir", i, j, round) & 1
                    r = min(5, r + 1) if up else max(0, r - 1)
            out[(i, j)] = r
        return out


class LiveOracle:
    """Hands back whatever ratings were primed from the service inbox."""

    is_live = True

    def __init__(self):
        self._pending: dict[tuple[int, int], int] = {}

    def prime(self, entries) -> None:
        for entry in entries:
            i, j = int(entry["i"]), int(entry["j"])
            self._pending[(min(i, j), max(i, j))] = int(entry["rating"])

    def rate(self, pairs, model_ratings=None, round: int = 0) -> dict:
        out = dict(self._pending)
        self._pending = {}
        return out


@dataclass
class IterationState:
    round: int
    lsm: Lsm
    phase: Phase
    grid_cursor: int = 0
    ladder_cursor: int = 0
    best: dict | None = None
    history: list = field(default_factory=list)
    triplets: list | None = None
    pending_queue: list = field(default_factory=list)
    checkpoint_path: str | None = None


def _queue_to_json(queue: list[QueueItem]) -> list[dict]:
    return [
        {"i": q.i, "j": q.j, "model_rating": q.model_rating, "prior_rating": q.prior_rating}
        for q in queue
    ]


def _queue_from_json(data: list[dict]) -> list[QueueItem]:
    return [
        QueueItem(d["i"], d["j"], d["model_rating"], d["prior_rating"]) for d in data
    ]


class Pipeline:
    """One orchestrated run over a corpus, a config, and a rating oracle."""

    def __init__(
        self,
        corpus: Corpus,
        cfg: PipelineConfig,
        oracle,
        state_dir,
        corpus_dir: str | None = None,
        oracle_spec: dict | None = None,
    ):
        self.corpus = corpus
        self.cfg = cfg
        self.oracle = oracle
        self.state_dir = Path(state_dir)
        self.corpus_dir = corpus_dir
        self.oracle_spec = oracle_spec
        self.tokenizer = TokenizerConfig(
            vocab_size=cfg.vocab_size, hash_seed=child_seed(cfg.seed, "hash")
        )
        self.scfg = SamplingConfig(
            per_stratum=cfg.per_stratum,
            include_self=True,
            seed=child_seed(cfg.seed, "triplets"),
        )
        self.train_corpus, self.bench_corpus = split_benchmark(
            corpus, cfg.benchmark_fraction, child_seed(cfg.seed, "bench")
        )
        self._best_params: EncoderParams | None = None
        self._best_model_lsm: Lsm | None = None
        self.on_epoch = None

    # ---- paths ----

    def round_dir(self, r: int) -> Path:
        return self.state_dir / f"round_{r}"

    @property
    def manifest_path(self) -> Path:
        return self.state_dir / "manifest.json"

    def _write_manifest(self, latest: int, phase: Phase, state: IterationState) -> None:
        write_json(
            self.manifest_path,
            {
                "schema": 1,
                "config_hash": self.cfg.digest(),
                "latest_round": latest,
                "phase": phase.value,
                "grid_cursor": state.grid_cursor,
                "ladder_cursor": state.ladder_cursor,
                "best": state.best,
            },
        )

    # ---- bootstrap ----

    def bootstrap(self) -> IterationState:
        pairs = select_initial_pairs(
            Lsm(self.corpus.n), self.cfg.initial_fraction, child_seed(self.cfg.seed, "initial")
        )
        ratings = self.oracle.rate(pairs, None, round=0)
        if not ratings and not self.oracle.is_live:
            raise PipelineError("oracle returned no ratings for the initial pairs")

        empty = Lsm(self.corpus.n)
        queue = [QueueItem(i, j, None, None) for i, j in pairs]
        entries = [
            {"i": i, "j": j, "rating": ratings[(i, j)]} for i, j in sorted(ratings)
        ]
        d = self.round_dir(0)
        d.mkdir(parents=True, exist_ok=True)
        save_lsm(empty, d / "lsm.json")
        write_json(d / "queue.json", _queue_to_json(queue))
        write_json(d / "inbox.json", entries)
        write_json(d / "metrics.json", {"round": 0, "attempts": [], "accepted": None})
        write_json(
            self.state_dir / "config.json",
            {
                "config": self.cfg.to_dict(),
                "config_hash": self.cfg.digest(),
                "corpus_dir": self.corpus_dir,
                "oracle": self.oracle_spec,
            },
        )

        state = IterationState(round=1, lsm=empty, phase=Phase.AWAIT_RATINGS)
        state.pending_queue = queue
        self._write_manifest(0, Phase.AWAIT_RATINGS if not entries else Phase.TRAINING, state)
        if entries:
            self._apply_entries(state, entries, model_lsm=None)
        return state

    def _apply_entries(self, state: IterationState, entries, model_lsm: Lsm | None):
        updates = [(e["i"], e["j"], e["rating"]) for e in entries]
        new_lsm, diff = apply_sme_updates(state.lsm, model_lsm, updates, round=state.round)
        if state.triplets is not None:
            state.triplets = augment_from_diff(
                state.triplets, diff, new_lsm, self.train_corpus, self.scfg
            )
        state.lsm = new_lsm
        state.phase = Phase.TRAINING
        state.pending_queue = []
        return diff

    # ---- one working round ----

    def _improved(self, state: IterationState, emr_new: float, ar_new: float) -> bool:
        if state.best is None:
            return True
        eps = self.cfg.improvement_epsilon
        # Yardstick: the previously accepted model re-scored on the cells
        # rated so far. Comparing stored scalars would penalize every round
        # for growing the evaluation set.
        baseline = emr(self._best_model_lsm, state.lsm, state.lsm.sme_pairs())
        if emr_new - baseline >= eps:
            return True
        return emr_new > baseline - eps and ar_new - state.best["ar"] >= eps

    def run_round(self, state: IterationState) -> IterationState:
        if state.phase is not Phase.TRAINING:
            raise PipelineError(f"run_round requires phase training, got {state.phase.value}")
        cfg = self.cfg
        r = state.round
        if state.triplets is None:
            state.triplets = build_training_set(state.lsm, self.train_corpus, self.scfg)
        triplets = state.triplets

        attempts: list[dict] = []
        accepted = None
        params = index = model_lsm = None
        while True:
            attempt_no = len(attempts)
            dim = cfg.dims[state.ladder_cursor]
            lr = cfg.learning_rates[state.grid_cursor]
            warm = self._best_params if (state.best and state.best["dim"] == dim) else None
            record = {"round": r, "attempt": attempt_no, "lr": lr, "dim": dim}
            try:
                tcfg = TrainConfig(
                    learning_rate=lr,
                    batch_size=cfg.batch_size,
                    epochs=cfg.epochs,
                    optimizer=cfg.optimizer,
                    seed=child_seed(cfg.seed, "train", r, attempt_no),
                    validation_fraction=cfg.validation_fraction,
                    patience=cfg.patience,
                )
                params, hist = train(
                    triplets, tcfg, self.tokenizer, warm, dim=dim, on_epoch=self.on_epoch
                )
                index = build_itd_index(params, self.tokenizer, self.corpus)
                model_lsm = reconstruct_lsm(index, round=r)
                emr_val = emr(model_lsm, state.lsm, state.lsm.sme_pairs())
                assignments = rank_corpus(index, params, self.tokenizer, self.bench_corpus)
                report = evaluate(
                    assignments, self.bench_corpus, k=min(cfg.k, self.corpus.n)
                )
                record.update(
                    emr=emr_val,
                    ap=report.ap,
                    ar=report.ar,
                    p_at_1=report.p_at_k[1],
                    val_loss=min(h["val_loss"] for h in hist) if hist else None,
                )
                record["improved"] = self._improved(state, emr_val, report.ar)
            except EncoderError as exc:
                record.update(error=str(exc), improved=False)
            attempts.append(record)

            if record["improved"]:
                accepted = record
                break
            if state.grid_cursor + 1 < len(cfg.learning_rates):
                state.grid_cursor += 1
                continue
            if state.ladder_cursor + 1 < len(cfg.dims):
                state.ladder_cursor += 1
                state.grid_cursor = 0
                continue
            break

        d = self.round_dir(r)
        d.mkdir(parents=True, exist_ok=True)
        save_lsm(state.lsm, d / "lsm.json")
        write_json(d / "metrics.json", {"round": r, "attempts": attempts, "accepted": accepted})

        if accepted is None:
            # Hyperparameters and capacity exhausted without beating the
            # previous model; the loop is over.
            if params is not None:
                save_checkpoint(params, self.tokenizer, d / "model.ckpt")
                save_lsm(model_lsm, d / "model_lsm.json")
            write_json(d / "queue.json", [])
            write_json(d / "inbox.json", [])
            state.phase = Phase.DONE
            self._write_manifest(r, Phase.DONE, state)
            return state

        save_checkpoint(params, self.tokenizer, d / "model.ckpt")
        save_lsm(model_lsm, d / "model_lsm.json")
        state.best = {
            "round": r,
            "emr": accepted["emr"],
            "ar": accepted["ar"],
            "dim": accepted["dim"],
            "checkpoint": f"round_{r}/model.ckpt",
        }
        state.checkpoint_path = str(d / "model.ckpt")
        self._best_params = params
        self._best_model_lsm = model_lsm
        state.history.append(
            {k: accepted[k] for k in ("round", "emr", "ap", "ar", "p_at_1")}
        )

        unrated = state.lsm.unrated_pairs()
        extra = math.ceil(cfg.review_extra_frac * len(unrated)) if unrated else 0
        queue = pending_review_queue(
            state.lsm,
            model_lsm,
            random_extra=extra,
            seed=child_seed(cfg.seed, "queue", r),
            unrated_cap=cfg.unrated_cap,
        )
        write_json(d / "queue.json", _queue_to_json(queue))

        entries: list[dict] = []
        next_phase = Phase.DONE
        if r < cfg.max_rounds and queue:
            ratings = self.oracle.rate(
                [(q.i, q.j) for q in queue],
                {(q.i, q.j): q.model_rating for q in queue},
                round=r,
            )
            entries = [
                {"i": i, "j": j, "rating": ratings[(i, j)]} for i, j in sorted(ratings)
            ]
            next_phase = Phase.TRAINING if entries else Phase.AWAIT_REVIEW
        write_json(d / "inbox.json", entries)
        self._write_manifest(r, next_phase, state)

        if next_phase is Phase.TRAINING:
            state.round = r + 1
            self._apply_entries(state, entries, model_lsm)
        elif next_phase is Phase.AWAIT_REVIEW:
            state.round = r + 1
            state.phase = Phase.AWAIT_REVIEW
            state.pending_queue = queue
        else:
            state.phase = Phase.DONE
        return state

    # ---- waiting / continuing ----

    def poke(self, state: IterationState) -> IterationState:
        """Apply any reviewer ratings sitting in the parked round's inbox."""
        if state.phase not in (Phase.AWAIT_RATINGS, Phase.AWAIT_REVIEW):
            return state
        parked = state.round - 1
        inbox = read_json(self.round_dir(parked) / "inbox.json")
        if not inbox:
            return state
        model_lsm = None
        model_path = self.round_dir(parked) / "model_lsm.json"
        if model_path.exists():
            model_lsm = load_lsm(model_path)
        self._apply_entries(state, inbox, model_lsm)
        return state

    def run(self, state: IterationState | None = None) -> IterationState:
        """Drive rounds until the pipeline parks, finishes, or exhausts."""
        if state is None:
            state = self.bootstrap()
        state = self.poke(state)
        while state.phase is Phase.TRAINING:
            state = self.run_round(state)
        return state

    # ---- resume ----

    def resume(self) -> IterationState:
        if not self.manifest_path.exists():
            raise PipelineError(f"no manifest at {self.manifest_path}; nothing to resume")
        manifest = read_json(self.manifest_path)
        if manifest.get("config_hash") != self.cfg.digest():
            raise PipelineError("state directory was produced by a different configuration")
        latest = manifest["latest_round"]
        phase = Phase(manifest["phase"])

        lsm_path = self.round_dir(latest) / "lsm.json"
        if not lsm_path.exists():
            raise PipelineError(f"missing snapshot {lsm_path}")
        state = IterationState(
            round=latest + 1,
            lsm=load_lsm(lsm_path),
            phase=phase,
            grid_cursor=manifest["grid_cursor"],
            ladder_cursor=manifest["ladder_cursor"],
            best=manifest["best"],
        )
        for r in range(1, latest + 1):
            metrics = read_json(self.round_dir(r) / "metrics.json")
            if metrics["accepted"]:
                state.history.append(
                    {k: metrics["accepted"][k] for k in ("round", "emr", "ap", "ar", "p_at_1")}
                )
        if state.best:
            ckpt = self.state_dir / state.best["checkpoint"]
            if not ckpt.exists():
                raise PipelineError(f"missing checkpoint {ckpt}")
            self._best_params, _ = load_checkpoint(ckpt, expect_vocab=self.cfg.vocab_size)
            self._best_model_lsm = load_lsm(
                self.state_dir / f"round_{state.best['round']}/model_lsm.json"
            )
            state.checkpoint_path = str(ckpt)

        if phase is Phase.DONE:
            state.round = latest
            return state
        if phase is Phase.TRAINING:
            inbox = read_json(self.round_dir(latest) / "inbox.json")
            model_lsm = None
            model_path = self.round_dir(latest) / "model_lsm.json"
            if model_path.exists():
                model_lsm = load_lsm(model_path)
            if inbox:
                self._apply_entries(state, inbox, model_lsm)
            state.phase = Phase.TRAINING
        else:
            state.pending_queue = _queue_from_json(
                read_json(self.round_dir(latest) / "queue.json")
            )
        return state


def open_state(state_dir, corpus: Corpus | None = None, oracle=None) -> Pipeline:
    """Rebuild a Pipeline from a state directory's persisted configuration."""
    state_dir = Path(state_dir)
    cfg_path = state_dir / "config.json"
    if not cfg_path.exists():
        raise PipelineError(f"no configuration at {cfg_path}")
    stored = read_json(cfg_path)
    cfg = PipelineConfig.from_dict(stored["config"])
    if corpus is None:
        corpus_dir = stored.get("corpus_dir")
        if not corpus_dir:
            raise PipelineError("state has no recorded corpus directory; pass one")
        corpus = load_corpus_dir(corpus_dir)
    if oracle is None:
        spec = stored.get("oracle") or {}
        if spec.get("kind") == "simulated":
            truth = load_lsm(spec["truth_path"])
            oracle = SimulatedOracle(
                truth, spec.get("jitter", 0.0), seed=spec.get("seed", cfg.seed)
            )
        else:
            oracle = LiveOracle()
    return Pipeline(
        corpus,
        cfg,
        oracle,
        state_dir,
        corpus_dir=stored.get("corpus_dir"),
        oracle_spec=stored.get("oracle"),
    )


def status(state_dir) -> dict:
    state_dir = Path(state_dir)
    manifest_path = state_dir / "manifest.json"
    if not manifest_path.exists():
        raise PipelineError(f"no manifest at {manifest_path}")
    manifest = read_json(manifest_path)
    history = []
    for r in range(1, manifest["latest_round"] + 1):
        metrics = read_json(state_dir / f"round_{r}/metrics.json")
        if metrics["accepted"]:
            history.append(
                {k: metrics["accepted"][k] for k in ("round", "emr", "ap", "ar", "p_at_1")}
            )
    return {
        "phase": manifest["phase"],
        "latest_round": manifest["latest_round"],
        "best": manifest["best"],
        "history": history,
    }
