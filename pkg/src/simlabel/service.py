"""HTTP API for the reviewer workflow: pending pair queues, rating intake
with durable storage and nonce idempotency, iteration control, and read-only
views over the latest complete round.

Mutations are serialized through one lock; reads go straight to the persisted
snapshots named by the manifest, so they never see a half-written round.
"""
from __future__ import annotations

import itertools
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.staticfiles import StaticFiles

from .encoder import load_checkpoint
from .inference import assign_top_k, build_itd_index, rank_tags
from .lsm import LsmError, canonical_pair, load_lsm, validate_rating
from .pipeline import Phase, Pipeline, PipelineError, open_state
from .util import atomic_write_text, canonical_json, read_json


@dataclass
class JobStatus:
    job_id: int
    kind: str = "train_round"
    phase: str = "queued"
    progress: int = 0
    result_round: int | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "phase": self.phase,
            "progress": self.progress,
            "result_round": self.result_round,
            "error": self.error,
        }


class Service:
    def __init__(self, pipe: Pipeline):
        self.pipe = pipe
        self.lock = threading.Lock()
        self.job: JobStatus | None = None
        self.job_ids = itertools.count(1)
        self._index_cache: dict[str, tuple] = {}
        if pipe.manifest_path.exists():
            self.state = pipe.resume()
        else:
            self.state = pipe.bootstrap()
        pipe.on_epoch = self._on_epoch

    # ---- helpers ----

    def _on_epoch(self, epoch: int, val_loss: float) -> None:
        if self.job is not None:
            self.job.progress += 1

    def manifest(self) -> dict:
        return read_json(self.pipe.manifest_path)

    def training_busy(self) -> bool:
        return self.job is not None and self.job.phase in ("queued", "running")

    def reject_if_busy(self) -> None:
        if self.training_busy():
            raise HTTPException(409, "a training round is in progress")

    def parked_dir(self) -> Path:
        return self.pipe.round_dir(self.manifest()["latest_round"])

    def model_lsm(self):
        path = self.parked_dir() / "model_lsm.json"
        return load_lsm(path) if path.exists() else None

    def ranker(self):
        manifest = self.manifest()
        best = manifest.get("best")
        if not best:
            raise HTTPException(503, "no trained checkpoint yet")
        ckpt = str(self.pipe.state_dir / best["checkpoint"])
        cached = self._index_cache.get(ckpt)
        if cached is None:
            params, tokenizer = load_checkpoint(ckpt)
            index = build_itd_index(params, tokenizer, self.pipe.corpus)
            cached = (params, tokenizer, index)
            self._index_cache = {ckpt: cached}
        return cached

    # ---- rating intake ----

    def submit_rating(self, body: dict) -> dict:
        try:
            i, j = canonical_pair(int(body["i"]), int(body["j"]))
            rating = validate_rating(body["rating"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(400, f"malformed submission: {exc}")
        if not 0 <= i < self.pipe.corpus.n or not 0 <= j < self.pipe.corpus.n:
            raise HTTPException(400, f"pair ({i},{j}) outside matrix of size {self.pipe.corpus.n}")
        nonce = body.get("nonce")

        with self.lock:
            self.reject_if_busy()
            inbox_path = self.parked_dir() / "inbox.json"
            entries = read_json(inbox_path) if inbox_path.exists() else []
            if nonce is not None:
                for entry in entries:
                    if entry.get("nonce") == nonce:
                        return {"state": entry["state"], "i": entry["i"], "j": entry["j"]}

            model = self.model_lsm()
            if model is None:
                state = "newly_rated"
            elif model.rating(i, j) == rating:
                state = "confirmed"
            else:
                state = "overridden"
            entry = {
                "i": i,
                "j": j,
                "rating": rating,
                "state": state,
                "submitted_at": datetime.now(timezone.utc).isoformat(),
            }
            if nonce is not None:
                entry["nonce"] = nonce
            entries.append(entry)
            # Durable before the 200: atomic replace with fsync.
            atomic_write_text(inbox_path, canonical_json(entries) + "\n")
            return {"state": state, "i": i, "j": j}

    # ---- iteration control ----

    def start_iteration(self) -> JobStatus:
        with self.lock:
            self.reject_if_busy()
            manifest = self.manifest()
            if manifest["phase"] == Phase.DONE.value:
                raise HTTPException(409, "pipeline has finished")
            if self.state.phase in (Phase.AWAIT_RATINGS, Phase.AWAIT_REVIEW):
                inbox = read_json(self.parked_dir() / "inbox.json")
                if not inbox:
                    raise HTTPException(409, "no ratings submitted for the pending queue")
            job = JobStatus(job_id=next(self.job_ids), phase="queued")
            self.job = job

        def work():
            job.phase = "running"
            try:
                state = self.pipe.poke(self.state)
                while state.phase is Phase.TRAINING:
                    state = self.pipe.run_round(state)
                self.state = state
                job.result_round = state.history[-1]["round"] if state.history else None
                job.phase = "done"
            except Exception as exc:
                job.error = str(exc)
                job.phase = "failed"

        threading.Thread(target=work, daemon=True).start()
        return job


def create_app(
    state_dir,
    corpus_dir: str | None = None,
    frontend_dir: str | None = None,
    pipe: Pipeline | None = None,
    config_path: str | None = None,
) -> FastAPI:
    if pipe is None:
        corpus = None
        if corpus_dir is not None:
            from .corpus import load_corpus_dir

            corpus = load_corpus_dir(corpus_dir)
        if (Path(state_dir) / "config.json").exists():
            pipe = open_state(state_dir, corpus=corpus)
        else:
            # Fresh state: start a live-reviewer run over the given corpus.
            from .pipeline import LiveOracle, PipelineConfig

            if corpus is None:
                raise PipelineError("a fresh state directory needs --corpus")
            cfg = (
                PipelineConfig.from_dict(read_json(config_path))
                if config_path
                else PipelineConfig()
            )
            pipe = Pipeline(
                corpus,
                cfg,
                LiveOracle(),
                state_dir,
                corpus_dir=corpus_dir,
                oracle_spec={"kind": "live"},
            )
    svc = Service(pipe)
    app = FastAPI(title="simlabel", docs_url=None, redoc_url=None)
    app.state.svc = svc

    token = os.environ.get("SIMLABEL_TOKEN")

    async def check_auth(request: Request):
        if token and request.headers.get("authorization") != f"Bearer {token}":
            raise HTTPException(401, "missing or invalid bearer token")

    dep = [Depends(check_auth)]

    @app.get("/api/tags", dependencies=dep)
    def get_tags():
        return [
            {"tag_id": t.tag_id, "name": t.name, "itd": t.itd}
            for t in svc.pipe.corpus.tags
        ]

    @app.get("/api/lsm", dependencies=dep)
    def get_lsm():
        return read_json(svc.parked_dir() / "lsm.json")

    @app.get("/api/pairs/pending", dependencies=dep)
    def get_pending():
        svc.reject_if_busy()
        queue = read_json(svc.parked_dir() / "queue.json")
        inbox_path = svc.parked_dir() / "inbox.json"
        answered = set()
        if inbox_path.exists():
            answered = {(e["i"], e["j"]) for e in read_json(inbox_path)}
        tags = svc.pipe.corpus.tags
        out = []
        for item in queue:
            if (item["i"], item["j"]) in answered:
                continue
            out.append(
                {
                    "i": item["i"],
                    "j": item["j"],
                    "name_i": tags[item["i"]].name,
                    "name_j": tags[item["j"]].name,
                    "itd_i": tags[item["i"]].itd,
                    "itd_j": tags[item["j"]].itd,
                    "model_rating": item["model_rating"],
                    "prior_sme_rating": item["prior_rating"],
                }
            )
        return out

    @app.post("/api/pairs/rating", dependencies=dep)
    async def post_rating(request: Request):
        body = await request.json()
        if not isinstance(body, dict):
            raise HTTPException(400, "expected a JSON object")
        return svc.submit_rating(body)

    @app.post("/api/iterations", dependencies=dep, status_code=202)
    def post_iteration():
        return svc.start_iteration().to_dict()

    @app.get("/api/iterations/current", dependencies=dep)
    def get_iteration():
        if svc.job is None:
            raise HTTPException(404, "no iteration started yet")
        return svc.job.to_dict()

    @app.get("/api/metrics/history", dependencies=dep)
    def get_history():
        manifest = svc.manifest()
        history = []
        for r in range(1, manifest["latest_round"] + 1):
            metrics = read_json(svc.pipe.state_dir / f"round_{r}/metrics.json")
            if metrics["accepted"]:
                history.append(
                    {
                        key: metrics["accepted"][key]
                        for key in ("round", "emr", "ap", "ar", "p_at_1")
                    }
                )
        return history

    @app.get("/api/companies/{company_id}/predictions", dependencies=dep)
    def get_predictions(company_id: str, k: int = 5):
        corpus = svc.pipe.corpus
        rec = next((c for c in corpus.companies if c.company_id == company_id), None)
        if rec is None:
            raise HTTPException(404, f"unknown company {company_id!r}")
        if not 1 <= k <= corpus.n:
            raise HTTPException(400, f"k={k} outside 1..{corpus.n}")
        params, tokenizer, index = svc.ranker()
        ranked = rank_tags(index, params, tokenizer, rec.cbd, company_id=company_id)
        return {
            "company_id": company_id,
            "ranked": [{"tag_id": t, "sim": s} for t, s in ranked.ranked],
            "assigned": sorted(assign_top_k(ranked, k)),
        }

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app


def serve(
    state_dir,
    corpus_dir=None,
    port=None,
    frontend_dir=None,
    host="127.0.0.1",
    config_path=None,
):
    import uvicorn

    if port is None:
        port = int(os.environ.get("SIMLABEL_PORT", "8000"))
    app = create_app(
        state_dir,
        corpus_dir=corpus_dir,
        frontend_dir=frontend_dir,
        config_path=config_path,
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")
