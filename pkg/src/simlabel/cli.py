"""Command line front door.

Nine subcommands cover the full workflow: make or check a corpus, pick the
pairs to rate first, expand ratings into training triplets, train and apply
an encoder, score the result, drive the whole loop, or serve the HTTP API.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import pipeline as pipeline_mod
from .encoder import (
    DEFAULT_DIM,
    DEFAULT_VOCAB,
    TokenizerConfig,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .inference import assign_top_k, build_itd_index, rank_corpus
from .lsm import load_lsm, save_lsm, select_initial_pairs
from .metrics import evaluate
from .tripletgen import SamplingConfig, build_training_set, load_triplets, save_triplets
from .util import canonical_json, write_json

TRUTH_LSM_NAME = "truth_lsm.json"


def _parse_profile(text: str) -> corpus_mod.NoiseProfile:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"profile needs exactly three comma-separated fractions, got {text!r}")
    return corpus_mod.NoiseProfile(exact_frac=parts[0], incorrect_frac=parts[1], partial_frac=parts[2])


def _cmd_synth(args) -> int:
    profile = _parse_profile(args.profile)
    corpus, truth = corpus_mod.generate_synthetic(args.tags, args.companies, profile, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus_dir(corpus, out)
    save_lsm(truth, out / TRUTH_LSM_NAME)
    quotas = profile.quotas(args.companies)
    print(f"wrote {corpus.n} tags, {len(corpus.companies)} companies to {out}")
    print(f"noise quotas exact={quotas[0]} incorrect={quotas[1]} partial={quotas[2]}")
    return 0


def _cmd_validate(args) -> int:
    try:
        corpus = corpus_mod.load_corpus(args.tags, args.companies)
    except corpus_mod.CorpusError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    with_gold = sum(1 for c in corpus.companies if c.gold_tags is not None)
    print(f"ok: {corpus.n} tags, {len(corpus.companies)} companies ({with_gold} with gold labels)")
    return 0


def _cmd_select_pairs(args) -> int:
    lsm = load_lsm(args.lsm)
    pairs = select_initial_pairs(lsm, args.fraction, args.seed)
    print(canonical_json([list(p) for p in pairs]))
    return 0


def _cmd_triplets(args) -> int:
    lsm = load_lsm(args.lsm)
    corpus = corpus_mod.load_corpus_dir(args.corpus)
    cfg = SamplingConfig(per_stratum=args.x, include_self=not args.no_self, seed=args.seed)
    triplets = build_training_set(lsm, corpus, cfg)
    save_triplets(triplets, args.out)
    print(f"wrote {len(triplets)} triplets to {args.out}")
    return 0


def _cmd_train(args) -> int:
    triplets = load_triplets(args.triplets)
    tokenizer = TokenizerConfig(vocab_size=args.vocab, hash_seed=args.hash_seed)
    tcfg = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    params, history = train(triplets, tcfg, tokenizer, dim=args.dim)
    save_checkpoint(params, tokenizer, args.out)
    if history:
        last = history[-1]
        print(f"epoch {last['epoch']}: train_loss={last['train_loss']:.6f} val_loss={last['val_loss']:.6f}")
    print(f"wrote checkpoint to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    params, tokenizer = load_checkpoint(args.ckpt)
    corpus = corpus_mod.load_corpus_dir(args.corpus)
    index = build_itd_index(params, tokenizer, corpus)
    lines = []
    for ranked in rank_corpus(index, params, tokenizer, corpus):
        assigned = sorted(assign_top_k(ranked, args.k))
        lines.append(
            canonical_json(
                {
                    "company_id": ranked.company_id,
                    "ranked": [{"tag_id": t, "sim": s} for t, s in ranked.ranked],
                    "assigned": assigned,
                }
            )
        )
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} assignments to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .inference import RankedAssignment

    corpus = corpus_mod.load_corpus_dir(args.corpus)
    assignments = []
    with open(args.assignments, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            ranked = tuple((int(r["tag_id"]), float(r["sim"])) for r in obj["ranked"])
            assignments.append(RankedAssignment(obj["company_id"], ranked, len(obj["assigned"])))
    report = evaluate(assignments, corpus, args.k)
    write_json(args.out, report.to_dict())
    print(f"ap={report.ap:.4f} ar={report.ar:.4f} p@{args.k}={report.p_at_k[args.k]:.4f}")
    return 0


def _load_pipeline_config(path: str | None) -> pipeline_mod.PipelineConfig:
    if path is None:
        return pipeline_mod.PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return pipeline_mod.PipelineConfig.from_dict(json.load(fh))


def _cmd_pipeline_run(args) -> int:
    corpus_dir = Path(args.corpus)
    corpus = corpus_mod.load_corpus_dir(corpus_dir)
    cfg = _load_pipeline_config(args.config)
    if args.oracle == "simulated":
        truth_path = corpus_dir / TRUTH_LSM_NAME
        if not truth_path.exists():
            print(f"simulated oracle needs {truth_path}", file=sys.stderr)
            return 1
        truth = load_lsm(truth_path)
        oracle = pipeline_mod.SimulatedOracle(truth, jitter=args.jitter, seed=args.seed)
        spec = {"kind": "simulated", "truth_path": str(truth_path), "jitter": args.jitter, "seed": args.seed}
    else:
        oracle = pipeline_mod.LiveOracle()
        spec = {"kind": "live"}
    pipe = pipeline_mod.Pipeline(corpus, cfg, oracle, args.state, corpus_dir=str(corpus_dir), oracle_spec=spec)
    state = pipe.run()
    print(f"stopped in phase {state.phase.value} after round {state.round - 1}")
    if state.best:
        print(f"best: round {state.best['round']} emr={state.best['emr']:.4f} ar={state.best['ar']:.4f}")
    return 0


def _cmd_pipeline_resume(args) -> int:
    pipe = pipeline_mod.open_state(args.state)
    state = pipe.resume()
    if state.phase is pipeline_mod.Phase.TRAINING:
        state = pipe.run(state)
    print(f"phase {state.phase.value}, round {state.round}")
    return 0


def _cmd_pipeline_status(args) -> int:
    print(canonical_json(pipeline_mod.status(args.state)))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(
        args.state,
        corpus_dir=args.corpus,
        port=args.port,
        frontend_dir=args.frontend,
        host=args.host,
        config_path=args.config,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simlabel", description="Similarity-label training workflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    p.add_argument("--tags", type=int, required=True)
    p.add_argument("--companies", type=int, required=True)
    p.add_argument("--profile", default="0.26,0.24,0.50", help="exact,incorrect,partial fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="check corpus files for structural problems")
    p.add_argument("--tags", required=True)
    p.add_argument("--companies", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("select-pairs", help="pick the initial pairs to send for rating")
    p.add_argument("--lsm", required=True)
    p.add_argument("--fraction", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_select_pairs)

    p = sub.add_parser("triplets", help="expand rated cells into training triplets")
    p.add_argument("--lsm", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--x", type=int, default=8, help="companies sampled per (tag, rating) stratum")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-self", action="store_true", help="skip the identity triplets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_triplets)

    p = sub.add_parser("train", help="train an encoder on a triplet file")
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="rank every tag for every company")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score ranked assignments against gold labels")
    p.add_argument("--assignments", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="drive the rate-train-review loop")
    psub = p.add_subparsers(dest="pipeline_command", required=True)

    pr = psub.add_parser("run", help="start a fresh loop in a state directory")
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--config", default=None, help="JSON file of config overrides")
    pr.add_argument("--oracle", choices=("simulated", "live"), required=True)
    pr.add_argument("--state", required=True)
    pr.add_argument("--jitter", type=float, default=0.0, help="simulated rating error rate")
    pr.add_argument("--seed", type=int, default=0, help="simulated oracle seed")
    pr.set_defaults(func=_cmd_pipeline_run)

    pe = psub.add_parser("resume", help="continue an interrupted loop")
    pe.add_argument("--state", required=True)
    pe.set_defaults(func=_cmd_pipeline_resume)

    ps = psub.add_parser("status", help="print manifest and history as JSON")
    ps.add_argument("--state", required=True)
    ps.set_defaults(func=_cmd_pipeline_status)

    p = sub.add_parser("serve", help="run the review HTTP API")
    p.add_argument("--state", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--port", type=int, default=None, help="default SIMLABEL_PORT or 8000")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--frontend", default=None, help="directory of static UI files to mount at /")
    p.add_argument("--config", default=None, help="JSON config overrides for a fresh state dir")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
