"""Turn rating-matrix cells plus a corpus into (CBD, ITD, score) training
triplets: each rated tag pair expands to companies carrying one tag matched
against the other tag's description, at the normalized rating.

Dedup rule: one triplet per (company, target tag). Pair-sourced triplets beat
self-pairs, newer-round cells beat older ones, ties go to the smaller pair.
The rule depends only on the matrix, never on arrival order, which makes
incremental augmentation produce exactly what a from-scratch rebuild would.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .corpus import Corpus
from .lsm import SME_SOURCED, Lsm, LsmDiff, canonical_pair, validate_rating
from .util import canonical_json, child_seed

log = logging.getLogger(__name__)

VALID_SCORES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


class TripletError(ValueError):
    """Raised when no training data can be produced."""


@dataclass(frozen=True)
class Triplet:
    company_id: str
    cbd: str
    itd: str
    score: float
    target_tag: int
    source_pair: tuple[int, int] | None  # None marks a self triplet


@dataclass(frozen=True)
class SamplingConfig:
    per_stratum: int = 8
    include_self: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.per_stratum < 1:
            raise TripletError(f"per_stratum must be >= 1, got {self.per_stratum}")


def normalize_rating(r: int) -> float:
    validate_rating(r)
    return r / 5


def _companies_by_tag(corpus: Corpus) -> dict[int, list]:
    by_tag: dict[int, list] = {t: [] for t in range(corpus.n)}
    for rec in corpus.companies:
        for t in sorted(rec.noisy_tags):
            by_tag[t].append(rec)
    return by_tag


def expand_pair(
    i: int,
    j: int,
    r: int,
    corpus: Corpus,
    cfg: SamplingConfig,
    by_tag: dict[int, list] | None = None,
) -> list[Triplet]:
    """Expand one rated cell: companies of tag i vs ITD_j and vice versa."""
    i, j = canonical_pair(i, j)
    score = normalize_rating(r)
    if by_tag is None:
        by_tag = _companies_by_tag(corpus)
    rng = random.Random(child_seed(cfg.seed, "pair", i, j))
    out: list[Triplet] = []
    for src, dst in ((i, j), (j, i)):
        pool = by_tag.get(src, [])
        picked = rng.sample(pool, min(cfg.per_stratum, len(pool)))
        itd = corpus.tag(dst).itd
        for rec in picked:
            out.append(Triplet(rec.company_id, rec.cbd, itd, score, dst, (i, j)))
    if not out:
        log.warning("pair (%d,%d): no company carries either tag, nothing expanded", i, j)
    return out


def self_triplets(corpus: Corpus, cfg: SamplingConfig) -> list[Triplet]:
    """Per tag, up to per_stratum of its companies at full similarity."""
    if not cfg.include_self:
        return []
    by_tag = _companies_by_tag(corpus)
    out: list[Triplet] = []
    for t in range(corpus.n):
        rng = random.Random(child_seed(cfg.seed, "self", t))
        pool = by_tag[t]
        picked = rng.sample(pool, min(cfg.per_stratum, len(pool)))
        itd = corpus.tag(t).itd
        for rec in picked:
            out.append(Triplet(rec.company_id, rec.cbd, itd, 1.0, t, None))
    return out


def _priority(t: Triplet, lsm: Lsm) -> tuple:
    if t.source_pair is None:
        return (1, 0, (t.target_tag, t.target_tag))
    cell = lsm.cell(*t.source_pair)
    return (0, -cell.round, t.source_pair)


def _finalize(candidates: list[Triplet], lsm: Lsm, cfg: SamplingConfig) -> list[Triplet]:
    """Stale filter, dedup, canonical re-sort, seeded shuffle."""
    kept: dict[tuple[str, int], Triplet] = {}
    for t in candidates:
        if t.source_pair is not None:
            cell = lsm.cell(*t.source_pair)
            if cell.state not in SME_SOURCED or t.score != cell.rating / 5:
                continue
        key = (t.company_id, t.target_tag)
        prev = kept.get(key)
        if prev is None or _priority(t, lsm) < _priority(prev, lsm):
            kept[key] = t

    def sort_key(t: Triplet):
        pair = t.source_pair or (t.target_tag, t.target_tag)
        return (pair, t.source_pair is None, t.company_id, t.target_tag)

    final = sorted(kept.values(), key=sort_key)
    random.Random(child_seed(cfg.seed, "shuffle")).shuffle(final)
    return final


def build_training_set(lsm: Lsm, corpus: Corpus, cfg: SamplingConfig) -> list[Triplet]:
    rated = lsm.sme_pairs()
    if not rated:
        raise TripletError("matrix has no reviewer-rated cells to expand")
    by_tag = _companies_by_tag(corpus)
    candidates: list[Triplet] = []
    for i, j in rated:
        candidates.extend(
            expand_pair(i, j, lsm.cell(i, j).rating, corpus, cfg, by_tag)
        )
    candidates.extend(self_triplets(corpus, cfg))
    final = _finalize(candidates, lsm, cfg)
    if not final:
        raise TripletError("no triplets producible: no companies carry the rated tags")
    return final


def augment_from_diff(
    existing: list[Triplet],
    diff: LsmDiff,
    lsm: Lsm,
    corpus: Corpus,
    cfg: SamplingConfig,
) -> list[Triplet]:
    """Append expansions for reviewed cells; dedup keeps the freshest rating.

    Output is identical to build_training_set on the post-review matrix,
    provided `existing` covered the matrix before the review.
    """
    by_tag = _companies_by_tag(corpus)
    candidates = list(existing)
    for i, j in diff.cells():
        candidates.extend(
            expand_pair(i, j, lsm.cell(i, j).rating, corpus, cfg, by_tag)
        )
    return _finalize(candidates, lsm, cfg)


def load_triplets(path) -> list[Triplet]:
    """Read a triplet dump. The dump does not record which side of a pair the
    ITD came from, so loaded source metadata is best-effort; texts and scores
    (all training needs) round-trip exactly.
    """
    import json

    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pair = obj["pair"]
            if isinstance(pair, str):
                target = int(pair.split(":", 1)[1])
                source = None
            else:
                source = (int(pair[0]), int(pair[1]))
                target = source[1]
            out.append(
                Triplet(obj["company_id"], obj["cbd"], obj["itd"], float(obj["score"]), target, source)
            )
    return out


def save_triplets(triplets: list[Triplet], path) -> None:
    from .util import atomic_write_text

    lines = []
    for t in triplets:
        pair = list(t.source_pair) if t.source_pair else f"self:{t.target_tag}"
        lines.append(
            canonical_json(
                {
                    "cbd": t.cbd,
                    "itd": t.itd,
                    "score": t.score,
                    "pair": pair,
                    "company_id": t.company_id,
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
