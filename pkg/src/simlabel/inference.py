"""Rank tags for company descriptions with a trained encoder, assign top-K,
and discretize pairwise description similarities back into a 0-5 matrix.

Similarities are accumulated in a fixed sequential order (see encoder.cosine)
so rankings are bit-reproducible and tie-breaks stay stable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .encoder import EncoderParams, TokenizerConfig, cosine, embed
from .lsm import CellState, Lsm


class InferenceError(ValueError):
    """Raised for stale indexes or out-of-range arguments."""


@dataclass(frozen=True)
class ItdIndex:
    vectors: tuple
    checkpoint_hash: str

    @property
    def n(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class RankedAssignment:
    company_id: str
    ranked: tuple[tuple[int, float], ...]
    k_used: int


def build_itd_index(
    params: EncoderParams, tokenizer: TokenizerConfig, corpus: Corpus
) -> ItdIndex:
    vectors = tuple(embed(params, tokenizer, tag.itd) for tag in corpus.tags)
    return ItdIndex(vectors, params.identity_hash())


def _rank(index: ItdIndex, cbd_vec: np.ndarray, company_id: str) -> RankedAssignment:
    sims = []
    for tag_id in range(index.n):
        sims.append((tag_id, cosine(cbd_vec, index.vectors[tag_id])))
    sims.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedAssignment(company_id, tuple(sims), index.n)


def rank_tags(
    index: ItdIndex,
    params: EncoderParams,
    tokenizer: TokenizerConfig,
    cbd: str,
    company_id: str = "",
) -> RankedAssignment:
    """Full ranking of all tags for one description, most similar first."""
    if index.checkpoint_hash != params.identity_hash():
        raise InferenceError("index is stale: built from different parameters")
    return _rank(index, embed(params, tokenizer, cbd), company_id)


def rank_corpus(
    index: ItdIndex,
    params: EncoderParams,
    tokenizer: TokenizerConfig,
    corpus: Corpus,
) -> list[RankedAssignment]:
    """Rank every company; validates index freshness once for the batch."""
    if index.checkpoint_hash != params.identity_hash():
        raise InferenceError("index is stale: built from different parameters")
    return [
        _rank(index, embed(params, tokenizer, rec.cbd), rec.company_id)
        for rec in corpus.companies
    ]


def assign_top_k(ranked: RankedAssignment, k: int) -> set[int]:
    n = len(ranked.ranked)
    if k < 1 or k > n:
        raise InferenceError(f"k={k} outside 1..{n}")
    return {tag_id for tag_id, _ in ranked.ranked[:k]}


def reconstruct_lsm(index: ItdIndex, round: int = 0) -> Lsm:
    """Pairwise description similarity, clamped to [0,1], rounded half-up."""
    if index.n < 2:
        raise InferenceError(f"need at least 2 tags, got {index.n}")
    lsm = Lsm(index.n)
    for i in range(index.n):
        for j in range(i + 1, index.n):
            sim = cosine(index.vectors[i], index.vectors[j])
            clamped = min(1.0, max(0.0, sim))
            rating = int(math.floor(5 * clamped + 0.5))
            lsm.set_rating(i, j, rating, CellState.MODEL_INFERRED, round)
    return lsm
