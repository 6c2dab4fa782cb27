"""Label similarity matrix: rating storage with review states, pair selection,
expert update application, and exact-match scoring.

Only the strict upper triangle is addressable; a tag's similarity to itself is
the constant maximum and is never stored. Lookups with swapped indices resolve
to the same cell.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .util import read_json, write_json

RATING_MIN = 0
RATING_MAX = 5
SELF_RATING = 5


class LsmError(ValueError):
    """Raised for invalid matrix indices, ratings, or state transitions."""


class CellState(Enum):
    UNRATED = "unrated"
    SME_RATED = "sme_rated"
    MODEL_INFERRED = "model_inferred"
    SME_CONFIRMED = "sme_confirmed"
    SME_OVERRIDDEN = "sme_overridden"


# States whose rating was supplied (or re-affirmed) by a human reviewer.
SME_SOURCED = frozenset(
    {CellState.SME_RATED, CellState.SME_CONFIRMED, CellState.SME_OVERRIDDEN}
)


def canonical_pair(i: int, j: int) -> tuple[int, int]:
    if i == j:
        raise LsmError(f"pair ({i},{j}) addresses the diagonal, which is fixed")
    return (i, j) if i < j else (j, i)


def validate_rating(rating: int) -> int:
    if not isinstance(rating, int) or isinstance(rating, bool):
        raise LsmError(f"rating must be an integer, got {rating!r}")
    if not RATING_MIN <= rating <= RATING_MAX:
        raise LsmError(f"rating {rating} outside {RATING_MIN}..{RATING_MAX}")
    return rating


@dataclass
class LsmCell:
    i: int
    j: int
    rating: int | None
    state: CellState
    round: int


@dataclass
class LsmDiff:
    """Outcome of one batch of reviewer updates, split by how each landed."""

    confirmed: list[tuple[int, int]] = field(default_factory=list)
    overridden: list[tuple[int, int, int, int]] = field(default_factory=list)
    newly_rated: list[tuple[int, int, int]] = field(default_factory=list)

    def cells(self) -> list[tuple[int, int]]:
        return (
            list(self.confirmed)
            + [(i, j) for i, j, _, _ in self.overridden]
            + [(i, j) for i, j, _ in self.newly_rated]
        )


class Lsm:
    """n x n rating matrix stored as its strict upper triangle."""

    def __init__(self, n: int):
        if n < 2:
            raise LsmError(f"matrix needs at least 2 tags, got {n}")
        self.n = n
        self._cells: dict[tuple[int, int], LsmCell] = {
            (i, j): LsmCell(i, j, None, CellState.UNRATED, 0)
            for i in range(n)
            for j in range(i + 1, n)
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Lsm):
            return NotImplemented
        return self.n == other.n and self._cells == other._cells

    def __len__(self) -> int:
        return len(self._cells)

    def _check_index(self, t: int) -> None:
        if not 0 <= t < self.n:
            raise LsmError(f"tag id {t} outside 0..{self.n - 1}")

    def cell(self, i: int, j: int) -> LsmCell:
        self._check_index(i)
        self._check_index(j)
        return self._cells[canonical_pair(i, j)]

    def rating(self, i: int, j: int) -> int | None:
        """Rating at (i, j); the diagonal reads as the fixed self-similarity."""
        self._check_index(i)
        self._check_index(j)
        if i == j:
            return SELF_RATING
        return self._cells[canonical_pair(i, j)].rating

    def cells(self) -> list[LsmCell]:
        return [self._cells[key] for key in sorted(self._cells)]

    def pairs(self) -> list[tuple[int, int]]:
        return sorted(self._cells)

    def set_rating(
        self, i: int, j: int, rating: int, state: CellState, round: int = 0
    ) -> None:
        self._check_index(i)
        self._check_index(j)
        key = canonical_pair(i, j)
        validate_rating(rating)
        if state is CellState.UNRATED:
            raise LsmError("a rated cell cannot be reset to unrated")
        cell = self._cells[key]
        if state is CellState.MODEL_INFERRED and cell.state in SME_SOURCED:
            # Reviewer ratings are sticky: model inferences never replace them.
            raise LsmError(
                f"cell {key} holds a reviewer rating; model inference may not overwrite it"
            )
        self._cells[key] = LsmCell(key[0], key[1], rating, state, round)

    def copy(self) -> "Lsm":
        dup = Lsm.__new__(Lsm)
        dup.n = self.n
        dup._cells = {
            key: LsmCell(c.i, c.j, c.rating, c.state, c.round)
            for key, c in self._cells.items()
        }
        return dup

    def sme_pairs(self) -> list[tuple[int, int]]:
        """Canonical pairs whose current rating came from a reviewer."""
        return [key for key in sorted(self._cells) if self._cells[key].state in SME_SOURCED]

    def unrated_pairs(self) -> list[tuple[int, int]]:
        return [
            key
            for key in sorted(self._cells)
            if self._cells[key].state is CellState.UNRATED
        ]

    def fully_populated(self) -> bool:
        return all(c.state is not CellState.UNRATED for c in self._cells.values())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "cells": [
                {
                    "i": c.i,
                    "j": c.j,
                    "rating": c.rating,
                    "state": c.state.value,
                    "round": c.round,
                }
                for c in self.cells()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Lsm":
        lsm = cls(int(data["n"]))
        seen: set[tuple[int, int]] = set()
        for entry in data["cells"]:
            i, j = int(entry["i"]), int(entry["j"])
            if not (0 <= i < lsm.n and 0 <= j < lsm.n):
                raise LsmError(f"cell ({i},{j}) outside matrix of size {lsm.n}")
            if i >= j:
                raise LsmError(f"cell ({i},{j}) is not in the strict upper triangle")
            if (i, j) in seen:
                raise LsmError(f"duplicate cell ({i},{j})")
            seen.add((i, j))
            state = CellState(entry["state"])
            rating = entry["rating"]
            round_no = int(entry.get("round", 0))
            if state is CellState.UNRATED:
                if rating is not None:
                    raise LsmError(f"unrated cell ({i},{j}) carries a rating")
            else:
                lsm.set_rating(i, j, int(rating), state, round_no)
        return lsm


def save_lsm(lsm: Lsm, path: str | Path) -> None:
    write_json(path, lsm.to_dict())


def load_lsm(path: str | Path) -> Lsm:
    return Lsm.from_dict(read_json(path))


def select_initial_pairs(lsm: Lsm, fraction: float, seed: int) -> list[tuple[int, int]]:
    """Pick ceil(fraction * pair count) distinct pairs for the first labeling pass.

    The first picks form a matching that touches every tag, so whenever
    the budget is at least ceil(n/2) pairs every tag appears at least once.
    """
    if not 0 < fraction <= 1:
        raise LsmError(f"fraction {fraction} outside (0, 1]")
    n = lsm.n
    n_pairs = n * (n - 1) // 2
    target = math.ceil(fraction * n_pairs)
    rng = random.Random(seed)

    tags = list(range(n))
    rng.shuffle(tags)
    coverage: list[tuple[int, int]] = []
    for k in range(0, n - 1, 2):
        coverage.append(canonical_pair(tags[k], tags[k + 1]))
    if n % 2 == 1:
        coverage.append(canonical_pair(tags[-1], rng.choice(tags[:-1])))

    chosen = set(coverage)
    rest = [p for p in lsm.pairs() if p not in chosen]
    rng.shuffle(rest)
    selected = (coverage + rest)[:target]
    return sorted(selected)


def apply_sme_updates(
    lsm: Lsm,
    model_lsm: Lsm | None,
    updates: list[tuple[int, int, int]],
    round: int = 0,
) -> tuple[Lsm, LsmDiff]:
    """Apply reviewer ratings against the model's inferred matrix.

    Each update is classified by comparing it to the model's rating for the
    same cell: equal -> confirmed, different -> overridden (both values kept
    in the diff), no model rating -> newly rated.
    """
    if model_lsm is not None and model_lsm.n != lsm.n:
        raise LsmError(f"matrix sizes differ: {lsm.n} vs {model_lsm.n}")
    out = lsm.copy()
    diff = LsmDiff()
    for i, j, rating in updates:
        key = canonical_pair(i, j)
        out._check_index(key[0])
        out._check_index(key[1])
        validate_rating(rating)
        model_rating = None
        if model_lsm is not None:
            model_cell = model_lsm.cell(*key)
            if model_cell.state is not CellState.UNRATED:
                model_rating = model_cell.rating
        if model_rating is None:
            out.set_rating(*key, rating, CellState.SME_RATED, round)
            diff.newly_rated.append((key[0], key[1], rating))
        elif model_rating == rating:
            out.set_rating(*key, rating, CellState.SME_CONFIRMED, round)
            diff.confirmed.append(key)
        else:
            out.set_rating(*key, rating, CellState.SME_OVERRIDDEN, round)
            diff.overridden.append((key[0], key[1], model_rating, rating))
    return out, diff


def emr(predicted: Lsm, truth: Lsm, cells: list[tuple[int, int]] | None = None) -> float:
    """Fraction of evaluated cells where the predicted rating matches exactly.

    Evaluation covers the cells rated in `truth`, or the explicit `cells` list.
    """
    if predicted.n != truth.n:
        raise LsmError(f"matrix sizes differ: {predicted.n} vs {truth.n}")
    if cells is None:
        cells = [(c.i, c.j) for c in truth.cells() if c.state is not CellState.UNRATED]
    if not cells:
        raise LsmError("no rated cells to evaluate")
    hits = 0
    for i, j in cells:
        key = canonical_pair(i, j)
        t = truth.cell(*key)
        if t.state is CellState.UNRATED:
            raise LsmError(f"cell {key} is unrated in the reference matrix")
        if predicted.cell(*key).rating == t.rating:
            hits += 1
    return hits / len(cells)


@dataclass(frozen=True)
class QueueItem:
    i: int
    j: int
    model_rating: int | None
    prior_rating: int | None


def pending_review_queue(
    lsm: Lsm,
    model_lsm: Lsm,
    random_extra: int = 0,
    seed: int = 0,
    unrated_cap: int | None = None,
) -> list[QueueItem]:
    """Cells a reviewer should look at after a round of model inference.

    All disagreements between the model matrix and existing reviewer ratings
    are queued. Cells never rated by a reviewer join them: all of them when
    `unrated_cap` is None, otherwise a seeded random draw of
    `unrated_cap + random_extra`. Ordering is by |model - prior| descending,
    never-rated cells last, ties by (i, j).
    """
    if model_lsm.n != lsm.n:
        raise LsmError(f"matrix sizes differ: {lsm.n} vs {model_lsm.n}")
    if not model_lsm.fully_populated():
        raise LsmError("model matrix must have every cell rated")

    items: list[QueueItem] = []
    unrated_pool: list[tuple[int, int]] = []
    for cell in lsm.cells():
        key = (cell.i, cell.j)
        model_rating = model_lsm.cell(*key).rating
        if cell.state in SME_SOURCED:
            if model_rating != cell.rating:
                items.append(QueueItem(cell.i, cell.j, model_rating, cell.rating))
        else:
            unrated_pool.append(key)

    take = len(unrated_pool) if unrated_cap is None else unrated_cap + random_extra
    take = min(take, len(unrated_pool))
    rng = random.Random(seed)
    picked = sorted(rng.sample(unrated_pool, take))
    for i, j in picked:
        items.append(QueueItem(i, j, model_lsm.cell(i, j).rating, None))

    def order(item: QueueItem):
        gap = -1 if item.prior_rating is None else abs(item.model_rating - item.prior_rating)
        return (-gap, item.i, item.j)

    return sorted(items, key=order)
