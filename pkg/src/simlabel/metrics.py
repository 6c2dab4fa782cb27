"""Benchmark evaluation: macro precision/recall against gold labels, prefix
precision P@K, mean top-K similarity, noise-class breakdowns, and the same
statistics for the raw noisy labels as a baseline.

All means are accumulated with plain left-to-right float sums in company
order, so results are exactly reproducible by an independent calculation
using the same order.
"""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import Corpus, NoiseClass, classify_noise
from .inference import RankedAssignment


class MetricsError(ValueError):
    """Raised for empty inputs or out-of-range K."""


@dataclass(frozen=True)
class SubReport:
    ap: float
    ar: float
    count: int

    def to_dict(self) -> dict:
        return {"ap": self.ap, "ar": self.ar, "count": self.count}


@dataclass(frozen=True)
class EvalReport:
    ap: float
    ar: float
    p_at_k: dict[int, float] | None
    sim_at_k: dict[int, float] | None
    classes: dict[str, SubReport]
    evaluated: int
    skipped: int

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ar": self.ar,
            "p_at_k": None if self.p_at_k is None else {str(k): v for k, v in self.p_at_k.items()},
            "sim_at_k": None if self.sim_at_k is None else {str(k): v for k, v in self.sim_at_k.items()},
            "classes": {name: sub.to_dict() for name, sub in self.classes.items()},
            "evaluated": self.evaluated,
            "skipped": self.skipped,
        }


def precision_recall(pred: set[int], gold: set[int]) -> tuple[float, float]:
    if not gold:
        raise MetricsError("empty gold set")
    if not pred:
        raise MetricsError("empty prediction set")
    hit = len(pred & gold)
    return hit / len(pred), hit / len(gold)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _sub_reports(
    rows: list[tuple[NoiseClass, float, float]]
) -> dict[str, SubReport]:
    out = {}
    for cls in NoiseClass:
        ps = [p for c, p, _ in rows if c is cls]
        rs = [r for c, _, r in rows if c is cls]
        out[cls.value] = SubReport(
            ap=_mean(ps) if ps else 0.0,
            ar=_mean(rs) if rs else 0.0,
            count=len(ps),
        )
    return out


def evaluate(
    assignments: list[RankedAssignment], corpus: Corpus, k: int
) -> EvalReport:
    """Score ranked predictions against gold labels at cutoff k."""
    if not 1 <= k <= corpus.n:
        raise MetricsError(f"k={k} outside 1..{corpus.n}")
    by_id = {rec.company_id: rec for rec in corpus.companies}

    precisions: list[float] = []
    recalls: list[float] = []
    prefix_hits: list[list[int]] = []
    prefix_sims: list[list[float]] = []
    rows: list[tuple[NoiseClass, float, float]] = []
    skipped = 0
    for asg in assignments:
        rec = by_id.get(asg.company_id)
        if rec is None:
            raise MetricsError(f"assignment for unknown company {asg.company_id!r}")
        if not rec.gold_tags:
            skipped += 1
            continue
        gold = set(rec.gold_tags)
        top = asg.ranked[:k]
        pred = {tag_id for tag_id, _ in top}
        p, r = precision_recall(pred, gold)
        precisions.append(p)
        recalls.append(r)
        hits = []
        running = 0
        for tag_id, _ in top:
            running += 1 if tag_id in gold else 0
            hits.append(running)
        prefix_hits.append(hits)
        prefix_sims.append([sim for _, sim in top])
        rows.append((classify_noise(rec), p, r))

    if not precisions:
        raise MetricsError("no evaluable companies (all lack gold labels)")

    p_at_k = {
        kk: _mean([hits[kk - 1] / kk for hits in prefix_hits]) for kk in range(1, k + 1)
    }
    sim_at_k = {
        kk: _mean([sum(sims[:kk]) / kk for sims in prefix_sims])
        for kk in range(1, k + 1)
    }
    return EvalReport(
        ap=_mean(precisions),
        ar=_mean(recalls),
        p_at_k=p_at_k,
        sim_at_k=sim_at_k,
        classes=_sub_reports(rows),
        evaluated=len(precisions),
        skipped=skipped,
    )


def noisy_baseline(corpus: Corpus) -> EvalReport:
    """Same statistics with the noisy label sets as the predictions."""
    precisions: list[float] = []
    recalls: list[float] = []
    rows: list[tuple[NoiseClass, float, float]] = []
    skipped = 0
    for rec in corpus.companies:
        if not rec.gold_tags:
            skipped += 1
            continue
        p, r = precision_recall(set(rec.noisy_tags), set(rec.gold_tags))
        precisions.append(p)
        recalls.append(r)
        rows.append((classify_noise(rec), p, r))
    if not precisions:
        raise MetricsError("no evaluable companies (all lack gold labels)")
    return EvalReport(
        ap=_mean(precisions),
        ar=_mean(recalls),
        p_at_k=None,
        sim_at_k=None,
        classes=_sub_reports(rows),
        evaluated=len(precisions),
        skipped=skipped,
    )


def emr_trend(history: list[float]) -> dict:
    if not history:
        raise MetricsError("empty history")
    return {
        "first": history[0],
        "best": max(history),
        "last": history[-1],
        "delta": history[-1] - history[0],
        "steps": [b - a for a, b in zip(history, history[1:])],
    }
