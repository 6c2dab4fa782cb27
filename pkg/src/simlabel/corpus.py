"""Corpus model: tags with industry tag descriptions (ITDs), companies with
business descriptions (CBDs) and dual label sets, noise taxonomy, benchmark
splitting, and a synthetic generator with controlled cross-tag word overlap.

The synthetic generator builds each tag a vocabulary of pseudo-words and gives
chosen tag pairs a shared word pool. The ground-truth similarity rating for a
pair is derived from the realized overlap size, so the reference matrix is
consistent with the texts by construction.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .lsm import CellState, Lsm
from .util import canonical_json, child_seed

WORDS_PER_TAG = 60
OVERLAP_STEP = 12
# Overlap word counts a tag pair can share, and how likely each is drawn.
OVERLAP_LEVELS = (0, 12, 24, 36, 48)
OVERLAP_PROBS = (0.72, 0.14, 0.08, 0.04, 0.02)
# Total shared words one tag may commit across all its pairs. Keeps at
# least WORDS_PER_TAG - SHARED_BUDGET words unique to the tag.
SHARED_BUDGET = 48
GOLD_SIZE_PROBS = (0.55, 0.30, 0.15)
CBD_TAG_WORDS = 18
CBD_FILLER_WORDS = 2
FILLER_POOL_SIZE = 100

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"


class CorpusError(ValueError):
    """Raised for malformed or internally inconsistent corpus data."""


@dataclass(frozen=True)
class Tag:
    tag_id: int
    name: str
    itd: str


@dataclass(frozen=True)
class CompanyRecord:
    company_id: str
    cbd: str
    noisy_tags: frozenset[int]
    gold_tags: frozenset[int] | None = None


@dataclass(frozen=True)
class Corpus:
    tags: tuple[Tag, ...]
    companies: tuple[CompanyRecord, ...]

    @property
    def n(self) -> int:
        return len(self.tags)

    def tag(self, tag_id: int) -> Tag:
        if not 0 <= tag_id < self.n:
            raise CorpusError(f"unknown tag_id {tag_id}")
        return self.tags[tag_id]

    def company(self, company_id: str) -> CompanyRecord:
        for c in self.companies:
            if c.company_id == company_id:
                return c
        raise CorpusError(f"unknown company_id {company_id!r}")


class NoiseClass(Enum):
    EXACT = "exact"
    PARTIAL = "partial"
    INCORRECT = "incorrect"


@dataclass(frozen=True)
class NoiseProfile:
    exact_frac: float
    incorrect_frac: float
    partial_frac: float

    def __post_init__(self):
        fracs = (self.exact_frac, self.incorrect_frac, self.partial_frac)
        for f in fracs:
            if not 0 <= f <= 1:
                raise CorpusError(f"noise fraction {f} outside [0, 1]")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise CorpusError(f"noise fractions {fracs} do not sum to 1")

    def quotas(self, total: int) -> tuple[int, int, int]:
        """Per-class company counts by largest remainder, summing to total."""
        fracs = (self.exact_frac, self.incorrect_frac, self.partial_frac)
        shares = [f * total for f in fracs]
        counts = [math.floor(s) for s in shares]
        leftover = total - sum(counts)
        order = sorted(range(3), key=lambda k: (-(shares[k] - counts[k]), k))
        for k in order[:leftover]:
            counts[k] += 1
        return counts[0], counts[1], counts[2]


DEFAULT_PROFILE = NoiseProfile(0.26, 0.24, 0.50)


def classify_noise(record: CompanyRecord) -> NoiseClass:
    if record.gold_tags is None:
        raise CorpusError(f"company {record.company_id!r} has no gold tags")
    if record.noisy_tags == record.gold_tags:
        return NoiseClass.EXACT
    if record.noisy_tags & record.gold_tags:
        return NoiseClass.PARTIAL
    return NoiseClass.INCORRECT


def validate_corpus(tags: list[Tag], companies: list[CompanyRecord]) -> Corpus:
    seen_ids: dict[int, int] = {}
    for pos, tag in enumerate(tags):
        if tag.tag_id in seen_ids:
            raise CorpusError(
                f"duplicate tag_id {tag.tag_id} at positions {seen_ids[tag.tag_id]} and {pos}"
            )
        seen_ids[tag.tag_id] = pos
        if not tag.name:
            raise CorpusError(f"tag {tag.tag_id} has an empty name")
        if not tag.itd:
            raise CorpusError(f"tag {tag.tag_id} has an empty itd")
    n = len(tags)
    if sorted(seen_ids) != list(range(n)):
        raise CorpusError(f"tag_id values must be dense 0..{n - 1}, got {sorted(seen_ids)}")

    ordered = sorted(tags, key=lambda t: t.tag_id)
    seen_companies: set[str] = set()
    for rec in companies:
        if rec.company_id in seen_companies:
            raise CorpusError(f"duplicate company_id {rec.company_id!r}")
        seen_companies.add(rec.company_id)
        if not rec.cbd:
            raise CorpusError(f"company {rec.company_id!r} has an empty cbd")
        if not rec.noisy_tags:
            raise CorpusError(f"company {rec.company_id!r} has no noisy tags")
        for t in sorted(rec.noisy_tags) + sorted(rec.gold_tags or ()):
            if not 0 <= t < n:
                raise CorpusError(
                    f"company {rec.company_id!r} references unknown tag_id {t}"
                )
    return Corpus(tuple(ordered), tuple(companies))


def _parse_lines(path: str | Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object")
            records.append((lineno, obj))
    return records


def load_corpus(tags_path: str | Path, companies_path: str | Path) -> Corpus:
    tags = []
    for lineno, obj in _parse_lines(tags_path):
        try:
            tags.append(Tag(int(obj["tag_id"]), str(obj["name"]), str(obj["itd"])))
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{tags_path}:{lineno}: bad tag record ({exc})") from exc

    companies = []
    for lineno, obj in _parse_lines(companies_path):
        try:
            gold = obj.get("gold_tags")
            companies.append(
                CompanyRecord(
                    str(obj["company_id"]),
                    str(obj["cbd"]),
                    frozenset(int(t) for t in obj["noisy_tags"]),
                    None if gold is None else frozenset(int(t) for t in gold),
                )
            )
        except (KeyError, TypeError) as exc:
            raise CorpusError(
                f"{companies_path}:{lineno}: bad company record ({exc})"
            ) from exc
    return validate_corpus(tags, companies)


def save_corpus(corpus: Corpus, tags_path: str | Path, companies_path: str | Path) -> None:
    from .util import atomic_write_text

    tag_lines = [
        canonical_json({"tag_id": t.tag_id, "name": t.name, "itd": t.itd})
        for t in corpus.tags
    ]
    atomic_write_text(tags_path, "\n".join(tag_lines) + "\n")

    company_lines = []
    for c in corpus.companies:
        obj: dict = {
            "company_id": c.company_id,
            "cbd": c.cbd,
            "noisy_tags": sorted(c.noisy_tags),
        }
        if c.gold_tags is not None:
            obj["gold_tags"] = sorted(c.gold_tags)
        company_lines.append(canonical_json(obj))
    atomic_write_text(companies_path, "\n".join(company_lines) + "\n")


def load_corpus_dir(directory: str | Path) -> Corpus:
    directory = Path(directory)
    return load_corpus(directory / "tags.jsonl", directory / "companies.jsonl")


def save_corpus_dir(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, directory / "tags.jsonl", directory / "companies.jsonl")


def split_benchmark(
    corpus: Corpus, fraction: float, seed: int
) -> tuple[Corpus, Corpus]:
    """Hold out a benchmark stratified by each company's lowest gold tag.

    Strata with at least two companies contribute to both splits. Companies
    without gold tags always stay on the training side.
    """
    if not 0 < fraction < 1:
        raise CorpusError(f"benchmark fraction {fraction} outside (0, 1)")
    candidates = [c for c in corpus.companies if c.gold_tags]
    forced_train = [c for c in corpus.companies if not c.gold_tags]
    if not candidates:
        raise CorpusError("no companies carry gold tags; nothing to hold out")

    strata: dict[int, list[CompanyRecord]] = {}
    for rec in candidates:
        strata.setdefault(min(rec.gold_tags), []).append(rec)

    total_target = min(len(candidates) - 1, max(1, round(fraction * len(candidates))))
    keys = sorted(strata)
    quota = {}
    lo, hi = {}, {}
    for key in keys:
        size = len(strata[key])
        lo[key] = 1 if size >= 2 else 0
        hi[key] = size - 1 if size >= 2 else 0
        quota[key] = min(hi[key], max(lo[key], math.floor(fraction * size)))

    # Largest-remainder rebalance toward the global target, inside bounds.
    def gap(key):
        return fraction * len(strata[key]) - quota[key]

    diff = total_target - sum(quota.values())
    while diff > 0:
        room = [k for k in keys if quota[k] < hi[k]]
        if not room:
            break
        pick = max(room, key=lambda k: (gap(k), -k))
        quota[pick] += 1
        diff -= 1
    while diff < 0:
        room = [k for k in keys if quota[k] > lo[k]]
        if not room:
            break
        pick = min(room, key=lambda k: (gap(k), k))
        quota[pick] -= 1
        diff += 1

    rng = random.Random(seed)
    bench_ids: set[str] = set()
    for key in keys:
        group = sorted(strata[key], key=lambda c: c.company_id)
        for rec in rng.sample(group, quota[key]):
            bench_ids.add(rec.company_id)

    train = [c for c in corpus.companies if c.company_id not in bench_ids]
    bench = [c for c in corpus.companies if c.company_id in bench_ids]
    return Corpus(corpus.tags, tuple(train)), Corpus(corpus.tags, tuple(bench))


class _WordMint:
    """Generates pronounceable pseudo-words, globally unique per instance."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def word(self) -> str:
        while True:
            syllables = self.rng.randint(2, 4)
            w = "".join(
                self.rng.choice(CONSONANTS) + self.rng.choice(VOWELS)
                for _ in range(syllables)
            )
            if w not in self.used:
                self.used.add(w)
                return w

    def words(self, count: int) -> list[str]:
        return [self.word() for _ in range(count)]


def _sample_level(rng: random.Random) -> int:
    roll = rng.random()
    acc = 0.0
    for level, prob in zip(OVERLAP_LEVELS, OVERLAP_PROBS):
        acc += prob
        if roll < acc:
            return level
    return OVERLAP_LEVELS[-1]


def _build_tag_vocabularies(
    n_tags: int, rng: random.Random
) -> tuple[list[list[str]], Lsm]:
    """Mint per-tag vocabularies with pair-specific shared pools.

    Each selected pair (i, j) gets `level` words present in both vocabularies
    and nowhere else, so the realized overlap |V_i ∩ V_j| equals the level
    exactly and the ground-truth rating is level / OVERLAP_STEP.
    """
    mint = _WordMint(rng)
    budget = [SHARED_BUDGET] * n_tags
    vocabs: list[list[str]] = [[] for _ in range(n_tags)]
    truth = Lsm(n_tags)
    for i in range(n_tags):
        for j in range(i + 1, n_tags):
            level = _sample_level(rng)
            affordable = min(budget[i], budget[j])
            while level > affordable:
                level = OVERLAP_LEVELS[OVERLAP_LEVELS.index(level) - 1]
            if level:
                shared = mint.words(level)
                vocabs[i].extend(shared)
                vocabs[j].extend(shared)
                budget[i] -= level
                budget[j] -= level
            truth.set_rating(i, j, level // OVERLAP_STEP, CellState.SME_RATED)
    for i in range(n_tags):
        vocabs[i].extend(mint.words(WORDS_PER_TAG - len(vocabs[i])))
    return vocabs, truth


def _gold_size(rng: random.Random, n_tags: int) -> int:
    roll = rng.random()
    acc = 0.0
    size = len(GOLD_SIZE_PROBS)
    for k, prob in enumerate(GOLD_SIZE_PROBS, start=1):
        acc += prob
        if roll < acc:
            size = k
            break
    return min(size, n_tags - 1)


def _perturb(
    gold: frozenset[int],
    noise: NoiseClass,
    truth: Lsm,
    n_tags: int,
    rng: random.Random,
) -> frozenset[int]:
    if noise is NoiseClass.EXACT:
        return gold
    if noise is NoiseClass.PARTIAL:
        if len(gold) >= 2:
            drop = rng.choice(sorted(gold))
            return gold - {drop}
        extra = rng.choice([t for t in range(n_tags) if t not in gold])
        return gold | {extra}
    # Incorrect: disjoint replacement biased toward tags the ground truth
    # rates similar to the real ones.
    pool = [t for t in range(n_tags) if t not in gold]
    weights = [1.0 + sum(truth.rating(t, g) for g in gold) for t in pool]
    count = min(1 + (rng.random() < 0.35), len(pool))
    picked: set[int] = set()
    while len(picked) < count:
        picked.add(rng.choices(pool, weights=weights, k=1)[0])
    return frozenset(picked)


def generate_synthetic(
    n_tags: int,
    n_companies: int,
    profile: NoiseProfile = DEFAULT_PROFILE,
    seed: int = 0,
) -> tuple[Corpus, Lsm]:
    """Build a corpus of pseudo-word texts plus its ground-truth rating matrix."""
    if n_tags < 3:
        raise CorpusError(f"need at least 3 tags, got {n_tags}")
    if n_companies < 10 * n_tags:
        raise CorpusError(
            f"need at least {10 * n_tags} companies for {n_tags} tags, got {n_companies}"
        )

    vocab_rng = random.Random(child_seed(seed, "synth", "vocab"))
    vocabs, truth = _build_tag_vocabularies(n_tags, vocab_rng)

    tag_rng = random.Random(child_seed(seed, "synth", "tags"))
    tags = []
    for i in range(n_tags):
        itd_words = list(vocabs[i])
        tag_rng.shuffle(itd_words)
        # Name drawn from words no other tag shares (the tail of the vocab).
        own = vocabs[i][-2:]
        name = " ".join(w.capitalize() for w in own)
        tags.append(Tag(i, name, " ".join(itd_words)))

    filler_rng = random.Random(child_seed(seed, "synth", "filler"))
    filler_mint = _WordMint(filler_rng)
    # Filler words may collide with vocab words across different RNG streams;
    # reject any that do so CBD overlap structure stays exact.
    all_vocab = set()
    for v in vocabs:
        all_vocab.update(v)
    filler_pool = []
    while len(filler_pool) < FILLER_POOL_SIZE:
        w = filler_mint.word()
        if w not in all_vocab:
            filler_pool.append(w)

    q_exact, q_incorrect, q_partial = profile.quotas(n_companies)
    classes = (
        [NoiseClass.EXACT] * q_exact
        + [NoiseClass.INCORRECT] * q_incorrect
        + [NoiseClass.PARTIAL] * q_partial
    )
    class_rng = random.Random(child_seed(seed, "synth", "classes"))
    class_rng.shuffle(classes)

    comp_rng = random.Random(child_seed(seed, "synth", "companies"))
    width = max(4, len(str(n_companies - 1)))
    companies = []
    for k in range(n_companies):
        size = _gold_size(comp_rng, n_tags)
        gold = frozenset(comp_rng.sample(range(n_tags), size))
        union = sorted(set(w for t in gold for w in vocabs[t]))
        body = comp_rng.sample(union, min(CBD_TAG_WORDS, len(union)))
        body += comp_rng.sample(filler_pool, CBD_FILLER_WORDS)
        comp_rng.shuffle(body)
        noisy = _perturb(gold, classes[k], truth, n_tags, comp_rng)
        companies.append(
            CompanyRecord(f"c{k:0{width}d}", " ".join(body), noisy, gold)
        )

    return validate_corpus(tags, companies), truth
