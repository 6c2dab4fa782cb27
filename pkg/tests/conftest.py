from __future__ import annotations

import pytest

from simlabel.corpus import Corpus, CompanyRecord, Tag

# Acceptance tests register one line per criterion; the hook below prints
# them in the terminal summary so every run ends with the verdict block.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"{criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_corpus(n_tags: int, companies: list[tuple[str, str, set, set | None]]) -> Corpus:
    """Hand-rolled corpus: tag i gets a distinct two-word ITD; companies are
    (id, cbd, noisy, gold) tuples.
    """
    tags = tuple(
        Tag(tag_id=i, name=f"tag{i}", itd=f"industry{i} description{i}") for i in range(n_tags)
    )
    recs = tuple(
        CompanyRecord(
            company_id=cid,
            cbd=cbd,
            noisy_tags=frozenset(noisy),
            gold_tags=None if gold is None else frozenset(gold),
        )
        for cid, cbd, noisy, gold in companies
    )
    return Corpus(tags=tags, companies=recs)


@pytest.fixture
def tiny_corpus() -> Corpus:
    return make_corpus(
        4,
        [
            ("c1", "alpha beta gamma", {0, 1}, {0, 1}),
            ("c2", "delta epsilon", {2}, {2}),
            ("c3", "zeta eta theta", {1, 3}, {1, 3}),
            ("c4", "iota kappa", {0}, {3}),
            ("c5", "lam mu nu", {2, 3}, None),
        ],
    )
