from __future__ import annotations

from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from routine_miner.corpus import Corpus, Document, TokenizerConfig, WordToken, corpus_from_events
from routine_miner.synth import generate_events, household_scenario

T0 = datetime(2017, 5, 3, 9, 0, tzinfo=timezone.utc)


def toy_corpus(docs: list[list[str]], household: str = "h") -> Corpus:
    """Corpus from token strings like ``"Fridge@9"``, one list per day."""
    start = date(2017, 5, 1)
    return Corpus(
        tuple(Document(start + timedelta(days=i), tuple(WordToken.decode(t) for t in d))
              for i, d in enumerate(docs)),
        household,
        "UTC",
    )


def planted_corpus(topics: list[dict[str, float]], docs: int, tokens_per_doc: int, seed: int,
                   alpha: float = 0.5) -> Corpus:
    rng = np.random.default_rng(seed)
    words = [list(t) for t in topics]
    probs = [np.array(list(t.values())) for t in topics]
    out = []
    for _ in range(docs):
        mix = rng.dirichlet([alpha] * len(topics))
        labels = rng.choice(len(topics), size=tokens_per_doc, p=mix)
        out.append([words[k][rng.choice(len(words[k]), p=probs[k])] for k in labels])
    return toy_corpus(out)


def best_match_tv(phi: np.ndarray, vocabulary, target: dict[WordToken, float]) -> float:
    """Smallest total-variation distance between ``target`` and any phi row."""
    q = np.array([target.get(tok, 0.0) for tok in vocabulary])
    return float(min(0.5 * np.abs(row - q).sum() for row in phi))


@pytest.fixture(scope="session")
def household_events():
    return generate_events(household_scenario(seed=0))


@pytest.fixture(scope="session")
def household_corpus(household_events):
    events, _ = household_events
    return corpus_from_events(events, "household-1", TokenizerConfig("Europe/Amsterdam"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
