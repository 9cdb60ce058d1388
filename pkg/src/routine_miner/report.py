"""Routine reports from a fitted model: topic word lists, salience,
duplicate topics, and within-hour co-use groups."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .lda import LdaModel

REPORT_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class TopicWord:
    object_id: str
    hour: int
    probability: float


@dataclass(frozen=True)
class TopicSummary:
    topic_id: int
    salience: float
    words: tuple[TopicWord, ...]
    min_prob: float = 0.01

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "salience": self.salience,
            "words": [
                {"object_id": w.object_id, "hour": w.hour, "probability": w.probability}
                for w in self.words
            ],
        }


@dataclass(frozen=True)
class CoUseGroup:
    topic_id: int
    hour: int
    objects: tuple[str, ...]
    mass: float

    def to_dict(self) -> dict:
        return {"topic_id": self.topic_id, "hour": self.hour,
                "objects": list(self.objects), "mass": self.mass}


@dataclass(frozen=True)
class DuplicatePair:
    topic_a: int
    topic_b: int
    divergence: float

    def to_dict(self) -> dict:
        return {"topic_a": self.topic_a, "topic_b": self.topic_b, "divergence": self.divergence}


def salience(model: LdaModel) -> np.ndarray:
    """Mean topic proportion over the training documents."""
    return model.theta.mean(axis=0)


def summarize_topics(model: LdaModel, min_prob: float = 0.01) -> list[TopicSummary]:
    """Per-topic words with probability strictly above ``min_prob``.

    Words are ordered by hour, then object id.
    """
    if not 0 <= min_prob < 1:
        raise ValueError(f"min_prob must lie in [0, 1), got {min_prob!r}")
    sal = salience(model)
    order = sorted(range(model.V), key=lambda v: (model.vocabulary[v].hour, model.vocabulary[v].object_id))
    summaries = []
    for k in range(model.K):
        row = model.phi[k]
        words = tuple(
            TopicWord(model.vocabulary[v].object_id, model.vocabulary[v].hour, float(row[v]))
            for v in order if row[v] > min_prob
        )
        summaries.append(TopicSummary(k, float(sal[k]), words, min_prob))
    return summaries


def rank_by_salience(summaries: list[TopicSummary]) -> list[TopicSummary]:
    return sorted(summaries, key=lambda s: (-s.salience, s.topic_id))


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats, in [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), math.log(2))


def detect_duplicates(model: LdaModel, threshold_nats: float = 0.05) -> list[DuplicatePair]:
    """Topic pairs whose word distributions are closer than ``threshold_nats`` (JSD)."""
    pairs = []
    for a, b in itertools.combinations(range(model.K), 2):
        d = jensen_shannon(model.phi[a], model.phi[b])
        if d < threshold_nats:
            pairs.append(DuplicatePair(a, b, d))
    pairs.sort(key=lambda p: (p.divergence, p.topic_a, p.topic_b))
    return pairs


def extract_couse(summary: TopicSummary) -> list[CoUseGroup]:
    """Hours in which two or more distinct objects appear in one topic."""
    by_hour: dict[int, dict[str, float]] = {}
    for w in summary.words:
        objs = by_hour.setdefault(w.hour, {})
        objs[w.object_id] = objs.get(w.object_id, 0.0) + w.probability
    groups = [
        CoUseGroup(summary.topic_id, hour, tuple(sorted(objs)), sum(objs[o] for o in sorted(objs)))
        for hour, objs in sorted(by_hour.items())
        if len(objs) >= 2
    ]
    groups.sort(key=lambda g: (-g.mass, g.hour))
    return groups


@dataclass(frozen=True)
class Report:
    topics: list[TopicSummary]
    duplicates: list[DuplicatePair]
    couse: list[CoUseGroup]
    min_prob: float
    dup_threshold: float
    model_config: dict
    household_id: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "household_id": self.household_id,
            "topics": [t.to_dict() for t in self.topics],
            "salience_ranking": [t.topic_id for t in rank_by_salience(self.topics)],
            "duplicates": [d.to_dict() for d in self.duplicates],
            "couse": [g.to_dict() for g in self.couse],
            "config": {
                "min_prob": self.min_prob,
                "dup_threshold": self.dup_threshold,
                "model": self.model_config,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def build_report(model: LdaModel, min_prob: float = 0.01, dup_threshold: float = 0.05) -> Report:
    topics = summarize_topics(model, min_prob)
    couse = [g for t in topics for g in extract_couse(t)]
    return Report(
        topics=topics,
        duplicates=detect_duplicates(model, dup_threshold),
        couse=couse,
        min_prob=min_prob,
        dup_threshold=dup_threshold,
        model_config=model.config.to_dict(),
        household_id=model.household_id,
    )
