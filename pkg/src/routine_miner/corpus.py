"""Bag-of-words encoding of movement events.

Each event becomes one word ``object@hour`` (hour of the event start in the
household's local time). All words from one local calendar day form a
document; the household's days form its corpus.
"""

from __future__ import annotations

import logging
import numbers
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Sequence
from urllib.parse import quote, unquote
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from .errors import ParseError, RoutineMinerError
from .ingest import MovementEvent

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True, slots=True)
class WordToken:
    object_id: str
    hour: int

    def __post_init__(self):
        if isinstance(self.hour, bool) or not isinstance(self.hour, numbers.Integral) \
                or not 0 <= self.hour <= 23:
            raise ValueError(f"hour must be an integer in [0, 23], got {self.hour!r}")
        object.__setattr__(self, "hour", int(self.hour))

    def encode(self) -> str:
        return f"{quote(self.object_id, safe='')}@{self.hour}"

    @classmethod
    def decode(cls, text: str) -> WordToken:
        obj, sep, hour = text.rpartition("@")
        if not sep or not obj:
            raise ValueError(f"token {text!r} is not of the form object@hour")
        try:
            h = int(hour)
        except ValueError:
            raise ValueError(f"token {text!r} has a non-integer hour") from None
        return cls(unquote(obj), h)

    def __str__(self) -> str:
        return f"{self.object_id}@{self.hour}"


@dataclass(frozen=True)
class Document:
    date: date
    tokens: tuple[WordToken, ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TokenizerConfig:
    timezone: str = "UTC"
    window_hours: int = 1
    include_empty_days: bool = False

    def __post_init__(self):
        if self.window_hours < 1 or 24 % self.window_hours:
            raise ValueError(f"window of {self.window_hours} h does not divide 24 hours")
        zone(self.timezone)


def zone(name: str) -> ZoneInfo:
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError):
        raise ValueError(f"unknown IANA timezone {name!r}") from None


@dataclass(frozen=True, eq=False)
class Corpus:
    """Day documents of one household plus the word vocabulary.

    The vocabulary is ordered by first appearance over the chronologically
    sorted documents, so it is fully determined by ``documents``.
    """

    documents: tuple[Document, ...]
    household_id: str
    timezone: str
    vocabulary: tuple[WordToken, ...] = field(default=())
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        dates = [d.date for d in self.documents]
        if len(set(dates)) != len(dates):
            raise ValueError("document dates must be unique")
        if dates != sorted(dates):
            raise ValueError("documents must be in chronological order")
        vocab = self.vocabulary or tuple(_first_appearance(self.documents))
        index = {tok: i for i, tok in enumerate(vocab)}
        if len(index) != len(vocab):
            raise ValueError("vocabulary contains duplicate tokens")
        missing = {t for d in self.documents for t in d.tokens if t not in index}
        if missing:
            raise ValueError(f"tokens missing from vocabulary: {sorted(map(str, missing))[:5]}")
        object.__setattr__(self, "vocabulary", vocab)
        object.__setattr__(self, "_index", index)

    @property
    def M(self) -> int:
        return len(self.documents)

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    @property
    def total_tokens(self) -> int:
        return sum(len(d) for d in self.documents)

    def index(self, token: WordToken) -> int:
        return self._index[token]

    def get_index(self, token: WordToken) -> int | None:
        return self._index.get(token)

    def word_ids(self, doc: Document) -> list[int]:
        return [self._index[t] for t in doc.tokens]

    def subset(self, indices: Iterable[int]) -> Corpus:
        """Documents at ``indices`` (kept in date order) with this corpus's vocabulary."""
        docs = tuple(self.documents[i] for i in sorted(set(indices)))
        return Corpus(docs, self.household_id, self.timezone, vocabulary=self.vocabulary)

    def empty_days(self) -> int:
        """Calendar days between first and last document that carry no tokens."""
        if not self.documents:
            return 0
        span = (self.documents[-1].date - self.documents[0].date).days + 1
        return span - sum(1 for d in self.documents if d.tokens)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.household_id == other.household_id
            and self.timezone == other.timezone
            and self.documents == other.documents
            and self.vocabulary == other.vocabulary
        )

    __hash__ = None


def _first_appearance(documents: Iterable[Document]) -> list[WordToken]:
    seen: dict[WordToken, None] = {}
    for doc in documents:
        for tok in doc.tokens:
            seen.setdefault(tok, None)
    return list(seen)


def tokenize_with_dates(
    events: Sequence[MovementEvent], config: TokenizerConfig
) -> list[tuple[WordToken, date]]:
    """One (token, local date) pair per event, assigned by event start time."""
    tz = zone(config.timezone)
    out = []
    for ev in events:
        local = ev.start.astimezone(tz)
        hour = local.hour // config.window_hours * config.window_hours
        out.append((WordToken(ev.object_id, hour), local.date()))
    return out


def tokenize(events: Sequence[MovementEvent], config: TokenizerConfig) -> list[WordToken]:
    """Encode each event as ``(object_id, local hour of start)``.

    Repeated events of one object in the same hour give repeated tokens;
    that repetition is how handling duration reaches the model.
    """
    return [tok for tok, _ in tokenize_with_dates(events, config)]


def build_corpus(
    tokens: Iterable[tuple[WordToken, date]],
    household_id: str,
    config: TokenizerConfig,
) -> Corpus:
    by_day: dict[date, list[WordToken]] = {}
    for tok, day in tokens:
        by_day.setdefault(day, []).append(tok)
    if not by_day:
        raise RoutineMinerError("empty corpus: no tokens to build documents from")
    days = sorted(by_day)
    if config.include_empty_days:
        first, last = days[0], days[-1]
        days = [first + timedelta(n) for n in range((last - first).days + 1)]
    docs = tuple(Document(d, tuple(by_day.get(d, ()))) for d in days)
    corpus = Corpus(docs, household_id, config.timezone)
    gaps = corpus.empty_days()
    if gaps:
        logger.info("%d empty day(s) between %s and %s%s", gaps, days[0], days[-1],
                    "" if config.include_empty_days else " (excluded)")
    return corpus


def corpus_from_events(
    events: Sequence[MovementEvent], household_id: str, config: TokenizerConfig
) -> Corpus:
    return build_corpus(tokenize_with_dates(events, config), household_id, config)


# --------------------------------------------------------------------------
# text format


def save_corpus(corpus: Corpus) -> str:
    lines = [f"#household {quote(corpus.household_id, safe='')} tz {corpus.timezone}"]
    for doc in corpus.documents:
        lines.append(doc.date.isoformat() + "\t" + " ".join(t.encode() for t in doc.tokens))
    return "\n".join(lines) + "\n"


def load_corpus(text: str, source: str | None = None) -> Corpus:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty corpus file", 1, source)
    parts = lines[0].split()
    if len(parts) != 4 or parts[0] != "#household" or parts[2] != "tz":
        raise ParseError("header must be '#household <id> tz <zone>'", 1, source)
    household, tz = unquote(parts[1]), parts[3]
    try:
        zone(tz)
    except ValueError as exc:
        raise ParseError(str(exc), 1, source) from None
    docs: list[Document] = []
    seen: set[date] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        day_text, sep, body = line.partition("\t")
        if not sep:
            raise ParseError("expected '<date><TAB><tokens>'", lineno, source)
        try:
            day = date.fromisoformat(day_text)
            tokens = tuple(WordToken.decode(t) for t in body.split())
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
        if day in seen:
            raise ParseError(f"duplicate date {day}", lineno, source)
        if docs and day < docs[-1].date:
            raise ParseError(f"date {day} out of chronological order", lineno, source)
        seen.add(day)
        docs.append(Document(day, tokens))
    if not docs:
        raise ParseError("corpus file has no documents", len(lines), source)
    return Corpus(tuple(docs), household, tz)
