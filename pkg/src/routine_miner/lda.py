"""LDA over day documents, fitted by collapsed Gibbs sampling.

Topic-word estimates (``phi``) and document-topic estimates (``theta``) are
posterior means built from counts averaged over every sweep after burn-in.
Held-out documents are scored by folding them in against a frozen ``phi``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .corpus import Corpus, Document, WordToken
from .errors import RoutineMinerError, SchemaVersionError

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = "1.0"
HELD_OUT_METHODS = ("fold-in", "completion")
SEED_LIMIT = 2**64


@dataclass(frozen=True)
class LdaConfig:
    """Sampler settings; ``alpha`` and ``eta`` are symmetric Dirichlet priors."""

    K: int = 10
    alpha: float = 0.1
    eta: float = 0.1
    iterations: int = 1000
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise ValueError(f"number of topics must satisfy K >= 1, got K={self.K!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta!r}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations!r}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(
                f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in} vs {self.iterations}"
            )
        if not 0 <= self.seed < SEED_LIMIT:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def with_k(self, K: int) -> LdaConfig:
        return replace(self, K=K)

    def to_dict(self) -> dict:
        return {
            "K": int(self.K),
            "alpha": float(self.alpha),
            "eta": float(self.eta),
            "iterations": int(self.iterations),
            "burn_in": int(self.burn_in),
            "seed": int(self.seed),
        }


@dataclass(eq=False)
class LdaModel:
    phi: np.ndarray
    theta: np.ndarray
    config: LdaConfig
    vocabulary: tuple[WordToken, ...]
    household_id: str = ""
    assignments: list[np.ndarray] | None = None
    topic_word_counts: np.ndarray | None = None
    doc_topic_counts: np.ndarray | None = None
    topic_counts: np.ndarray | None = None
    initial_log_likelihood: float = math.nan
    final_log_likelihood: float = math.nan
    total_tokens: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def V(self) -> int:
        return self.phi.shape[1]

    @property
    def M(self) -> int:
        return self.theta.shape[0]

    def word_ids(self, doc: Document) -> tuple[np.ndarray, int]:
        """In-vocabulary word indices of ``doc`` and the number of dropped tokens."""
        ids = [self._index.get(t) for t in doc.tokens]
        kept = np.array([i for i in ids if i is not None], dtype=np.int64)
        return kept, len(ids) - kept.size


# --------------------------------------------------------------------------
# fitting


def collapsed_log_likelihood(ndk, nkw, alpha: float, eta: float) -> float:
    """log p(w, z) with theta and phi integrated out."""
    K, V = nkw.shape
    nk = nkw.sum(axis=1)
    nd = ndk.sum(axis=1)
    words = K * (gammaln(V * eta) - V * gammaln(eta)) + gammaln(nkw + eta).sum() - gammaln(nk + V * eta).sum()
    topics = ndk.shape[0] * (gammaln(K * alpha) - K * gammaln(alpha)) + gammaln(ndk + alpha).sum() \
        - gammaln(nd + K * alpha).sum()
    return float(words + topics)


class GibbsChain:
    """Mutable sampler state for one fit.

    Exposed so callers can step the chain and inspect counts between sweeps.
    """

    def __init__(self, corpus: Corpus, config: LdaConfig, backend: str | None = None):
        if corpus.M == 0 or corpus.total_tokens == 0:
            raise RoutineMinerError("cannot fit an empty corpus")
        if config.K > corpus.total_tokens:
            raise RoutineMinerError(
                f"K={config.K} exceeds the corpus token count ({corpus.total_tokens})"
            )
        self.config = config
        self.alpha = float(config.alpha)
        self.eta = float(config.eta)
        self._sweep, _ = _kernels.kernels(backend)
        K, V, M = config.K, corpus.V, corpus.M
        self.doc_lengths = np.array([len(d) for d in corpus.documents], dtype=np.int64)
        self.doc_ids = np.repeat(np.arange(M, dtype=np.int64), self.doc_lengths)
        self.word_ids = np.array(
            [i for d in corpus.documents for i in corpus.word_ids(d)], dtype=np.int64
        )
        self.rng = np.random.default_rng(config.seed)
        self.z = self.rng.integers(0, K, size=self.word_ids.size, dtype=np.int64)
        self.ndk = np.zeros((M, K), dtype=np.int64)
        self.nkw = np.zeros((K, V), dtype=np.int64)
        np.add.at(self.ndk, (self.doc_ids, self.z), 1)
        np.add.at(self.nkw, (self.z, self.word_ids), 1)
        self.nk = self.nkw.sum(axis=1)
        self.sweeps = 0

    @property
    def N(self) -> int:
        return self.word_ids.size

    def sweep(self) -> None:
        uniforms = self.rng.random(self.N)
        self._sweep(self.doc_ids, self.word_ids, self.z, self.ndk, self.nkw, self.nk,
                    self.alpha, self.eta, uniforms)
        self.sweeps += 1

    def log_likelihood(self) -> float:
        return collapsed_log_likelihood(self.ndk, self.nkw, self.alpha, self.eta)

    def conditional(self, i: int) -> np.ndarray:
        """Unnormalised topic weights for token ``i`` with it removed from the counts."""
        d, v, k = self.doc_ids[i], self.word_ids[i], self.z[i]
        ndk, nkw, nk = self.ndk[d].copy(), self.nkw[:, v].copy(), self.nk.copy()
        ndk[k] -= 1
        nkw[k] -= 1
        nk[k] -= 1
        return (ndk + self.alpha) * (nkw + self.eta) / (nk + self.nkw.shape[1] * self.eta)


def fit(
    corpus: Corpus,
    config: LdaConfig | None = None,
    *,
    backend: str | None = None,
    callback: Callable[[int, GibbsChain], None] | None = None,
) -> LdaModel:
    """Fit LDA to ``corpus``; the result is a pure function of (corpus, config).

    ``callback(sweep, chain)`` runs after every sweep, with ``sweep`` counted
    from 1.
    """
    config = config or LdaConfig()
    chain = GibbsChain(corpus, config, backend)
    ll0 = chain.log_likelihood()
    K, V = config.K, corpus.V
    sum_dk = np.zeros(chain.ndk.shape, dtype=np.float64)
    sum_kw = np.zeros(chain.nkw.shape, dtype=np.float64)
    for s in range(1, config.iterations + 1):
        chain.sweep()
        if callback is not None:
            callback(s, chain)
        if s > config.burn_in:
            sum_dk += chain.ndk
            sum_kw += chain.nkw
    kept = config.iterations - config.burn_in
    mean_dk = sum_dk / kept
    mean_kw = sum_kw / kept
    alpha, eta = chain.alpha, chain.eta
    phi = (mean_kw + eta) / (mean_kw.sum(axis=1, keepdims=True) + V * eta)
    theta = (mean_dk + alpha) / (chain.doc_lengths[:, None] + K * alpha)
    offsets = np.cumsum(chain.doc_lengths)[:-1]
    ll = chain.log_likelihood()
    logger.info("fit K=%d seed=%d: log p(w,z) %.2f -> %.2f over %d sweeps",
                K, config.seed, ll0, ll, config.iterations)
    return LdaModel(
        phi=phi,
        theta=theta,
        config=config,
        vocabulary=corpus.vocabulary,
        household_id=corpus.household_id,
        assignments=np.split(chain.z.copy(), offsets),
        topic_word_counts=chain.nkw.copy(),
        doc_topic_counts=chain.ndk.copy(),
        topic_counts=chain.nk.copy(),
        initial_log_likelihood=ll0,
        final_log_likelihood=ll,
        total_tokens=chain.N,
    )


# --------------------------------------------------------------------------
# held-out evaluation


def _fold_in(model: LdaModel, word_ids: np.ndarray, sweeps: int, rng, backend) -> np.ndarray:
    _, fold_in_sweep = _kernels.kernels(backend)
    K = model.K
    alpha = float(model.config.alpha)
    z = rng.integers(0, K, size=word_ids.size, dtype=np.int64)
    nk = np.bincount(z, minlength=K).astype(np.int64)
    phi = np.ascontiguousarray(model.phi)
    burn = sweeps // 2
    total = np.zeros(K, dtype=np.float64)
    for s in range(1, sweeps + 1):
        fold_in_sweep(word_ids, z, nk, phi, alpha, rng.random(word_ids.size))
        if s > burn:
            total += nk
    mean = total / (sweeps - burn)
    return (mean + alpha) / (word_ids.size + K * alpha)


def infer_theta(
    model: LdaModel,
    document: Document,
    fold_in_sweeps: int = 100,
    seed: int = 0,
    *,
    backend: str | None = None,
) -> np.ndarray:
    """Topic proportions of an unseen document, Gibbs-sampled with ``phi`` held fixed.

    Out-of-vocabulary tokens are dropped (and logged). Counts from the
    second half of the sweeps are averaged.
    """
    if fold_in_sweeps < 1:
        raise ValueError("fold_in_sweeps must be >= 1")
    word_ids, dropped = model.word_ids(document)
    if dropped:
        logger.warning("%s: dropped %d out-of-vocabulary token(s)", document.date, dropped)
    if word_ids.size == 0:
        raise RoutineMinerError(f"nothing to infer: document {document.date} has no in-vocabulary tokens")
    return _fold_in(model, word_ids, fold_in_sweeps, np.random.default_rng(seed), backend)


def log_likelihood_held_out(
    model: LdaModel,
    held_out: Corpus,
    fold_in_sweeps: int = 100,
    seed: int = 0,
    *,
    method: str = "fold-in",
    backend: str | None = None,
) -> tuple[float, int]:
    """Summed held-out token log-probability and the number of scored tokens.

    ``method="fold-in"`` estimates each document's topic proportions from all
    of its tokens and scores those same tokens. ``method="completion"``
    estimates from the even-position tokens and scores the odd-position ones,
    which removes the optimism fold-in has for models with many topics.
    """
    if method not in HELD_OUT_METHODS:
        raise ValueError(f"method must be one of {HELD_OUT_METHODS}, got {method!r}")
    total_ll = 0.0
    total_n = 0
    for d, doc in enumerate(held_out.documents):
        word_ids, dropped = model.word_ids(doc)
        if dropped:
            logger.warning("%s: dropped %d out-of-vocabulary token(s)", doc.date, dropped)
        if method == "completion":
            estimate, scored = word_ids[0::2], word_ids[1::2]
        else:
            estimate, scored = word_ids, word_ids
        if scored.size == 0 or estimate.size == 0:
            continue
        rng = np.random.default_rng([seed, d])
        theta = _fold_in(model, estimate, fold_in_sweeps, rng, backend)
        probs = theta @ model.phi[:, scored]
        total_ll += float(np.log(probs).sum())
        total_n += scored.size
    return total_ll, total_n


def perplexity(
    model: LdaModel,
    held_out: Corpus,
    fold_in_sweeps: int = 100,
    seed: int = 0,
    *,
    method: str = "fold-in",
    backend: str | None = None,
) -> float:
    """exp of the negative mean per-token held-out log-likelihood (lower is better)."""
    if held_out.M == 0:
        raise RoutineMinerError("empty held-out corpus")
    ll, n = log_likelihood_held_out(model, held_out, fold_in_sweeps, seed,
                                    method=method, backend=backend)
    if n == 0:
        raise RoutineMinerError("held-out corpus has no in-vocabulary tokens")
    return math.exp(-ll / n)


@dataclass(frozen=True)
class KCandidate:
    K: int
    status: str
    reason: str = ""
    fold_perplexities: tuple[float, ...] = ()

    @property
    def mean_perplexity(self) -> float | None:
        if not self.fold_perplexities:
            return None
        return float(np.mean(self.fold_perplexities))

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "status": self.status,
            "reason": self.reason,
            "mean_perplexity": self.mean_perplexity,
            "fold_perplexities": list(self.fold_perplexities),
        }


@dataclass(frozen=True)
class KSelection:
    chosen_k: int
    table: tuple[KCandidate, ...]
    folds: int
    seed: int
    method: str = "completion"

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "chosen_k": self.chosen_k,
            "folds": self.folds,
            "seed": self.seed,
            "method": self.method,
            "table": [c.to_dict() for c in self.table],
        }


def fold_indices(M: int, folds: int, seed: int) -> list[np.ndarray]:
    order = np.random.default_rng(seed).permutation(M)
    return [np.sort(part) for part in np.array_split(order, folds)]


def select_k(
    corpus: Corpus,
    candidates: Sequence[int],
    folds: int = 3,
    template: LdaConfig | None = None,
    *,
    fold_in_sweeps: int = 100,
    method: str = "completion",
    workers: int = 1,
    backend: str | None = None,
) -> KSelection:
    """Choose the number of topics by document-level cross-validated perplexity.

    Candidates with more topics than documents are excluded before any fit.
    Each fold's model is fitted on the other folds (keeping the full
    vocabulary) and scored on the held-out documents with ``method``. Ties
    on mean perplexity go to the smaller K. Results do not depend on
    ``workers``.
    """
    template = template or LdaConfig()
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if corpus.M < folds:
        raise RoutineMinerError(f"corpus has {corpus.M} documents, fewer than {folds} folds")
    excluded, kept = [], []
    for K in sorted(set(int(k) for k in candidates)):
        if K < 1:
            raise ValueError(f"candidate K must be >= 1, got {K}")
        if K > corpus.M:
            excluded.append(KCandidate(
                K, "excluded",
                f"exceeds document count: K={K} > M={corpus.M} (topics should not exceed days)",
            ))
        else:
            kept.append(K)
    if not kept:
        raise RoutineMinerError(
            f"every candidate exceeds the document count M={corpus.M}; "
            "rule of thumb: the number of topics should not exceed the number of documents"
        )
    splits = fold_indices(corpus.M, folds, template.seed)
    everything = np.arange(corpus.M)

    def evaluate(job):
        K, f = job
        test = splits[f]
        train = np.setdiff1d(everything, test)
        config = template.with_k(K)
        model = fit(corpus.subset(train), config, backend=backend)
        return perplexity(model, corpus.subset(test), fold_in_sweeps, template.seed + f,
                          method=method, backend=backend)

    jobs = [(K, f) for K in kept for f in range(folds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(evaluate, jobs))
    else:
        scores = [evaluate(job) for job in jobs]
    evaluated = []
    for i, K in enumerate(kept):
        per_fold = tuple(scores[i * folds:(i + 1) * folds])
        evaluated.append(KCandidate(K, "evaluated", "", per_fold))
        logger.info("K=%d mean held-out perplexity %.4f", K, evaluated[-1].mean_perplexity)
    best = min(evaluated, key=lambda c: (c.mean_perplexity, c.K))
    table = tuple(sorted(evaluated + excluded, key=lambda c: c.K))
    return KSelection(best.K, table, folds, template.seed, method)


# --------------------------------------------------------------------------
# model JSON


def check_schema_version(version, kind: str) -> None:
    major = str(version).split(".")[0]
    if not major.isdigit():
        raise SchemaVersionError(f"{kind}: unreadable schema_version {version!r}")
    if int(major) > int(MODEL_SCHEMA_VERSION.split(".")[0]):
        raise SchemaVersionError(
            f"{kind}: schema_version {version} is newer than supported {MODEL_SCHEMA_VERSION}"
        )


def model_to_dict(model: LdaModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "household_id": model.household_id,
        "config": model.config.to_dict(),
        "vocabulary": [t.encode() for t in model.vocabulary],
        "phi": model.phi.tolist(),
        "theta": model.theta.tolist(),
        "training_stats": {
            "final_log_likelihood": model.final_log_likelihood,
            "total_tokens": int(model.total_tokens),
            "M": model.M,
            "V": model.V,
        },
    }


def save_model(model: LdaModel) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def load_model(text: str, source: str | None = None) -> LdaModel:
    try:
        data = json.loads(text)
        check_schema_version(data["schema_version"], source or "model")
        cfg = data["config"]
        config = LdaConfig(K=int(cfg["K"]), alpha=float(cfg["alpha"]), eta=float(cfg["eta"]),
                           iterations=int(cfg["iterations"]), burn_in=int(cfg["burn_in"]),
                           seed=int(cfg["seed"]))
        vocab = tuple(WordToken.decode(t) for t in data["vocabulary"])
        phi = np.array(data["phi"], dtype=np.float64).reshape(config.K, len(vocab))
        theta = np.array(data["theta"], dtype=np.float64)
        stats = data.get("training_stats", {})
    except SchemaVersionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RoutineMinerError(f"{source or 'model'}: malformed model file ({exc})") from None
    if theta.ndim != 2 or theta.shape[1] != config.K:
        theta = theta.reshape(-1, config.K)
    return LdaModel(
        phi=phi,
        theta=theta,
        config=config,
        vocabulary=vocab,
        household_id=data.get("household_id", ""),
        final_log_likelihood=float(stats.get("final_log_likelihood", math.nan)),
        total_tokens=int(stats.get("total_tokens", 0)),
    )
