from __future__ import annotations

import json

import numpy as np
import pytest

from routine_miner.corpus import Document, WordToken
from routine_miner.errors import RoutineMinerError, SchemaVersionError
from routine_miner.lda import (
    GibbsChain, LdaConfig, LdaModel, collapsed_log_likelihood, fit, fold_indices, infer_theta,
    load_model, perplexity, save_model, select_k,
)

from conftest import best_match_tv, planted_corpus, toy_corpus

FAST = LdaConfig(K=3, iterations=200, burn_in=100, seed=1)

TWO_TOPICS = [
    {"Fridge@8": 0.4, "Kettle@8": 0.35, "Toaster@7": 0.25},
    {"Remote@20": 0.5, "Tablet@21": 0.3, "Chair@20": 0.2},
]


@pytest.fixture(scope="module")
def small():
    topics = [{"A@1": 0.6, "B@1": 0.4}, {"C@2": 0.7, "D@3": 0.3}, {"E@4": 0.5, "F@5": 0.5}]
    return planted_corpus(topics, docs=12, tokens_per_doc=60, seed=3)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("kwargs, fragment", [
    ({"K": 0}, "K >= 1"),
    ({"alpha": 0.0}, "alpha"),
    ({"eta": -1.0}, "eta"),
    ({"iterations": 10, "burn_in": 10}, "burn_in"),
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
])
def test_config_validation(kwargs, fragment):
    with pytest.raises(ValueError, match=fragment):
        LdaConfig(**kwargs)


# ---------------------------------------------------------------- fit

def test_single_word_single_topic_is_exact():
    corpus = toy_corpus([["Fridge@9"] * 5, ["Fridge@9"] * 3])
    model = fit(corpus, LdaConfig(K=1, iterations=5, burn_in=1))
    assert model.phi.tolist() == [[1.0]]
    assert model.theta.tolist() == [[1.0], [1.0]]


def test_k_ten_gives_ten_rows(small):
    model = fit(small, LdaConfig(K=10, iterations=20, burn_in=10))
    assert model.phi.shape == (10, small.V) and model.theta.shape == (small.M, 10)


def test_counts_conserved_every_sweep(small):
    n = small.total_tokens
    seen = []

    def check(sweep, chain: GibbsChain):
        assert chain.nkw.sum() == chain.ndk.sum() == n
        assert np.array_equal(chain.nk, chain.nkw.sum(axis=1))
        assert np.array_equal(chain.ndk.sum(axis=1), chain.doc_lengths)
        assert chain.nkw.min() >= 0 and chain.ndk.min() >= 0
        seen.append(sweep)

    fit(small, LdaConfig(K=4, iterations=30, burn_in=10), callback=check)
    assert seen == list(range(1, 31))


def test_conditional_weights_positive(small):
    chain = GibbsChain(small, FAST)
    chain.sweep()
    for i in range(0, chain.N, 37):
        w = chain.conditional(i)
        assert np.all(w > 0) and np.isfinite(w).all()


def test_rows_normalised(small):
    model = fit(small, FAST)
    assert np.allclose(model.phi.sum(axis=1), 1, rtol=0, atol=1e-9)
    assert np.allclose(model.theta.sum(axis=1), 1, rtol=0, atol=1e-9)
    assert model.phi.min() > 0 and model.theta.min() > 0
    assert model.topic_word_counts.sum() == model.doc_topic_counts.sum() == small.total_tokens


def test_same_seed_bit_identical(small):
    a, b = fit(small, FAST), fit(small, FAST)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.theta, b.theta)
    assert save_model(a) == save_model(b)
    c = fit(small, LdaConfig(K=3, iterations=200, burn_in=100, seed=2))
    assert not np.array_equal(a.phi, c.phi)


@pytest.mark.parametrize("seed", range(5))
def test_planted_two_topic_recovery(seed):
    corpus = planted_corpus(TWO_TOPICS, docs=20, tokens_per_doc=200, seed=seed)
    model = fit(corpus, LdaConfig(K=2, seed=seed))
    for topic in TWO_TOPICS:
        target = {WordToken.decode(w): p for w, p in topic.items()}
        assert best_match_tv(model.phi, model.vocabulary, target) <= 0.1


def test_log_likelihood_increases_for_most_seeds(small):
    wins = sum(
        fit(small, LdaConfig(K=3, iterations=100, burn_in=50, seed=s)).final_log_likelihood
        > fit(small, LdaConfig(K=3, iterations=100, burn_in=50, seed=s)).initial_log_likelihood
        for s in range(10)
    )
    assert wins >= 9


def test_collapsed_log_likelihood_matches_direct_formula():
    from scipy.special import gammaln
    ndk = np.array([[2, 0], [1, 1]])
    nkw = np.array([[2, 1], [0, 1]])
    a, e = 0.5, 0.1
    K, V = 2, 2
    expected = 0.0
    for k in range(K):
        expected += gammaln(V * e) - V * gammaln(e) + sum(gammaln(nkw[k] + e)) - gammaln(nkw[k].sum() + V * e)
    for d in range(2):
        expected += gammaln(K * a) - K * gammaln(a) + sum(gammaln(ndk[d] + a)) - gammaln(ndk[d].sum() + K * a)
    assert collapsed_log_likelihood(ndk, nkw, a, e) == pytest.approx(expected, rel=1e-12)


def test_fit_errors():
    corpus = toy_corpus([["A@1", "B@1"]])
    with pytest.raises(RoutineMinerError, match="exceeds"):
        fit(corpus, LdaConfig(K=3, iterations=2, burn_in=1))
    with pytest.raises(RoutineMinerError, match="empty"):
        fit(toy_corpus([[]]), LdaConfig(K=1, iterations=2, burn_in=1))


# ---------------------------------------------------------------- held-out

def _fixed_model(phi) -> LdaModel:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    K = phi.shape[0]
    vocab = tuple(WordToken(f"w{v}", 0) for v in range(phi.shape[1]))
    return LdaModel(phi, np.full((1, K), 1 / K), LdaConfig(K=K), vocab)


def _held_out(words: list[list[int]]):
    return toy_corpus([[f"w{v}@0" for v in doc] for doc in words])


def test_uniform_model_perplexity_is_v():
    V = 12
    model = _fixed_model(np.full((3, V), 1 / V))
    held = _held_out([[0, 3, 3, 11], [5, 7], [2]])
    for method in ("fold-in", "completion"):
        assert perplexity(model, held, 10, method=method) == pytest.approx(V, rel=1e-12)


def test_fixed_probability_gives_inverse():
    model = _fixed_model([[0.4, 0.4, 0.2], [0.4, 0.4, 0.2]])
    held = _held_out([[0, 1, 1, 0], [1]])
    assert perplexity(model, held, 10) == pytest.approx(2.5, rel=1e-12)


def test_perplexity_errors():
    model = _fixed_model(np.full((1, 3), 1 / 3))
    with pytest.raises(RoutineMinerError, match="empty"):
        perplexity(model, _empty_corpus())
    with pytest.raises(ValueError, match="method"):
        perplexity(model, _held_out([[0]]), method="magic")


def _empty_corpus():
    from routine_miner.corpus import Corpus
    return Corpus((), "h", "UTC")


def test_infer_theta_self_consistency(small):
    close = 0
    for seed in range(10):
        model = fit(small, LdaConfig(K=3, seed=seed))
        d = seed % small.M
        est = infer_theta(model, small.documents[d], 200, seed=seed)
        assert est.sum() == pytest.approx(1, abs=1e-12)
        close += np.abs(est - model.theta[d]).sum() <= 0.2
    assert close >= 9


def test_infer_theta_k1_and_oov(small):
    model = fit(small, LdaConfig(K=1, iterations=10, burn_in=5))
    assert infer_theta(model, small.documents[0]).tolist() == [1.0]
    from datetime import date
    with pytest.raises(RoutineMinerError, match="nothing to infer"):
        infer_theta(model, Document(date(2017, 1, 1), (WordToken("Unknown", 3),)))


def test_fitted_perplexity_beats_uniform(small):
    model = fit(small, FAST)
    p = perplexity(model, small)
    assert 1 <= p < small.V


# ---------------------------------------------------------------- select_k

def test_fold_indices_partition():
    parts = fold_indices(14, 3, seed=4)
    assert sorted(np.concatenate(parts).tolist()) == list(range(14))
    assert [p.size for p in parts] == [5, 5, 4]


def test_select_k_excludes_large_candidates(small):
    corpus = small.subset(range(small.M))
    template = LdaConfig(iterations=60, burn_in=30, seed=0)
    result = select_k(corpus, [5, 10, 20], 3, template, fold_in_sweeps=20)
    table = {c.K: c for c in result.table}
    assert table[20].status == "excluded" and "exceeds document count" in table[20].reason
    assert table[5].status == "evaluated" and len(table[5].fold_perplexities) == 3
    assert result.chosen_k in (5, 10)
    assert select_k(corpus, [5, 10, 20], 3, template, fold_in_sweeps=20, workers=2) == result
    assert json.loads(json.dumps(result.to_dict()))["chosen_k"] == result.chosen_k


def test_select_k_ties_go_to_smaller_k():
    corpus = toy_corpus([["A@1"] * (3 + i) for i in range(6)])
    result = select_k(corpus, [3, 2, 1], 3, LdaConfig(iterations=10, burn_in=5), fold_in_sweeps=5)
    assert {c.mean_perplexity for c in result.table} == {1.0}
    assert result.chosen_k == 1


def test_select_k_errors(small):
    with pytest.raises(RoutineMinerError, match="should not exceed the number of documents"):
        select_k(small, [50, 60], 3)
    with pytest.raises(RoutineMinerError, match="fewer than"):
        select_k(small.subset([0, 1]), [1], 3)
    with pytest.raises(ValueError, match="folds"):
        select_k(small, [2], 1)


# ---------------------------------------------------------------- model JSON

def test_model_round_trip_is_exact(small):
    model = fit(small, FAST)
    text = save_model(model)
    again = load_model(text)
    assert np.array_equal(again.phi, model.phi) and np.array_equal(again.theta, model.theta)
    assert again.config == model.config and again.vocabulary == model.vocabulary
    assert save_model(again) == text
    data = json.loads(text)
    assert set(data) == {"schema_version", "household_id", "config", "vocabulary", "phi", "theta",
                         "training_stats"}
    assert set(data["training_stats"]) == {"final_log_likelihood", "total_tokens", "M", "V"}


def test_model_schema_version_checks(small):
    data = json.loads(save_model(fit(small, LdaConfig(K=2, iterations=4, burn_in=2))))
    data["schema_version"] = "1.7"
    load_model(json.dumps(data))
    data["schema_version"] = "2.0"
    with pytest.raises(SchemaVersionError, match="newer"):
        load_model(json.dumps(data), source="m.json")
    del data["phi"]
    data["schema_version"] = "1.0"
    with pytest.raises(RoutineMinerError, match="malformed"):
        load_model(json.dumps(data))
