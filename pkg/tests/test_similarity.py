"""TF-IDF cosine similarity against a hand-rolled oracle."""

import math
from collections import Counter

import numpy as np
import pytest

from internlab.similarity import TfidfSimilarity, text_terms


def oracle_vector(text, docs):
    """Independent tf-idf computation used to pin the fitted weights."""
    n = len(docs)
    df = Counter()
    for d in docs:
        df.update(set(text_terms(d)))
    vocab = sorted(df)
    tf = Counter(text_terms(text))
    vec = [tf[t] * (math.log((1 + n) / (1 + df[t])) + 1.0) for t in vocab]
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec] if norm else vec


DOCS = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "cats and dogs and rain",
    "rain falls on the plain",
]


def test_vector_matches_oracle():
    sim = TfidfSimilarity(DOCS)
    for doc in DOCS:
        np.testing.assert_allclose(sim.vector(doc), oracle_vector(doc, DOCS), atol=1e-12)


def test_score_matches_oracle_cosine():
    sim = TfidfSimilarity(DOCS)
    a, b = DOCS[0], DOCS[1]
    expected = float(np.dot(oracle_vector(a, DOCS), oracle_vector(b, DOCS)))
    assert sim.score(a, b) == pytest.approx(expected, abs=1e-12)


def test_identical_texts_score_one():
    sim = TfidfSimilarity(DOCS)
    assert sim.score(DOCS[2], DOCS[2]) == pytest.approx(1.0)


def test_disjoint_texts_score_zero():
    sim = TfidfSimilarity(DOCS)
    assert sim.score("the cat", "zebra quartz") == 0.0


def test_empty_text_scores_zero():
    sim = TfidfSimilarity(DOCS)
    assert sim.score("", DOCS[0]) == 0.0


def test_unknown_terms_are_ignored():
    sim = TfidfSimilarity(DOCS)
    assert sim.score("cat zebra", "cat") == pytest.approx(sim.score("cat", "cat"))


def test_pairwise_agrees_with_score():
    sim = TfidfSimilarity(DOCS)
    mat = sim.pairwise(DOCS)
    assert mat.shape == (4, 4)
    for i in range(4):
        for j in range(4):
            assert mat[i, j] == pytest.approx(sim.score(DOCS[i], DOCS[j]), abs=1e-12)


def test_case_folding():
    sim = TfidfSimilarity(DOCS)
    assert sim.score("CAT", "cat") == pytest.approx(1.0)


def test_ranking_prefers_shared_rare_terms():
    sim = TfidfSimilarity(DOCS)
    query = "the cat sat"
    scores = [sim.score(query, d) for d in DOCS]
    assert scores[0] == max(scores)
