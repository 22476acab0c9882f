"""Cosine similarity over TF-IDF vectors, fitted on a small text corpus.

Tokenization is lowercased ``\\w+``.  IDF uses the smoothed form
ln((1 + N) / (1 + df)) + 1 so unseen-document terms never blow up;
vectors are L2-normalized, so cosine is a plain dot product.  Terms
absent from the fitted vocabulary are ignored when vectorizing.
"""

from __future__ import annotations

import math
import re
from collections import Counter

import numpy as np

_TOKEN_RE = re.compile(r"\w+")


def text_terms(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TfidfSimilarity:
    def __init__(self, texts: list[str]):
        docs = [text_terms(t) for t in texts]
        n_docs = len(docs)
        df: Counter[str] = Counter()
        for terms in docs:
            df.update(set(terms))
        self.vocab = {term: i for i, term in enumerate(sorted(df))}
        self.idf = np.array(
            [math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in sorted(df)],
            dtype=np.float64,
        )

    def vector(self, text: str) -> np.ndarray:
        vec = np.zeros(len(self.vocab), dtype=np.float64)
        for term, count in Counter(text_terms(text)).items():
            idx = self.vocab.get(term)
            if idx is not None:
                vec[idx] = count * self.idf[idx]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def score(self, a: str, b: str) -> float:
        """Cosine similarity in [0, 1]; 0 when either side is empty."""
        return float(np.dot(self.vector(a), self.vector(b)))

    def pairwise(self, texts: list[str]) -> np.ndarray:
        mat = np.stack([self.vector(t) for t in texts]) if texts else np.zeros((0, 0))
        return mat @ mat.T
