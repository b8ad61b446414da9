"""Lexical ranking: a fielded BM25F index and a plain BM25 index.

Both indexes precompute, per (term, document), the full score contribution of
one query-token occurrence. Query-time scoring then reduces to a sparse
postings accumulation, which is the hot inner loop of the pipeline (it runs
once per table cell for context-sentence retrieval and once per training cell
for negative mining). That loop lives in a small compiled kernel with a numpy
fallback, selected at import.

Naive reference implementations (``bm25_reference``, ``bm25f_reference``)
recompute everything from the raw texts with plain Python loops. They share
no code with the index path and serve as the independent side of the
index-vs-reference equivalence checks.

Scoring conventions (identical in both paths):

* tokenization: lowercase, maximal runs of ``[a-z0-9]`` (digits survive, so
  a cell like "R2C2" stays one token),
* idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)) with n_t the number of
  documents containing t (in any field, for the fielded index),
* BM25 per-term score: idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl)),
* BM25F per-term score: idf * wtf / (k1 + wtf) with
  wtf = sum over fields of weight_f * tf_f / (1 - b + b * len_f/avglen_f),
* query tokens count with multiplicity; documents with zero score are never
  returned.
"""

from __future__ import annotations

import re
from collections import Counter
from math import log
from typing import Mapping, Sequence

import numpy as np

try:
    from tablink import _scoring as _kernel
except ImportError:
    from tablink import _scoring_py as _kernel

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def kernel_implementation() -> str:
    """Name of the active accumulation kernel: "cython" or "numpy"."""
    return _kernel.IMPLEMENTATION


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, keeping digits."""
    return _TOKEN_RE.findall(text.lower())


def _rank(scores: np.ndarray, k: int | None, mask: np.ndarray | None) -> list[tuple[int, float]]:
    """Positions with positive score, by descending score then position."""
    if mask is not None:
        scores = np.where(mask, scores, 0.0)
    positions = np.nonzero(scores > 0.0)[0]
    if positions.size == 0:
        return []
    order = np.lexsort((positions, -scores[positions]))
    ranked = positions[order]
    if k is not None:
        ranked = ranked[:k]
    return [(int(p), float(scores[p])) for p in ranked]


class TextIndex:
    """BM25 index over a fixed list of texts (one field)."""

    def __init__(self, texts: Sequence[str], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.size = len(texts)
        self.k1 = k1
        self.b = b
        token_lists = [tokenize(t) for t in texts]
        lengths = np.array([len(toks) for toks in token_lists], dtype=np.float64)
        avgdl = float(lengths.mean()) if self.size else 0.0
        self._postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        if avgdl == 0.0:
            return
        per_term: dict[str, list[tuple[int, float]]] = {}
        for pos, toks in enumerate(token_lists):
            norm = k1 * (1.0 - b + b * lengths[pos] / avgdl)
            for term, tf in Counter(toks).items():
                per_term.setdefault(term, []).append((pos, tf * (k1 + 1.0) / (tf + norm)))
        n_docs = self.size
        for term, posting in per_term.items():
            idf = log(1.0 + (n_docs - len(posting) + 0.5) / (len(posting) + 0.5))
            idx = np.array([p for p, _ in posting], dtype=np.int32)
            contrib = np.array([idf * c for _, c in posting], dtype=np.float64)
            self._postings[term] = (idx, contrib)

    def scores(self, query: str) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.float64)
        for term, count in Counter(tokenize(query)).items():
            posting = self._postings.get(term)
            if posting is not None:
                _kernel.scatter_add(posting[0], posting[1], float(count), out)
        return out

    def search(self, query: str, k: int | None = None) -> list[tuple[int, float]]:
        """Ranked (position, score), ties broken by position."""
        return _rank(self.scores(query), k, None)


class FieldedIndex:
    """BM25F index over documents with weighted text fields."""

    def __init__(
        self,
        documents: Sequence[Mapping[str, str]],
        field_weights: Mapping[str, float],
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ):
        self.size = len(documents)
        self.k1 = k1
        self.b = b
        self.field_weights = dict(field_weights)
        fields = list(self.field_weights)
        token_lists = [{f: tokenize(doc.get(f, "")) for f in fields} for doc in documents]
        avglen = {
            f: (sum(len(tl[f]) for tl in token_lists) / self.size if self.size else 0.0)
            for f in fields
        }
        # weighted, length-normalized term frequency per (term, document)
        wtf: dict[str, dict[int, float]] = {}
        for pos, tl in enumerate(token_lists):
            for f in fields:
                if avglen[f] == 0.0:
                    continue
                norm = 1.0 - b + b * len(tl[f]) / avglen[f]
                w = self.field_weights[f] / norm
                for term, tf in Counter(tl[f]).items():
                    wtf.setdefault(term, {})[pos] = wtf.get(term, {}).get(pos, 0.0) + w * tf
        self._postings = {}
        for term, by_doc in wtf.items():
            n_t = len(by_doc)
            idf = log(1.0 + (self.size - n_t + 0.5) / (n_t + 0.5))
            idx = np.array(sorted(by_doc), dtype=np.int32)
            contrib = np.array(
                [idf * by_doc[p] / (k1 + by_doc[p]) for p in sorted(by_doc)], dtype=np.float64
            )
            self._postings[term] = (idx, contrib)

    def scores(self, query: str) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.float64)
        for term, count in Counter(tokenize(query)).items():
            posting = self._postings.get(term)
            if posting is not None:
                _kernel.scatter_add(posting[0], posting[1], float(count), out)
        return out

    def search(
        self, query: str, k: int | None = None, mask: np.ndarray | None = None
    ) -> list[tuple[int, float]]:
        """Ranked (position, score) over documents where ``mask`` holds."""
        return _rank(self.scores(query), k, mask)


def bm25_reference(
    texts: Sequence[str], query: str, k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> list[float]:
    """Brute-force BM25 score of every text, no index, no numpy."""
    token_lists = [tokenize(t) for t in texts]
    n_docs = len(texts)
    total = sum(len(toks) for toks in token_lists)
    if n_docs == 0 or total == 0:
        return [0.0] * n_docs
    avgdl = total / n_docs
    df = {}
    for toks in token_lists:
        for term in set(toks):
            df[term] = df.get(term, 0) + 1
    scores = []
    for toks in token_lists:
        tf = Counter(toks)
        s = 0.0
        for term in tokenize(query):
            f = tf.get(term, 0)
            if f == 0:
                continue
            idf = log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            s += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * len(toks) / avgdl))
        scores.append(s)
    return scores


def bm25f_reference(
    documents: Sequence[Mapping[str, str]],
    query: str,
    field_weights: Mapping[str, float],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[float]:
    """Brute-force BM25F score of every document, no index, no numpy."""
    fields = list(field_weights)
    token_lists = [{f: tokenize(doc.get(f, "")) for f in fields} for doc in documents]
    n_docs = len(documents)
    if n_docs == 0:
        return []
    avglen = {f: sum(len(tl[f]) for tl in token_lists) / n_docs for f in fields}
    df = {}
    for tl in token_lists:
        for term in set().union(*(tl[f] for f in fields)):
            df[term] = df.get(term, 0) + 1
    scores = []
    for tl in token_lists:
        counts = {f: Counter(tl[f]) for f in fields}
        s = 0.0
        for term in tokenize(query):
            wtf = 0.0
            for f in fields:
                tf = counts[f].get(term, 0)
                if tf == 0 or avglen[f] == 0.0:
                    continue
                wtf += field_weights[f] * tf / (1.0 - b + b * len(tl[f]) / avglen[f])
            if wtf == 0.0:
                continue
            idf = log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            s += idf * wtf / (k1 + wtf)
        scores.append(s)
    return scores
