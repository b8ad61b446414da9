# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled inner loop for lexical (BM25/BM25F) scoring.

One term-at-a-time postings accumulation. The numpy fallback with identical
semantics lives in ``tablink._scoring_py``.
"""

IMPLEMENTATION = "cython"


def scatter_add(const int[::1] doc_idx, const double[::1] contribs,
                double weight, double[::1] scores):
    """scores[doc_idx[i]] += weight * contribs[i] for every posting i."""
    cdef Py_ssize_t i, n = doc_idx.shape[0]
    for i in range(n):
        scores[doc_idx[i]] += weight * contribs[i]
