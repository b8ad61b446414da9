"""BM25/BM25F scoring: hand-computed oracles, index-vs-reference agreement."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablink import _scoring_py
from tablink import lexical

WEIGHTS = {"full_name": 3.0, "abbreviation": 2.0, "description": 1.0}

TOY_ENTITIES = [
    {"abbreviation": "aa", "full_name": "x y", "description": ""},
    {"abbreviation": "bb", "full_name": "x z", "description": "w"},
    {"abbreviation": "cc", "full_name": "q r", "description": ""},
]


def test_tokenize_keeps_digit_runs():
    assert lexical.tokenize("R2C2 BlenderBot!") == ["r2c2", "blenderbot"]
    assert lexical.tokenize("  ") == []


def test_bm25f_matches_hand_computation():
    # all abbreviation lengths are 1 and all full_name lengths 2, so every
    # field norm is 1; doc frequencies: x in 2 docs, y in 1 of 3 docs
    idx = lexical.FieldedIndex(TOY_ENTITIES, WEIGHTS)
    scores = idx.scores("x y")
    idf_x = math.log(1 + (3 - 2 + 0.5) / (2 + 0.5))
    idf_y = math.log(1 + (3 - 1 + 0.5) / (1 + 0.5))
    saturated = 3.0 / (1.2 + 3.0)  # wtf=3 from one full_name hit
    assert scores[0] == pytest.approx((idf_x + idf_y) * saturated, abs=1e-12)
    assert scores[1] == pytest.approx(idf_x * saturated, abs=1e-12)
    assert scores[2] == 0.0


def test_bm25f_query_of_one_entity_ranks_it_first():
    idx = lexical.FieldedIndex(TOY_ENTITIES, WEIGHTS)
    hits = idx.search("x y")
    assert hits[0][0] == 0
    assert [pos for pos, _ in hits] == [0, 1]


def test_zero_overlap_query_returns_nothing():
    idx = lexical.FieldedIndex(TOY_ENTITIES, WEIGHTS)
    assert idx.search("zzz") == []
    assert idx.search("") == []


def test_k_one_returns_the_global_top():
    idx = lexical.FieldedIndex(TOY_ENTITIES, WEIGHTS)
    assert idx.search("x y", k=1) == [idx.search("x y")[0]]


def test_increasing_k_is_a_prefix_extension():
    idx = lexical.FieldedIndex(TOY_ENTITIES, WEIGHTS)
    prev = []
    for k in range(1, 4):
        hits = idx.search("x w q", k=k)
        assert hits[: len(prev)] == prev
        prev = hits


def test_bm25_sentence_oracle():
    texts = ["alpha beta", "gamma delta epsilon", "alpha gamma"]
    idx = lexical.TextIndex(texts)
    scores = idx.scores("gamma")
    # df(gamma)=2, N=3, avgdl=7/3
    idf = math.log(1 + (3 - 2 + 0.5) / (2 + 0.5))
    expected_1 = idf * (1 * 2.2) / (1 + 1.2 * (0.25 + 0.75 * 3 / (7 / 3)))
    expected_2 = idf * (1 * 2.2) / (1 + 1.2 * (0.25 + 0.75 * 2 / (7 / 3)))
    assert scores[0] == 0.0
    assert scores[1] == pytest.approx(expected_1, abs=1e-12)
    assert scores[2] == pytest.approx(expected_2, abs=1e-12)
    assert [pos for pos, _ in idx.search("gamma")] == [2, 1]


def test_bm25_ties_break_by_position():
    idx = lexical.TextIndex(["same words here", "same words here", "other"])
    hits = idx.search("same words")
    assert [pos for pos, _ in hits] == [0, 1]


def _random_corpus(rng, n_docs):
    vocab = ["alpha", "beta", "gamma", "delta", "x1", "r2c2", "net", "deep"]
    docs = []
    for _ in range(n_docs):
        docs.append(
            {
                "abbreviation": " ".join(rng.choices(vocab, k=rng.randint(0, 2))),
                "full_name": " ".join(rng.choices(vocab, k=rng.randint(1, 5))),
                "description": " ".join(rng.choices(vocab, k=rng.randint(0, 8))),
            }
        )
    return docs


def test_index_matches_reference_on_random_corpora():
    rng = random.Random(1234)
    for trial in range(40):
        docs = _random_corpus(rng, rng.randint(1, 50))
        query = " ".join(rng.choices(["alpha", "beta", "net", "zz", "r2c2"], k=rng.randint(1, 4)))
        idx = lexical.FieldedIndex(docs, WEIGHTS)
        got = idx.scores(query)
        want = lexical.bm25f_reference(docs, query, WEIGHTS)
        assert np.allclose(got, want, atol=1e-9), f"trial {trial}"


def test_text_index_matches_reference_on_random_corpora():
    rng = random.Random(99)
    for _ in range(40):
        texts = [
            " ".join(rng.choices(["a", "b", "c", "dd", "ee"], k=rng.randint(0, 6)))
            for _ in range(rng.randint(1, 50))
        ]
        query = " ".join(rng.choices(["a", "b", "dd", "zz"], k=rng.randint(1, 3)))
        got = lexical.TextIndex(texts).scores(query)
        want = lexical.bm25_reference(texts, query)
        assert np.allclose(got, want, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.fixed_dictionaries(
            {
                "abbreviation": st.text(alphabet="abc 12", max_size=8),
                "full_name": st.text(alphabet="abc 12", min_size=1, max_size=12),
                "description": st.text(alphabet="abc 12", max_size=16),
            }
        ),
        min_size=1,
        max_size=20,
    ),
    st.text(alphabet="abc 12", max_size=8),
)
def test_index_matches_reference_property(docs, query):
    got = lexical.FieldedIndex(docs, WEIGHTS).scores(query)
    want = lexical.bm25f_reference(docs, query, WEIGHTS)
    assert np.allclose(got, want, atol=1e-9)


def test_kernel_fallback_agrees_with_active_kernel():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n_docs = int(rng.integers(1, 40))
        n_postings = int(rng.integers(0, 60))
        idx = rng.integers(0, n_docs, size=n_postings).astype(np.int32)
        contribs = rng.random(n_postings)
        weight = float(rng.random() * 3)
        fast = np.zeros(n_docs)
        slow = np.zeros(n_docs)
        lexical._kernel.scatter_add(idx, contribs, weight, fast)
        _scoring_py.scatter_add(idx, contribs, weight, slow)
        assert np.allclose(fast, slow, atol=1e-12)


def test_kernel_implementation_reports_backend():
    assert lexical.kernel_implementation() in ("cython", "numpy")
