"""Attributed source matching: candidates, ranking, permutation invariance."""

from dataclasses import replace

import pytest

from tablink.asm import (
    REFERENCE,
    SELF,
    SourceCandidate,
    SourceMatcher,
    rank_sources,
    source_candidates,
    train_asm,
)
from tablink.context import build_cell_context
from tablink.corpus import Corpus, FoldSplit
from tests.conftest import STUB_BACKEND, overfit_config


class DictScorer:
    """Fixture scorer keyed on (kind, reference_index)."""

    def __init__(self, probs):
        self.probs = probs

    def score_sources(self, context, document, candidates):
        return [self.probs[(c.kind, c.reference_index)] for c in candidates]


def train_fold(corpus):
    return FoldSplit("image classification", "", tuple(
        t for t in corpus.topics if t != "image classification"
    ))


def context_for(corpus, cell, n_sentences=3):
    document = corpus.documents[cell.document_id]
    return build_cell_context(cell, document, n_sentences)


class TestCandidates:
    def test_self_always_included_and_counted(self, train_corpus):
        document = train_corpus.documents["doc_det"]
        candidates = source_candidates(document)
        assert candidates[0] == SourceCandidate(SELF)
        assert len(candidates) == len(document.references) + 1
        assert [c.reference_index for c in candidates[1:]] == [1, 2]


class TestRankSources:
    def test_injected_scores_sorted(self, train_corpus):
        document = train_corpus.documents["doc_det"]
        cell = train_corpus.cell(train_corpus.cells[2].key)
        context = context_for(train_corpus, cell)
        scorer = DictScorer({(SELF, None): 0.9, (REFERENCE, 1): 0.1, (REFERENCE, 2): 0.4})
        ranking = rank_sources(scorer, context, document)
        assert ranking.top() == SourceCandidate(SELF)
        assert [c.kind for c, _ in ranking.entries] == [SELF, REFERENCE, REFERENCE]
        probs = [p for _, p in ranking.entries]
        assert probs == sorted(probs, reverse=True)

    def test_ties_rank_self_first_then_index(self, train_corpus):
        document = train_corpus.documents["doc_det"]
        cell = train_corpus.cells[2]
        context = context_for(train_corpus, cell)
        scorer = DictScorer({(SELF, None): 0.5, (REFERENCE, 1): 0.5, (REFERENCE, 2): 0.5})
        ranking = rank_sources(scorer, context, document)
        assert [(c.kind, c.reference_index) for c, _ in ranking.entries] == [
            (SELF, None), (REFERENCE, 1), (REFERENCE, 2),
        ]

    def test_ranking_is_a_permutation_with_unit_interval_probs(self, train_corpus):
        document = train_corpus.documents["doc_nli"]
        cell = train_corpus.cells[7]
        matcher = SourceMatcher.__new__(SourceMatcher)  # bypass training
        matcher.n_sentences = 2
        matcher.max_tokens = 128
        scorer = DictScorer({(SELF, None): 0.3, (REFERENCE, 1): 0.8, (REFERENCE, 2): 0.1})
        ranking = rank_sources(scorer, context_for(train_corpus, cell), document)
        assert sorted((c.kind, c.reference_index) for c, _ in ranking.entries) == sorted(
            (c.kind, c.reference_index) for c in source_candidates(document)
        )
        assert all(0.0 <= p <= 1.0 for _, p in ranking.entries)

    def test_invariant_under_reference_list_permutation(self, train_corpus):
        matcher = train_asm(
            train_corpus, train_fold(train_corpus), overfit_config(epochs=2),
            backend_spec=STUB_BACKEND,
        )
        document = train_corpus.documents["doc_det"]
        cell = train_corpus.cells[2]
        context = context_for(train_corpus, cell, matcher.n_sentences)
        baseline = rank_sources(matcher, context, document)
        shuffled = replace(document, references=tuple(reversed(document.references)))
        permuted = rank_sources(matcher, context, shuffled)
        assert [
            ((c.kind, c.reference_index), pytest.approx(p)) for c, p in baseline.entries
        ] == [((c.kind, c.reference_index), pytest.approx(p)) for c, p in permuted.entries]


class TestTrainASM:
    def test_overfits_token_overlap_task(self, train_corpus):
        matcher = train_asm(
            train_corpus, train_fold(train_corpus), overfit_config(),
            backend_spec=STUB_BACKEND,
        )
        fold = train_fold(train_corpus)
        checked = 0
        correct = 0
        for cell in train_corpus.cells_for_topics(fold.train_topics):
            if not cell.gold_attributed_sources:
                continue
            document = train_corpus.documents[cell.document_id]
            ranking = rank_sources(
                matcher, context_for(train_corpus, cell, matcher.n_sentences), document
            )
            top = ranking.top()
            gold_key = 0 if top.kind == SELF else top.reference_index
            correct += gold_key in cell.gold_attributed_sources
            checked += 1
        assert checked >= 4
        assert correct / checked >= 0.95

    def test_empty_gold_cells_feed_only_negatives(self, train_corpus):
        # the omega cell has an annotated-empty source set; training must
        # succeed and treat all of its candidates as negatives
        matcher = train_asm(
            train_corpus, train_fold(train_corpus), overfit_config(epochs=1),
            backend_spec=STUB_BACKEND,
        )
        assert isinstance(matcher, SourceMatcher)

    def test_same_seed_identical_scores(self, train_corpus):
        fold = train_fold(train_corpus)
        config = overfit_config(epochs=2)
        results = []
        for _ in range(2):
            matcher = train_asm(train_corpus, fold, config, backend_spec=STUB_BACKEND)
            cell = train_corpus.cells[2]
            document = train_corpus.documents[cell.document_id]
            context = context_for(train_corpus, cell, matcher.n_sentences)
            results.append(
                matcher.score_sources(context, document, source_candidates(document))
            )
        assert results[0] == results[1]

    def test_checkpoint_round_trip(self, tmp_path, train_corpus):
        config = overfit_config(epochs=1)
        matcher = train_asm(
            train_corpus, train_fold(train_corpus), config, backend_spec=STUB_BACKEND
        )
        matcher.save(tmp_path / "asm", config)
        restored = SourceMatcher.load(tmp_path / "asm")
        cell = train_corpus.cells[2]
        document = train_corpus.documents[cell.document_id]
        context = context_for(train_corpus, cell, matcher.n_sentences)
        candidates = source_candidates(document)
        assert restored.score_sources(context, document, candidates) == matcher.score_sources(
            context, document, candidates
        )
