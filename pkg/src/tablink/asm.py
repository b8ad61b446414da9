"""Attributed source matching: score reference papers and the document itself."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from tablink.context import (
    CellContext,
    DEFAULT_MAX_TOKENS,
    DEFAULT_N_SENTENCES,
    build_cell_context,
    fuse_pair,
    pair_budgets,
    serialize_cell,
    serialize_paper,
    serialize_self_source,
)
from tablink.corpus import Corpus, DocumentRecord, FoldSplit, SELF_SOURCE
from tablink.encoder import (
    EncoderModel,
    PairwiseScorer,
    TrainingConfig,
    fit_pairwise,
    load_manifest,
    load_weights,
    make_backend,
    manifest_for,
    save_checkpoint,
    training_config_from,
)

logger = logging.getLogger(__name__)

SELF = "SELF"
REFERENCE = "REFERENCE"


@dataclass(frozen=True)
class SourceCandidate:
    kind: str
    reference_index: int | None = None

    @property
    def sort_index(self) -> int:
        return 0 if self.kind == SELF else self.reference_index


@dataclass(frozen=True)
class SourceRanking:
    """(candidate, probability) pairs, non-increasing by probability."""

    entries: tuple[tuple[SourceCandidate, float], ...]

    def top(self) -> SourceCandidate:
        return self.entries[0][0]


def source_candidates(document: DocumentRecord) -> list[SourceCandidate]:
    """All potential sources: the document itself, then references by index."""
    out = [SourceCandidate(SELF)]
    for ref in sorted(document.references, key=lambda r: r.index_in_reference_section):
        out.append(SourceCandidate(REFERENCE, ref.index_in_reference_section))
    return out


def _source_sequence(document: DocumentRecord, candidate: SourceCandidate, max_tokens: int):
    if candidate.kind == SELF:
        return serialize_self_source(document, max_tokens)
    return serialize_paper(document.reference_by_index(candidate.reference_index), max_tokens)


class SourceScorer(Protocol):
    def score_sources(
        self, context: CellContext, document: DocumentRecord,
        candidates: Sequence[SourceCandidate],
    ) -> list[float]: ...


class SourceMatcher:
    """Trained pairwise matcher over fused (cell, source) sequences."""

    def __init__(
        self,
        model: PairwiseScorer,
        n_sentences: int = DEFAULT_N_SENTENCES,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        self.model = model
        self.n_sentences = n_sentences
        self.max_tokens = max_tokens

    def score_sources(self, context, document, candidates):
        left_budget, right_budget = pair_budgets(self.max_tokens)
        cell_seq = serialize_cell(context, left_budget)
        pairs = [
            fuse_pair(cell_seq, _source_sequence(document, cand, right_budget))
            for cand in candidates
        ]
        return self.model.probability_batch(pairs)

    def save(self, directory: str | Path, config: TrainingConfig) -> None:
        save_checkpoint(
            self.model,
            directory,
            manifest_for(
                "asm",
                self.model.encoder.backend,
                config,
                n_sentences=self.n_sentences,
                max_tokens=self.max_tokens,
            ),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "SourceMatcher":
        manifest = load_manifest(directory)
        config = training_config_from(manifest)
        model = PairwiseScorer(
            EncoderModel(
                make_backend(manifest["backend"]),
                max_tokens=manifest["max_tokens"],
                seed=config.seed,
            ),
            seed=config.seed,
        )
        load_weights(model, directory)
        return cls(model, manifest["n_sentences"], manifest["max_tokens"])


def rank_sources(
    matcher: SourceScorer, context: CellContext, document: DocumentRecord
) -> SourceRanking:
    """Score every candidate; ties rank SELF first, then lower indices."""
    candidates = source_candidates(document)
    probs = matcher.score_sources(context, document, candidates)
    order = sorted(
        zip(candidates, probs), key=lambda cp: (-cp[1], cp[0].sort_index)
    )
    return SourceRanking(entries=tuple(order))


def train_asm(
    corpus: Corpus,
    fold: FoldSplit,
    config: TrainingConfig,
    backend_spec: dict | None = None,
    n_sentences: int = DEFAULT_N_SENTENCES,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> SourceMatcher:
    """Train the matcher; non-attributed sources are the negatives."""
    left_budget, right_budget = pair_budgets(max_tokens)
    positives, negatives = [], []
    for cell in corpus.cells_for_topics(fold.train_topics):
        if cell.gold_attributed_sources is None:
            continue
        document = corpus.documents[cell.document_id]
        candidates = source_candidates(document)
        if not candidates:
            logger.warning("cell %s: no attribution candidates, skipped", cell.key)
            continue
        cell_seq = serialize_cell(
            build_cell_context(cell, document, n_sentences), left_budget
        )
        for candidate in candidates:
            pair = fuse_pair(cell_seq, _source_sequence(document, candidate, right_budget))
            gold_key = SELF_SOURCE if candidate.kind == SELF else candidate.reference_index
            if gold_key in cell.gold_attributed_sources:
                positives.append(pair)
            else:
                negatives.append(pair)
    logger.info("ASM training on %d positive / %d negative pairs", len(positives), len(negatives))
    model = PairwiseScorer(
        EncoderModel(make_backend(backend_spec), max_tokens=max_tokens, seed=config.seed),
        seed=config.seed,
    )
    fit_pairwise(model, positives, negatives, config)
    return SourceMatcher(model, n_sentences, max_tokens)
