"""Entity disambiguation: cross-encoder match scores and the link decision."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from tablink.cer import CandidateSet, mine_negatives
from tablink.context import (
    CellContext,
    DEFAULT_MAX_TOKENS,
    DEFAULT_N_SENTENCES,
    build_cell_context,
    fuse_pair,
    pair_budgets,
    serialize_cell,
    serialize_entity,
)
from tablink.corpus import Corpus, CellKey, FoldSplit, OUTKB
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
from tablink.kb import Entity, KBStore

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class MatchScore:
    cell_key: CellKey
    entity_id: str
    probability: float


@dataclass(frozen=True)
class LinkDecision:
    cell_key: CellKey
    outcome: str  # an entity id, or OUTKB
    top_probability: float
    threshold: float

    @property
    def is_outkb(self) -> bool:
        return self.outcome == OUTKB


class MatchScorer(Protocol):
    def score(self, context: CellContext, entities: Sequence[Entity]) -> list[float]: ...


class CrossEncoderScorer:
    """Trained pairwise scorer over fused (cell, entity) sequences."""

    def __init__(
        self,
        model: PairwiseScorer,
        n_sentences: int = DEFAULT_N_SENTENCES,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        self.model = model
        self.n_sentences = n_sentences
        self.max_tokens = max_tokens

    def score(self, context: CellContext, entities: Sequence[Entity]) -> list[float]:
        left_budget, right_budget = pair_budgets(self.max_tokens)
        cell_seq = serialize_cell(context, left_budget)
        pairs = [fuse_pair(cell_seq, serialize_entity(e, right_budget)) for e in entities]
        return self.model.probability_batch(pairs)

    def save(self, directory: str | Path, config: TrainingConfig) -> None:
        save_checkpoint(
            self.model,
            directory,
            manifest_for(
                "ed",
                self.model.encoder.backend,
                config,
                n_sentences=self.n_sentences,
                max_tokens=self.max_tokens,
            ),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "CrossEncoderScorer":
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


def train_ed(
    corpus: Corpus,
    fold: FoldSplit,
    kb: KBStore,
    config: TrainingConfig,
    backend_spec: dict | None = None,
    n_sentences: int = DEFAULT_N_SENTENCES,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> CrossEncoderScorer:
    """BCE-train the cross-encoder; negatives are the retrieval-mining set.

    Only inKB cells contribute pairs: one positive with the gold entity and
    the same BM25F-mined negatives used to train dense retrieval.
    """
    left_budget, right_budget = pair_budgets(max_tokens)
    positives, negatives = [], []
    for cell in corpus.cells_for_topics(fold.train_topics):
        if cell.gold_link is None or cell.gold_link == OUTKB:
            continue
        document = corpus.documents[cell.document_id]
        cell_seq = serialize_cell(
            build_cell_context(cell, document, n_sentences), left_budget
        )
        positives.append(
            fuse_pair(cell_seq, serialize_entity(kb.entities[cell.gold_link], right_budget))
        )
        for neg_id in mine_negatives(
            kb, cell.raw_text, cell.gold_link, config.negatives_per_positive
        ):
            negatives.append(
                fuse_pair(cell_seq, serialize_entity(kb.entities[neg_id], right_budget))
            )
    if not positives:
        raise ValueError("no inKB cells in the training split")
    logger.info("ED training on %d positive / %d negative pairs", len(positives), len(negatives))
    model = PairwiseScorer(
        EncoderModel(make_backend(backend_spec), max_tokens=max_tokens, seed=config.seed),
        seed=config.seed,
    )
    fit_pairwise(model, positives, negatives, config)
    return CrossEncoderScorer(model, n_sentences, max_tokens)


def score_candidates(
    scorer: MatchScorer,
    context: CellContext,
    candidate_set: CandidateSet,
    kb: KBStore,
) -> list[MatchScore]:
    """One match probability per candidate, in candidate-set order."""
    entities = [kb.entities[entry.entity_id] for entry in candidate_set.entries]
    if not entities:
        return []
    probabilities = scorer.score(context, entities)
    return [
        MatchScore(candidate_set.cell_key, entity.id, float(p))
        for entity, p in zip(entities, probabilities)
    ]


def decide(
    cell_key: CellKey, scores: Sequence[MatchScore], threshold: float = DEFAULT_THRESHOLD
) -> LinkDecision:
    """Best-scoring entity if it clears the threshold, otherwise OUTKB.

    Argmax ties resolve to the smallest entity id; an empty score list is an
    OUTKB decision with top probability 0.
    """
    if not scores:
        return LinkDecision(cell_key, OUTKB, 0.0, threshold)
    best = min(scores, key=lambda s: (-s.probability, s.entity_id))
    outcome = best.entity_id if best.probability >= threshold else OUTKB
    return LinkDecision(cell_key, outcome, best.probability, threshold)
