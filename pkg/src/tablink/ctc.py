"""Cell type classification: 5-class single-label with minority oversampling."""

from __future__ import annotations

import logging
import random
from dataclasses import replace
from pathlib import Path
from typing import Protocol, Sequence

from tablink.celltypes import CellType, POSITIVE_TYPES
from tablink.context import (
    CellContext,
    DEFAULT_MAX_TOKENS,
    DEFAULT_N_SENTENCES,
    build_cell_context,
    serialize_cell,
)
from tablink.corpus import Corpus, FoldSplit
from tablink.encoder import (
    EncoderModel,
    SequenceClassifier,
    TrainingConfig,
    fit_classifier,
    load_manifest,
    load_weights,
    make_backend,
    manifest_for,
    save_checkpoint,
    training_config_from,
)
from tablink.errors import CorpusError

logger = logging.getLogger(__name__)

N_CLASSES = len(CellType)


class CellClassifier(Protocol):
    def logits(self, context: CellContext) -> list[float]: ...


def oversample(
    examples: Sequence[tuple[CellContext, CellType]], rng: random.Random
) -> list[tuple[CellContext, CellType]]:
    """Upsample each positive class toward the largest positive class.

    Duplicated examples differ from their source only in the order of
    context sentences; all originals are kept, the majority class ``other``
    is left untouched.
    """
    by_class: dict[CellType, list[tuple[CellContext, CellType]]] = {}
    for example in examples:
        by_class.setdefault(example[1], []).append(example)
    positive_counts = [len(by_class.get(t, ())) for t in POSITIVE_TYPES]
    target = max(positive_counts, default=0)
    out = list(examples)
    for cell_type in POSITIVE_TYPES:
        pool = by_class.get(cell_type, [])
        if not pool:
            continue
        for i in range(target - len(pool)):
            context, label = pool[i % len(pool)]
            sentences = list(context.context_sentences)
            rng.shuffle(sentences)
            out.append((replace(context, context_sentences=tuple(sentences)), label))
    return out


class CellTypeClassifier:
    """Trained classifier bundled with its serialization settings."""

    def __init__(
        self,
        model: SequenceClassifier,
        n_sentences: int = DEFAULT_N_SENTENCES,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        self.model = model
        self.n_sentences = n_sentences
        self.max_tokens = max_tokens

    def logits(self, context: CellContext) -> list[float]:
        return self.model.logits(serialize_cell(context, self.max_tokens))

    def save(self, directory: str | Path, config: TrainingConfig) -> None:
        save_checkpoint(
            self.model,
            directory,
            manifest_for(
                "ctc",
                self.model.encoder.backend,
                config,
                n_sentences=self.n_sentences,
                max_tokens=self.max_tokens,
                n_classes=N_CLASSES,
            ),
        )

    @classmethod
    def load(cls, directory: str | Path) -> "CellTypeClassifier":
        manifest = load_manifest(directory)
        config = training_config_from(manifest)
        model = SequenceClassifier(
            EncoderModel(
                make_backend(manifest["backend"]),
                max_tokens=manifest["max_tokens"],
                seed=config.seed,
            ),
            manifest["n_classes"],
            seed=config.seed,
        )
        load_weights(model, directory)
        return cls(model, manifest["n_sentences"], manifest["max_tokens"])


def classify(classifier: CellClassifier, context: CellContext) -> CellType:
    """Argmax cell type; ties resolve to the earliest class in enum order."""
    logits = classifier.logits(context)
    best = 0
    for i in range(1, len(logits)):
        if logits[i] > logits[best]:
            best = i
    return CellType(best)


def train_ctc(
    corpus: Corpus,
    fold: FoldSplit,
    config: TrainingConfig,
    backend_spec: dict | None = None,
    n_sentences: int = DEFAULT_N_SENTENCES,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> CellTypeClassifier:
    """Train the cell type classifier on the fold's training topics."""
    cells = corpus.cells_for_topics(fold.train_topics)
    if not cells:
        raise CorpusError("fold has no training cells")
    examples = []
    for cell in cells:
        if cell.gold_cell_type is None:
            raise CorpusError(f"cell {cell.key} in the training split has no gold cell type")
        document = corpus.documents[cell.document_id]
        examples.append((build_cell_context(cell, document, n_sentences), cell.gold_cell_type))
    examples = oversample(examples, random.Random(config.seed))
    logger.info("CTC training on %d examples after oversampling", len(examples))
    dataset = [
        (serialize_cell(context, max_tokens), int(label)) for context, label in examples
    ]
    model = SequenceClassifier(
        EncoderModel(make_backend(backend_spec), max_tokens=max_tokens, seed=config.seed),
        N_CLASSES,
        seed=config.seed,
    )
    fit_classifier(model, dataset, config)
    return CellTypeClassifier(model, n_sentences, max_tokens)
