"""Shared synthetic fixtures: a toy KB and a three-topic training corpus."""

import pytest

from tablink.celltypes import CellType
from tablink.corpus import (
    Corpus,
    DocumentRecord,
    OUTKB,
    ReferenceEntry,
    TableCellRecord,
    TableRecord,
)
from tablink.encoder import TrainingConfig
from tablink.kb import Entity, KBPaper, KBStore, PaperEntityRelation

STUB_BACKEND = {"name": "stub", "hidden_size": 16, "n_buckets": 512, "n_layers": 1}


def overfit_config(**overrides) -> TrainingConfig:
    """High-rate config for the small deterministic overfit runs."""
    params = dict(
        epochs=50,
        batch_size=8,
        learning_rate=0.05,
        warmup_fraction=0.1,
        negatives_per_positive=3,
        seed=7,
    )
    params.update(overrides)
    return TrainingConfig(**params)


def build_toy_kb() -> KBStore:
    entities = [
        Entity("kb:m1", "method", "alpha", "alpha network"),
        Entity("kb:m2", "method", "beta", "beta network"),
        Entity("kb:d1", "dataset", "gamma", "gamma benchmark"),
        Entity("kb:d2", "dataset", "delta", "delta benchmark"),
    ]
    papers = [
        KBPaper("kb:p1", "alpha network paper", "introduces the alpha network", 2019, "Ade"),
        KBPaper("kb:p2", "beta network paper", "introduces the beta network", 2020, "Bo"),
        KBPaper("kb:p3", "gamma benchmark paper", "introduces the gamma benchmark", 2018, "Cy"),
        KBPaper("kb:p4", "delta benchmark paper", "introduces the delta benchmark", 2021, "Du"),
    ]
    relations = [
        PaperEntityRelation("kb:p1", "kb:m1"),
        PaperEntityRelation("kb:p2", "kb:m2"),
        PaperEntityRelation("kb:p3", "kb:d1"),
        PaperEntityRelation("kb:p4", "kb:d2"),
    ]
    return KBStore(entities, papers, relations)


def _cell(doc, table, row, col, text, ctype=None, sources=None, link=None):
    return TableCellRecord(
        document_id=doc,
        table_id=table,
        row=row,
        col=col,
        raw_text=text,
        gold_cell_type=ctype,
        gold_attributed_sources=frozenset(sources) if sources is not None else None,
        gold_link=link,
    )


def build_train_corpus() -> Corpus:
    """Three topics; cells overlap lexically with the toy KB entities."""
    doc_det = DocumentRecord(
        id="doc_det",
        topic_fold="detection",
        title="detecting objects with the alpha network",
        abstract="we use the alpha network on the gamma benchmark",
        sentences=(
            "We train the alpha network on the gamma benchmark.",
            "Table 1: detection results on gamma.",
            "The alpha baseline comes from [1].",
        ),
        references=(
            ReferenceEntry(1, "Ade", "alpha network paper", 2019, "the alpha network", "kb:p1"),
            ReferenceEntry(2, "Cy", "gamma benchmark paper", 2018, "the gamma benchmark", "kb:p3"),
        ),
        tables=(TableRecord("t1", (("model", "gamma"), ("alpha [1]", "0.9"))),),
    )
    doc_nli = DocumentRecord(
        id="doc_nli",
        topic_fold="nli",
        title="language inference with the beta network",
        abstract="beta network results on the delta benchmark",
        sentences=(
            "The beta network is evaluated on the delta benchmark.",
            "Table 2: inference accuracy including the new omega set.",
            "The beta model follows [1].",
        ),
        references=(
            ReferenceEntry(1, "Bo", "beta network paper", 2020, "the beta network", "kb:p2"),
            ReferenceEntry(2, "Du", "delta benchmark paper", 2021, "the delta benchmark", "kb:p4"),
        ),
        tables=(
            TableRecord("t2", (("model", "delta", "omega"), ("beta [1]", "0.8", "0.6"))),
        ),
    )
    doc_val = DocumentRecord(
        id="doc_val",
        topic_fold="image classification",
        title="classifying images with the alpha network",
        abstract="",
        sentences=(
            "The alpha network also classifies images on the gamma benchmark.",
            "Table 3: classification accuracy.",
        ),
        references=(
            ReferenceEntry(1, "Ade", "alpha network paper", 2019, "the alpha network", "kb:p1"),
        ),
        tables=(TableRecord("t3", (("model", "gamma"), ("alpha", "0.7"))),),
    )
    cells = [
        _cell("doc_det", "t1", 0, 0, "model", CellType.OTHER),
        _cell("doc_det", "t1", 0, 1, "gamma", CellType.DATASET, sources={2}, link="kb:d1"),
        _cell("doc_det", "t1", 1, 0, "alpha [1]", CellType.METHOD, sources={1}, link="kb:m1"),
        _cell("doc_det", "t1", 1, 1, "0.9", CellType.OTHER),
        _cell("doc_nli", "t2", 0, 0, "model", CellType.OTHER),
        _cell("doc_nli", "t2", 0, 1, "delta", CellType.DATASET, sources={2}, link="kb:d2"),
        _cell("doc_nli", "t2", 0, 2, "omega", CellType.DATASET, sources=set(), link=OUTKB),
        _cell("doc_nli", "t2", 1, 0, "beta [1]", CellType.METHOD, sources={1}, link="kb:m2"),
        _cell("doc_nli", "t2", 1, 1, "0.8", CellType.OTHER),
        _cell("doc_nli", "t2", 1, 2, "0.6", CellType.OTHER),
        _cell("doc_val", "t3", 0, 0, "model", CellType.OTHER),
        _cell("doc_val", "t3", 0, 1, "gamma", CellType.DATASET, sources={1}, link="kb:d1"),
        _cell("doc_val", "t3", 1, 0, "alpha", CellType.METHOD, sources={0}, link="kb:m1"),
        _cell("doc_val", "t3", 1, 1, "0.7", CellType.OTHER),
    ]
    return Corpus([doc_det, doc_nli, doc_val], cells)


@pytest.fixture
def toy_kb():
    return build_toy_kb()


@pytest.fixture
def train_corpus():
    return build_train_corpus()
