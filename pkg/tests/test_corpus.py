"""Corpus loading, integrity checks, distribution report, fold splits."""

import pytest

from tablink.celltypes import CellType
from tablink.corpus import (
    Corpus,
    DocumentRecord,
    OUTKB,
    ReferenceEntry,
    TableRecord,
    load_corpus,
    make_folds,
    save_corpus,
    validate_corpus,
)
from tablink.errors import CorpusError
from tests.conftest import _cell


def small_document(doc_id="d1", topic="t1"):
    return DocumentRecord(
        id=doc_id,
        topic_fold=topic,
        sentences=("one sentence.",),
        tables=(TableRecord("t", (("a", "b"), ("c", "d"))),),
    )


def test_single_document_counts():
    cells = [
        _cell("d1", "t", r, c, text, CellType.OTHER)
        for (r, c), text in {(0, 0): "a", (0, 1): "b", (1, 0): "c", (1, 1): "d"}.items()
    ]
    corpus = Corpus([small_document()], cells)
    assert len(corpus.ctc_cells()) == 4
    assert corpus.asm_cells() == []
    assert corpus.el_cells() == []


def test_gold_link_requires_linkable_type():
    with pytest.raises(CorpusError, match="linkable"):
        _cell("d1", "t", 0, 0, "a", CellType.OTHER, link="kb:x")
    with pytest.raises(CorpusError, match="linkable"):
        _cell("d1", "t", 0, 0, "a", CellType.METRIC, link=OUTKB)


def test_cell_must_sit_inside_its_grid():
    with pytest.raises(CorpusError, match="outside"):
        Corpus([small_document()], [_cell("d1", "t", 5, 0, "a", CellType.OTHER)])


def test_raw_text_must_match_grid():
    with pytest.raises(CorpusError, match="raw_text"):
        Corpus([small_document()], [_cell("d1", "t", 0, 0, "WRONG", CellType.OTHER)])


def test_gold_sources_must_resolve():
    with pytest.raises(CorpusError, match="unknown attributed sources"):
        Corpus(
            [small_document()],
            [_cell("d1", "t", 0, 0, "a", CellType.METHOD, sources={4})],
        )


def test_rectangular_grid_enforced():
    with pytest.raises(CorpusError, match="rectangular"):
        TableRecord("t", (("a", "b"), ("c",)))
    with pytest.raises(CorpusError, match="1x1"):
        TableRecord("t", ())


def test_el_cells_carry_positive_ctc_annotation(train_corpus):
    for cell in train_corpus.el_cells():
        assert cell.gold_cell_type in (
            CellType.DATASET, CellType.METHOD, CellType.DATASET_AND_METRIC,
        )


def test_round_trip_is_identity(tmp_path, train_corpus):
    save_corpus(train_corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert loaded.documents == train_corpus.documents
    assert sorted(loaded.cells, key=lambda c: c.key) == sorted(
        train_corpus.cells, key=lambda c: c.key
    )
    # serialize the reload too; the bytes must be stable
    save_corpus(loaded, tmp_path / "again")
    for name in ("documents.jsonl", "tables.jsonl", "cells.jsonl"):
        assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_load_error_names_document_and_line(tmp_path, train_corpus):
    save_corpus(train_corpus, tmp_path)
    cells = (tmp_path / "cells.jsonl").read_text(encoding="utf-8").splitlines()
    cells[0] = cells[0].replace('"gold_cell_type": "other"', '"gold_cell_type": "bogus"')
    (tmp_path / "cells.jsonl").write_text("\n".join(cells) + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=r"cells\.jsonl:1"):
        load_corpus(tmp_path)


def test_validation_report_degenerate_distribution():
    cells = [_cell("d1", "t", 0, 0, "a", CellType.OTHER)]
    report = validate_corpus(Corpus([small_document()], cells))
    assert report.ctc_pct["other"] == 100.0
    assert any("dataset" in w for w in report.warnings)
    assert any("method" in w for w in report.warnings)


def test_validation_report_categories(train_corpus):
    report = validate_corpus(train_corpus)
    assert report.n_cells == 14
    assert report.ctc_counts["other"] == 7
    assert report.asm_counts["missing"] == 1  # the omega cell
    assert report.asm_counts["self"] == 1  # the alpha cell in doc_val
    assert report.asm_counts["reference"] == 5
    assert report.outkb_pct == pytest.approx(100.0 / 7)
    assert set(report.per_fold) == {"detection", "nli", "image classification"}
    assert report.per_fold["nli"]["el"] == 3


def test_make_folds_counts(train_corpus):
    folds = make_folds(train_corpus, "image classification")
    assert len(folds) == 2
    assert {f.test_topic for f in folds} == {"detection", "nli"}
    for fold in folds:
        parts = [{fold.validation_topic}, {fold.test_topic}, set(fold.train_topics)]
        for i, a in enumerate(parts):
            for b in parts[i + 1 :]:
                assert not a & b
        assert {fold.validation_topic, fold.test_topic, *fold.train_topics} == set(
            train_corpus.topics
        )


def test_make_folds_eleven_topics():
    docs = [small_document(f"d{i}", topic) for i, topic in enumerate(
        ["image classification"] + [f"topic{j}" for j in range(10)]
    )]
    corpus = Corpus(docs, [])
    folds = make_folds(corpus, "image classification")
    assert len(folds) == 10
    assert all(f.validation_topic == "image classification" for f in folds)


def test_make_folds_requires_topics():
    corpus = Corpus([small_document("d1", "a"), small_document("d2", "b")], [])
    with pytest.raises(CorpusError, match="at least 3"):
        make_folds(corpus, "a")
    three = Corpus(
        [small_document("d1", "a"), small_document("d2", "b"), small_document("d3", "c")], []
    )
    with pytest.raises(CorpusError, match="not present"):
        make_folds(three, "image classification")
    folds = make_folds(three, "c")
    assert [f.test_topic for f in folds] == ["a", "b"]


def test_document_invariants():
    with pytest.raises(CorpusError, match="sentences"):
        DocumentRecord(id="d", topic_fold="t", sentences=())
    with pytest.raises(CorpusError, match="duplicate reference"):
        DocumentRecord(
            id="d",
            topic_fold="t",
            sentences=("s",),
            references=(ReferenceEntry(1, "A", "x"), ReferenceEntry(1, "B", "y")),
        )
    with pytest.raises(CorpusError, match=">= 1"):
        ReferenceEntry(0, "A", "x")
