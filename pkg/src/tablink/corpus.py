"""Annotated corpus: documents, tables, cells, gold labels, fold splits.

Canonical on-disk layout is three JSONL files:

* documents.jsonl: {"id","topic_fold","sentences",[ "title","abstract",
  "kb_paper_id",] "references":[{"index_in_reference_section",
  "first_author_last_name","year","title","abstract","matched_kb_paper_id"}]}
* tables.jsonl: {"id","document_id","grid","caption"}
* cells.jsonl: {"document_id","table_id","row","col","raw_text",
  "gold_cell_type","gold_attributed_sources","gold_link"}

Gold attributed sources are written as a list mixing "SELF" and reference
indices; in memory SELF is the index 0. ``gold_link`` is an entity id or the
"OUTKB" sentinel. A corpus is immutable after load.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from tablink.celltypes import CellType, LINKABLE_TYPES, POSITIVE_TYPES
from tablink.errors import CorpusError, NotFoundError
from tablink.jsonio import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

OUTKB = "OUTKB"
SELF_SOURCE = 0  # in-memory marker for "attributed to the document itself"

# Reference class statistics of the annotated release; validate_corpus warns
# when a loaded corpus deviates by more than 2 percentage points.
EXPECTED_CTC_PCT = {
    "other": 74.0,
    "dataset": 8.0,
    "method": 14.0,
    "metric": 3.0,
    "dataset_and_metric": 0.4,
}
EXPECTED_ASM_PCT = {"missing": 16.6, "self": 11.9, "reference": 71.5}
EXPECTED_OUTKB_PCT = 42.8
DISTRIBUTION_TOLERANCE_PP = 2.0


class CellKey(NamedTuple):
    document_id: str
    table_id: str
    row: int
    col: int

    def to_json(self) -> dict:
        return {
            "document_id": self.document_id,
            "table_id": self.table_id,
            "row": self.row,
            "col": self.col,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CellKey":
        return cls(obj["document_id"], obj["table_id"], int(obj["row"]), int(obj["col"]))


@dataclass(frozen=True)
class ReferenceEntry:
    index_in_reference_section: int
    first_author_last_name: str
    title: str
    year: int | None = None
    abstract: str = ""
    matched_kb_paper_id: str | None = None

    def __post_init__(self):
        if self.index_in_reference_section < 1:
            raise CorpusError(
                f"reference index must be >= 1, got {self.index_in_reference_section}"
            )


@dataclass(frozen=True)
class TableRecord:
    id: str
    grid: tuple[tuple[str, ...], ...]
    caption: str = ""

    def __post_init__(self):
        if not self.grid or not self.grid[0]:
            raise CorpusError(f"table {self.id!r}: grid must be at least 1x1")
        width = len(self.grid[0])
        if any(len(row) != width for row in self.grid):
            raise CorpusError(f"table {self.id!r}: grid is not rectangular")

    @property
    def n_rows(self) -> int:
        return len(self.grid)

    @property
    def n_cols(self) -> int:
        return len(self.grid[0])


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    topic_fold: str
    sentences: tuple[str, ...]
    references: tuple[ReferenceEntry, ...] = ()
    tables: tuple[TableRecord, ...] = ()
    # own-paper metadata, used for the SELF attribution candidate; title
    # falls back to the first sentence when absent
    title: str | None = None
    abstract: str = ""
    kb_paper_id: str | None = None

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError(f"document {self.id!r}: sentences must be non-empty")
        if not self.topic_fold:
            raise CorpusError(f"document {self.id!r}: empty topic_fold")
        indices = [r.index_in_reference_section for r in self.references]
        if len(indices) != len(set(indices)):
            raise CorpusError(f"document {self.id!r}: duplicate reference indices")

    @property
    def self_title(self) -> str:
        return self.title if self.title else self.sentences[0]

    def reference_by_index(self, index: int) -> ReferenceEntry:
        for ref in self.references:
            if ref.index_in_reference_section == index:
                return ref
        raise NotFoundError(f"document {self.id!r}: no reference with index {index}")


@dataclass(frozen=True)
class TableCellRecord:
    document_id: str
    table_id: str
    row: int
    col: int
    raw_text: str
    gold_cell_type: CellType | None = None
    gold_attributed_sources: frozenset[int] | None = None
    gold_link: str | None = None

    def __post_init__(self):
        if self.gold_link is not None and self.gold_cell_type not in LINKABLE_TYPES:
            raise CorpusError(
                f"cell {self.key}: gold_link requires a linkable gold_cell_type, "
                f"got {self.gold_cell_type}"
            )

    @property
    def key(self) -> CellKey:
        return CellKey(self.document_id, self.table_id, self.row, self.col)

    @property
    def is_gold_outkb(self) -> bool:
        return self.gold_link == OUTKB


@dataclass(frozen=True)
class FoldSplit:
    validation_topic: str
    test_topic: str
    train_topics: tuple[str, ...]


class Corpus:
    """Loaded, integrity-checked corpus; immutable."""

    def __init__(self, documents: Iterable[DocumentRecord], cells: Iterable[TableCellRecord]):
        self.documents: dict[str, DocumentRecord] = {}
        for doc in documents:
            if doc.id in self.documents:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            self.documents[doc.id] = doc
        self._tables: dict[tuple[str, str], TableRecord] = {}
        for doc in self.documents.values():
            for table in doc.tables:
                key = (doc.id, table.id)
                if key in self._tables:
                    raise CorpusError(f"document {doc.id!r}: duplicate table id {table.id!r}")
                self._tables[key] = table

        self.cells: list[TableCellRecord] = []
        seen: set[CellKey] = set()
        for cell in cells:
            self._check_cell(cell)
            if cell.key in seen:
                raise CorpusError(f"duplicate cell {cell.key}")
            seen.add(cell.key)
            self.cells.append(cell)
        self._cells_by_key = {c.key: c for c in self.cells}

    def _check_cell(self, cell: TableCellRecord) -> None:
        doc = self.documents.get(cell.document_id)
        if doc is None:
            raise CorpusError(f"cell {cell.key}: unknown document")
        table = self._tables.get((cell.document_id, cell.table_id))
        if table is None:
            raise CorpusError(f"cell {cell.key}: unknown table")
        if not (0 <= cell.row < table.n_rows and 0 <= cell.col < table.n_cols):
            raise CorpusError(f"cell {cell.key}: position outside the {table.n_rows}x{table.n_cols} grid")
        if cell.raw_text != table.grid[cell.row][cell.col]:
            raise CorpusError(f"cell {cell.key}: raw_text does not match the grid")
        if cell.gold_attributed_sources is not None:
            valid = {r.index_in_reference_section for r in doc.references} | {SELF_SOURCE}
            bad = set(cell.gold_attributed_sources) - valid
            if bad:
                raise CorpusError(f"cell {cell.key}: unknown attributed sources {sorted(bad)}")

    # -- accessors ---------------------------------------------------------
    def document(self, document_id: str) -> DocumentRecord:
        try:
            return self.documents[document_id]
        except KeyError:
            raise NotFoundError(f"unknown document id {document_id!r}") from None

    def table(self, document_id: str, table_id: str) -> TableRecord:
        try:
            return self._tables[(document_id, table_id)]
        except KeyError:
            raise NotFoundError(f"unknown table {document_id!r}/{table_id!r}") from None

    def cell(self, key: CellKey) -> TableCellRecord:
        try:
            return self._cells_by_key[key]
        except KeyError:
            raise NotFoundError(f"unknown cell {key}") from None

    @property
    def topics(self) -> list[str]:
        return sorted({doc.topic_fold for doc in self.documents.values()})

    def ctc_cells(self) -> list[TableCellRecord]:
        return [c for c in self.cells if c.gold_cell_type is not None]

    def asm_cells(self) -> list[TableCellRecord]:
        return [c for c in self.cells if c.gold_attributed_sources is not None]

    def el_cells(self) -> list[TableCellRecord]:
        return [c for c in self.cells if c.gold_link is not None]

    def cells_for_topics(self, topics: Iterable[str]) -> list[TableCellRecord]:
        wanted = set(topics)
        return [c for c in self.cells if self.documents[c.document_id].topic_fold in wanted]


# -- load / save -----------------------------------------------------------

def _parse_sources(raw, where: str) -> frozenset[int]:
    out = set()
    for item in raw:
        if item == "SELF":
            out.add(SELF_SOURCE)
        elif isinstance(item, int) and item >= 1:
            out.add(item)
        else:
            raise CorpusError(f"{where}: bad attributed source {item!r}")
    return frozenset(out)


def load_corpus(path: str | Path) -> Corpus:
    """Load and integrity-check the canonical three-file layout."""
    root = Path(path)
    tables_by_doc: dict[str, list[TableRecord]] = {}
    doc_path = root / "tables.jsonl"
    for lineno, rec in read_jsonl(doc_path, CorpusError):
        try:
            table = TableRecord(
                id=str(rec["id"]),
                grid=tuple(tuple(str(c) for c in row) for row in rec["grid"]),
                caption=str(rec.get("caption", "")),
            )
        except (KeyError, CorpusError) as exc:
            raise CorpusError(f"{doc_path}:{lineno}: {exc}") from None
        tables_by_doc.setdefault(str(rec.get("document_id", "")), []).append(table)

    documents = []
    doc_path = root / "documents.jsonl"
    for lineno, rec in read_jsonl(doc_path, CorpusError):
        try:
            refs = tuple(
                ReferenceEntry(
                    index_in_reference_section=int(r["index_in_reference_section"]),
                    first_author_last_name=str(r.get("first_author_last_name", "")),
                    title=str(r.get("title", "")),
                    year=int(r["year"]) if r.get("year") is not None else None,
                    abstract=str(r.get("abstract") or ""),
                    matched_kb_paper_id=r.get("matched_kb_paper_id"),
                )
                for r in rec.get("references", [])
            )
            documents.append(
                DocumentRecord(
                    id=str(rec["id"]),
                    topic_fold=str(rec["topic_fold"]),
                    sentences=tuple(str(s) for s in rec["sentences"]),
                    references=refs,
                    tables=tuple(tables_by_doc.get(str(rec["id"]), [])),
                    title=rec.get("title"),
                    abstract=str(rec.get("abstract") or ""),
                    kb_paper_id=rec.get("kb_paper_id"),
                )
            )
        except (KeyError, ValueError, CorpusError) as exc:
            raise CorpusError(f"{doc_path}:{lineno}: document {rec.get('id')!r}: {exc}") from None

    cells = []
    doc_path = root / "cells.jsonl"
    for lineno, rec in read_jsonl(doc_path, CorpusError):
        where = f"{doc_path}:{lineno}"
        try:
            gtype = rec.get("gold_cell_type")
            sources = rec.get("gold_attributed_sources")
            cells.append(
                TableCellRecord(
                    document_id=str(rec["document_id"]),
                    table_id=str(rec["table_id"]),
                    row=int(rec["row"]),
                    col=int(rec["col"]),
                    raw_text=str(rec["raw_text"]),
                    gold_cell_type=CellType.from_label(gtype) if gtype is not None else None,
                    gold_attributed_sources=(
                        _parse_sources(sources, where) if sources is not None else None
                    ),
                    gold_link=rec.get("gold_link"),
                )
            )
        except (KeyError, ValueError, CorpusError) as exc:
            raise CorpusError(f"{where}: {exc}") from None

    corpus = Corpus(documents, cells)
    logger.info(
        "loaded corpus: %d documents, %d cells (%d CTC / %d ASM / %d EL)",
        len(corpus.documents),
        len(corpus.cells),
        len(corpus.ctc_cells()),
        len(corpus.asm_cells()),
        len(corpus.el_cells()),
    )
    return corpus


def _sources_to_json(sources: frozenset[int]) -> list:
    out: list = ["SELF"] if SELF_SOURCE in sources else []
    out.extend(sorted(i for i in sources if i != SELF_SOURCE))
    return out


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Re-serialize in the canonical layout; load(save(c)) == c."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        root / "documents.jsonl",
        (
            {
                "id": doc.id,
                "topic_fold": doc.topic_fold,
                "sentences": list(doc.sentences),
                "title": doc.title,
                "abstract": doc.abstract,
                "kb_paper_id": doc.kb_paper_id,
                "references": [
                    {
                        "index_in_reference_section": r.index_in_reference_section,
                        "first_author_last_name": r.first_author_last_name,
                        "title": r.title,
                        "year": r.year,
                        "abstract": r.abstract,
                        "matched_kb_paper_id": r.matched_kb_paper_id,
                    }
                    for r in doc.references
                ],
            }
            for doc in (corpus.documents[d] for d in sorted(corpus.documents))
        ),
    )
    write_jsonl(
        root / "tables.jsonl",
        (
            {
                "id": table.id,
                "document_id": doc_id,
                "grid": [list(row) for row in table.grid],
                "caption": table.caption,
            }
            for doc_id in sorted(corpus.documents)
            for table in corpus.documents[doc_id].tables
        ),
    )
    write_jsonl(
        root / "cells.jsonl",
        (
            {
                "document_id": c.document_id,
                "table_id": c.table_id,
                "row": c.row,
                "col": c.col,
                "raw_text": c.raw_text,
                "gold_cell_type": c.gold_cell_type.label if c.gold_cell_type is not None else None,
                "gold_attributed_sources": (
                    _sources_to_json(c.gold_attributed_sources)
                    if c.gold_attributed_sources is not None
                    else None
                ),
                "gold_link": c.gold_link,
            }
            for c in sorted(corpus.cells, key=lambda c: c.key)
        ),
    )


# -- validation report -----------------------------------------------------

@dataclass
class ValidationReport:
    n_documents: int
    n_cells: int
    ctc_counts: dict[str, int]
    ctc_pct: dict[str, float]
    asm_counts: dict[str, int]
    asm_pct: dict[str, float]
    n_el: int
    outkb_pct: float | None
    per_fold: dict[str, dict[str, int]]
    warnings: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"documents: {self.n_documents}   cells: {self.n_cells}",
            "cell types: "
            + "  ".join(f"{k}={v} ({self.ctc_pct[k]:.1f}%)" for k, v in self.ctc_counts.items()),
            "attribution: "
            + "  ".join(f"{k}={v} ({self.asm_pct[k]:.1f}%)" for k, v in self.asm_counts.items()),
            f"linking: {self.n_el} cells"
            + (f", outKB {self.outkb_pct:.1f}%" if self.outkb_pct is not None else ""),
        ]
        for topic in sorted(self.per_fold):
            c = self.per_fold[topic]
            lines.append(f"  fold {topic}: ctc={c['ctc']} asm={c['asm']} el={c['el']}")
        for w in self.warnings:
            lines.append(f"WARNING: {w}")
        return "\n".join(lines)


def _attribution_category(sources: frozenset[int]) -> str:
    if not sources:
        return "missing"
    if SELF_SOURCE in sources:
        return "self"
    return "reference"


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Report label distributions and flag deviations from the release stats."""
    ctc = corpus.ctc_cells()
    ctc_counts = {label: 0 for label in EXPECTED_CTC_PCT}
    for cell in ctc:
        ctc_counts[cell.gold_cell_type.label] += 1
    ctc_pct = {
        k: (100.0 * v / len(ctc) if ctc else 0.0) for k, v in ctc_counts.items()
    }

    asm = corpus.asm_cells()
    asm_counts = {k: 0 for k in EXPECTED_ASM_PCT}
    for cell in asm:
        asm_counts[_attribution_category(cell.gold_attributed_sources)] += 1
    asm_pct = {
        k: (100.0 * v / len(asm) if asm else 0.0) for k, v in asm_counts.items()
    }

    el = corpus.el_cells()
    outkb_pct = 100.0 * sum(c.is_gold_outkb for c in el) / len(el) if el else None

    per_fold: dict[str, dict[str, int]] = {}
    for cell in corpus.cells:
        topic = corpus.documents[cell.document_id].topic_fold
        counts = per_fold.setdefault(topic, {"ctc": 0, "asm": 0, "el": 0})
        counts["ctc"] += cell.gold_cell_type is not None
        counts["asm"] += cell.gold_attributed_sources is not None
        counts["el"] += cell.gold_link is not None

    warnings = []
    for k, expected in EXPECTED_CTC_PCT.items():
        if abs(ctc_pct[k] - expected) > DISTRIBUTION_TOLERANCE_PP:
            warnings.append(
                f"cell type {k!r}: {ctc_pct[k]:.1f}% differs from the release ({expected}%)"
            )
    for k, expected in EXPECTED_ASM_PCT.items():
        if abs(asm_pct[k] - expected) > DISTRIBUTION_TOLERANCE_PP:
            warnings.append(
                f"attribution {k!r}: {asm_pct[k]:.1f}% differs from the release ({expected}%)"
            )
    if outkb_pct is not None and abs(outkb_pct - EXPECTED_OUTKB_PCT) > DISTRIBUTION_TOLERANCE_PP:
        warnings.append(
            f"outKB fraction {outkb_pct:.1f}% differs from the release ({EXPECTED_OUTKB_PCT}%)"
        )

    return ValidationReport(
        n_documents=len(corpus.documents),
        n_cells=len(corpus.cells),
        ctc_counts=ctc_counts,
        ctc_pct=ctc_pct,
        asm_counts=asm_counts,
        asm_pct=asm_pct,
        n_el=len(el),
        outkb_pct=outkb_pct,
        per_fold=per_fold,
        warnings=warnings,
    )


def make_folds(corpus: Corpus, validation_topic: str) -> list[FoldSplit]:
    """One cross-domain fold per non-validation topic."""
    topics = corpus.topics
    if len(topics) < 3:
        raise CorpusError(f"need at least 3 topics for folds, got {len(topics)}")
    if validation_topic not in topics:
        raise CorpusError(f"validation topic {validation_topic!r} not present in the corpus")
    folds = []
    for test_topic in topics:
        if test_topic == validation_topic:
            continue
        train = tuple(t for t in topics if t not in (validation_topic, test_topic))
        folds.append(
            FoldSplit(validation_topic=validation_topic, test_topic=test_topic, train_topics=train)
        )
    return folds
