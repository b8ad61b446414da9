"""Target knowledge base: entities, papers, paper-entity relations.

The store is built once from a three-file JSONL dump (entities.jsonl,
papers.jsonl, relations.jsonl; one UTF-8 object per line) and is immutable
afterwards, so concurrent readers need no locking. Lexical entity search uses
a BM25F index over the abbreviation / full name / description fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from tablink import lexical
from tablink.errors import IngestError, NotFoundError
from tablink.jsonio import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

ENTITY_KINDS = ("method", "dataset")

# full name carries the most signal for exact mentions, abbreviation next,
# description is weak context
DEFAULT_FIELD_WEIGHTS = {"full_name": 3.0, "abbreviation": 2.0, "description": 1.0}


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str
    abbreviation: str
    full_name: str
    description: str = ""

    def __post_init__(self):
        if self.kind not in ENTITY_KINDS:
            raise IngestError(f"entity {self.id!r}: unknown kind {self.kind!r}")
        if not self.full_name:
            raise IngestError(f"entity {self.id!r}: empty full_name")


@dataclass(frozen=True)
class KBPaper:
    id: str
    title: str
    abstract: str = ""
    year: int | None = None
    first_author_last_name: str | None = None

    def __post_init__(self):
        if not self.title:
            raise IngestError(f"paper {self.id!r}: empty title")


@dataclass(frozen=True)
class PaperEntityRelation:
    paper_id: str
    entity_id: str


class KBStore:
    """Immutable store with lexical entity search and relation lookups."""

    def __init__(
        self,
        entities: Iterable[Entity],
        papers: Iterable[KBPaper],
        relations: Iterable[PaperEntityRelation],
        k1: float = lexical.DEFAULT_K1,
        b: float = lexical.DEFAULT_B,
        field_weights: Mapping[str, float] | None = None,
    ):
        self.entities: dict[str, Entity] = {}
        for ent in entities:
            if ent.id in self.entities:
                raise IngestError(f"duplicate entity id {ent.id!r}")
            self.entities[ent.id] = ent
        self.papers: dict[str, KBPaper] = {}
        for paper in papers:
            if paper.id in self.papers:
                raise IngestError(f"duplicate paper id {paper.id!r}")
            self.papers[paper.id] = paper

        self.relations: list[PaperEntityRelation] = []
        seen_pairs: set[tuple[str, str]] = set()
        dangling: list[str] = []
        by_paper: dict[str, set[str]] = {}
        for rel in relations:
            pair = (rel.paper_id, rel.entity_id)
            if pair in seen_pairs:
                raise IngestError(f"duplicate relation {pair!r}")
            seen_pairs.add(pair)
            if rel.paper_id not in self.papers:
                dangling.append(rel.paper_id)
            if rel.entity_id not in self.entities:
                dangling.append(rel.entity_id)
            self.relations.append(rel)
            by_paper.setdefault(rel.paper_id, set()).add(rel.entity_id)
        if dangling:
            raise IngestError(
                "relations reference unknown ids: " + ", ".join(sorted(set(dangling)))
            )
        # canonical within-paper order: ascending entity id, so downstream
        # candidate interleaving is reproducible regardless of dump order
        self._entities_by_paper = {pid: sorted(eids) for pid, eids in by_paper.items()}

        self._index_ids = sorted(self.entities)
        self._index_kinds = np.array(
            [self.entities[eid].kind for eid in self._index_ids], dtype=object
        )
        self.field_weights = dict(field_weights or DEFAULT_FIELD_WEIGHTS)
        self.k1 = k1
        self.b = b
        self._index = lexical.FieldedIndex(
            [
                {
                    "abbreviation": self.entities[eid].abbreviation,
                    "full_name": self.entities[eid].full_name,
                    "description": self.entities[eid].description,
                }
                for eid in self._index_ids
            ],
            self.field_weights,
            k1=k1,
            b=b,
        )

    def counts(self) -> dict[str, int]:
        kinds = {k: 0 for k in ENTITY_KINDS}
        for ent in self.entities.values():
            kinds[ent.kind] += 1
        return {
            "methods": kinds["method"],
            "datasets": kinds["dataset"],
            "papers": len(self.papers),
            "relations": len(self.relations),
        }

    def entities_for_paper(self, paper_id: str, kind_filter: str | None = None) -> list[Entity]:
        """Entities related to a paper, ascending by entity id."""
        if paper_id not in self.papers:
            raise NotFoundError(f"unknown paper id {paper_id!r}")
        out = [self.entities[eid] for eid in self._entities_by_paper.get(paper_id, [])]
        if kind_filter is not None:
            out = [e for e in out if e.kind == kind_filter]
        return out

    def search_bm25f(
        self, query: str, kind_filter: str | None = None, k: int = 10
    ) -> list[tuple[Entity, float]]:
        """Top-k entities by BM25F score, ties broken by entity id."""
        mask = None
        if kind_filter is not None:
            mask = self._index_kinds == kind_filter
        hits = self._index.search(query, k=k, mask=mask)
        return [(self.entities[self._index_ids[pos]], score) for pos, score in hits]


def _require(record: Mapping, key: str, path: Path, lineno: int):
    if key not in record:
        raise IngestError(f"{path}:{lineno}: missing field {key!r}")
    return record[key]


def ingest_kb(dump_path: str | Path, **index_params) -> KBStore:
    """Load a KB dump directory (entities/papers/relations JSONL files)."""
    dump = Path(dump_path)
    entities = []
    path = dump / "entities.jsonl"
    for lineno, rec in read_jsonl(path, IngestError):
        try:
            entities.append(
                Entity(
                    id=str(_require(rec, "id", path, lineno)),
                    kind=str(_require(rec, "kind", path, lineno)),
                    abbreviation=str(rec.get("abbreviation", "")),
                    full_name=str(_require(rec, "full_name", path, lineno)),
                    description=str(rec.get("description") or ""),
                )
            )
        except IngestError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None

    papers = []
    path = dump / "papers.jsonl"
    for lineno, rec in read_jsonl(path, IngestError):
        year = rec.get("year")
        try:
            papers.append(
                KBPaper(
                    id=str(_require(rec, "id", path, lineno)),
                    title=str(_require(rec, "title", path, lineno)),
                    abstract=str(rec.get("abstract") or ""),
                    year=int(year) if year is not None else None,
                    first_author_last_name=rec.get("first_author_last_name"),
                )
            )
        except IngestError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None

    relations = []
    path = dump / "relations.jsonl"
    for lineno, rec in read_jsonl(path, IngestError):
        relations.append(
            PaperEntityRelation(
                paper_id=str(_require(rec, "paper_id", path, lineno)),
                entity_id=str(_require(rec, "entity_id", path, lineno)),
            )
        )

    store = KBStore(entities, papers, relations, **index_params)
    logger.info("ingested KB: %s", store.counts())
    return store


def save_kb(store: KBStore, dump_path: str | Path) -> None:
    """Write the store back out in the canonical dump layout."""
    dump = Path(dump_path)
    dump.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        dump / "entities.jsonl",
        (
            {
                "id": e.id,
                "kind": e.kind,
                "abbreviation": e.abbreviation,
                "full_name": e.full_name,
                "description": e.description,
            }
            for e in (store.entities[eid] for eid in sorted(store.entities))
        ),
    )
    write_jsonl(
        dump / "papers.jsonl",
        (
            {
                "id": p.id,
                "title": p.title,
                "abstract": p.abstract,
                "year": p.year,
                "first_author_last_name": p.first_author_last_name,
            }
            for p in (store.papers[pid] for pid in sorted(store.papers))
        ),
    )
    write_jsonl(
        dump / "relations.jsonl",
        (
            {"paper_id": r.paper_id, "entity_id": r.entity_id}
            for r in sorted(store.relations, key=lambda r: (r.paper_id, r.entity_id))
        ),
    )
