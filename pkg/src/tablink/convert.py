"""Converter from a public KB dump layout to the canonical three-file dump.

Public dumps ship method and dataset records as JSON arrays (or JSONL) whose
field names drift across versions. The converter maps each canonical field
through an ordered list of candidate source keys and drops everything it
cannot map. Relations come from an explicit relations file when present and
are additionally derived from per-entity introducing-paper fields.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from tablink.errors import IngestError
from tablink.jsonio import write_jsonl

logger = logging.getLogger(__name__)

# ordered candidate source keys per canonical field
ENTITY_FIELD_MAP = {
    "id": ("id", "url", "name"),
    "abbreviation": ("abbreviation", "short_name", "acronym", "name"),
    "full_name": ("full_name", "name", "title"),
    "description": ("description", "summary"),
}
PAPER_FIELD_MAP = {
    "id": ("id", "paper_url", "url", "arxiv_id"),
    "title": ("title", "paper_title"),
    "abstract": ("abstract", "paper_abstract"),
    "year": ("year",),
    "first_author_last_name": ("first_author_last_name",),
}
# per-entity keys that point at the introducing / related paper(s)
ENTITY_PAPER_KEYS = ("paper", "intro_paper", "introduced_by", "paper_url", "papers")
RELATION_FIELD_MAP = {
    "paper_id": ("paper_id", "paper", "paper_url"),
    "entity_id": ("entity_id", "entity", "entity_url"),
}


def _load_records(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        records = json.loads(text)
    else:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not all(isinstance(r, dict) for r in records):
        raise IngestError(f"{path}: expected a list of objects")
    return records


def _pick(record: dict, candidates: tuple[str, ...]):
    for key in candidates:
        value = record.get(key)
        if value not in (None, ""):
            return value
    return None


def _paper_id_of(value) -> str | None:
    """Paper references may be plain ids/urls or nested paper objects."""
    if isinstance(value, str):
        return value
    if isinstance(value, dict):
        picked = _pick(value, PAPER_FIELD_MAP["id"])
        return str(picked) if picked is not None else None
    return None


def convert_kb_dump(src_dir: str | Path, dst_dir: str | Path) -> dict:
    """Convert methods/datasets/papers(/relations) files; returns counts.

    Expects ``methods.json`` and ``datasets.json`` (JSON array or JSONL;
    ``.jsonl`` variants are also probed), optionally ``papers.json`` and
    ``relations.json``. Unmapped fields are dropped; entity records without a
    resolvable id or name are skipped with a warning.
    """
    src = Path(src_dir)

    def probe(stem: str) -> Path | None:
        for suffix in (".json", ".jsonl"):
            path = src / f"{stem}{suffix}"
            if path.exists():
                return path
        return None

    entities = []
    derived_relations: list[tuple[str, str]] = []
    seen_entity_ids = set()
    for kind, stem in (("method", "methods"), ("dataset", "datasets")):
        path = probe(stem)
        if path is None:
            raise IngestError(f"no {stem} file found under {src}")
        for record in _load_records(path):
            entity_id = _pick(record, ENTITY_FIELD_MAP["id"])
            full_name = _pick(record, ENTITY_FIELD_MAP["full_name"])
            if entity_id is None or full_name is None:
                logger.warning("%s: skipping record without id or name: %.80r", path, record)
                continue
            entity_id = str(entity_id)
            if entity_id in seen_entity_ids:
                logger.warning("%s: skipping duplicate entity %r", path, entity_id)
                continue
            seen_entity_ids.add(entity_id)
            entities.append(
                {
                    "id": entity_id,
                    "kind": kind,
                    "abbreviation": str(_pick(record, ENTITY_FIELD_MAP["abbreviation"]) or full_name),
                    "full_name": str(full_name),
                    "description": str(_pick(record, ENTITY_FIELD_MAP["description"]) or ""),
                }
            )
            for key in ENTITY_PAPER_KEYS:
                value = record.get(key)
                values = value if isinstance(value, list) else [value]
                for item in values:
                    paper_id = _paper_id_of(item)
                    if paper_id:
                        derived_relations.append((paper_id, entity_id))

    papers = []
    seen_paper_ids = set()
    papers_path = probe("papers")
    if papers_path is not None:
        for record in _load_records(papers_path):
            paper_id = _pick(record, PAPER_FIELD_MAP["id"])
            title = _pick(record, PAPER_FIELD_MAP["title"])
            if paper_id is None or title is None:
                logger.warning("%s: skipping paper without id or title", papers_path)
                continue
            paper_id = str(paper_id)
            if paper_id in seen_paper_ids:
                continue
            seen_paper_ids.add(paper_id)
            year = _pick(record, PAPER_FIELD_MAP["year"])
            papers.append(
                {
                    "id": paper_id,
                    "title": str(title),
                    "abstract": str(_pick(record, PAPER_FIELD_MAP["abstract"]) or ""),
                    "year": int(year) if year is not None else None,
                    "first_author_last_name": _pick(
                        record, PAPER_FIELD_MAP["first_author_last_name"]
                    ),
                }
            )

    relations = set()
    relations_path = probe("relations")
    if relations_path is not None:
        for record in _load_records(relations_path):
            paper_id = _paper_id_of(_pick(record, RELATION_FIELD_MAP["paper_id"]))
            entity_id = _pick(record, RELATION_FIELD_MAP["entity_id"])
            if paper_id and entity_id:
                relations.add((str(paper_id), str(entity_id)))
    relations.update(derived_relations)
    # drop relations that do not resolve in the converted records
    kept = sorted(
        (p, e) for p, e in relations if p in seen_paper_ids and e in seen_entity_ids
    )
    if len(kept) < len(relations):
        logger.warning("dropped %d unresolvable relations", len(relations) - len(kept))

    dst = Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    write_jsonl(dst / "entities.jsonl", entities)
    write_jsonl(dst / "papers.jsonl", papers)
    write_jsonl(
        dst / "relations.jsonl",
        ({"paper_id": p, "entity_id": e} for p, e in kept),
    )
    counts = {"entities": len(entities), "papers": len(papers), "relations": len(kept)}
    logger.info("converted dump: %s", counts)
    return counts
