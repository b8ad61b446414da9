"""Candidate entity retrieval: dense retrieval, attributed-source retrieval,
and their interleaving into a fixed-size candidate set."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tablink.asm import SourceRanking
from tablink.celltypes import CellType, entity_kind_for
from tablink.context import (
    CellContext,
    DEFAULT_MAX_TOKENS,
    DEFAULT_N_SENTENCES,
    build_cell_context,
    serialize_cell,
    serialize_entity,
)
from tablink.corpus import Corpus, CellKey, DocumentRecord, FoldSplit, OUTKB
from tablink.encoder import (
    BiEncoder,
    EncoderModel,
    TrainingConfig,
    fit_triplet,
    load_manifest,
    load_weights,
    make_backend,
    manifest_for,
    save_checkpoint,
    training_config_from,
)
from tablink.kb import KBStore

logger = logging.getLogger(__name__)

DEFAULT_K = 50
RECALL_CURVE_KS = (1, 5, 10, 20, 50, 100)

DR = "DR"
ASR = "ASR"


@dataclass(frozen=True)
class RankedEntity:
    entity_id: str
    rank: int
    score: float | None = None


@dataclass(frozen=True)
class CandidateList:
    source: str  # DR or ASR
    entries: tuple[RankedEntity, ...]

    def ids(self) -> list[str]:
        return [e.entity_id for e in self.entries]


@dataclass(frozen=True)
class CandidateEntry:
    entity_id: str
    from_dr: bool
    from_asr: bool
    dr_rank: int | None = None
    asr_rank: int | None = None


@dataclass(frozen=True)
class CandidateSet:
    cell_key: CellKey
    k: int
    entries: tuple[CandidateEntry, ...]

    def ids(self) -> list[str]:
        return [e.entity_id for e in self.entries]


def mine_negatives(kb: KBStore, query: str, gold_id: str, n: int) -> list[str]:
    """Hardest lexical negatives: top BM25F entities minus the gold entity.

    When fewer than n entities overlap the query, the remainder is filled
    deterministically by ascending entity id so every positive always gets a
    full negative set.
    """
    out = []
    for entity, _ in kb.search_bm25f(query, kind_filter=None, k=n + 1):
        if entity.id != gold_id:
            out.append(entity.id)
        if len(out) == n:
            return out
    chosen = set(out)
    for entity_id in sorted(kb.entities):
        if len(out) == n:
            break
        if entity_id != gold_id and entity_id not in chosen:
            out.append(entity_id)
    return out


class DenseRetriever:
    """Frozen bi-encoder plus precomputed entity embeddings."""

    def __init__(
        self,
        bi_encoder: BiEncoder,
        entity_ids: Sequence[str],
        entity_kinds: Sequence[str],
        matrix: np.ndarray,
        n_sentences: int = DEFAULT_N_SENTENCES,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        self.bi_encoder = bi_encoder
        self.entity_ids = list(entity_ids)
        self.entity_kinds = np.asarray(entity_kinds, dtype=object)
        self.matrix = matrix
        self.n_sentences = n_sentences
        self.max_tokens = max_tokens

    def embed_cell(self, context: CellContext) -> np.ndarray:
        seq = serialize_cell(context, self.max_tokens)
        return self.bi_encoder.anchor.encode(seq).numpy()

    def save(self, directory: str | Path, config: TrainingConfig) -> None:
        directory = Path(directory)
        save_checkpoint(
            self.bi_encoder,
            directory,
            manifest_for(
                "dr",
                self.bi_encoder.anchor.backend,
                config,
                item_backend=self.bi_encoder.item.backend.spec(),
                n_sentences=self.n_sentences,
                max_tokens=self.max_tokens,
            ),
        )
        np.savez(
            directory / "entity_index.npz",
            ids=np.asarray(self.entity_ids, dtype=str),
            kinds=np.asarray(list(self.entity_kinds), dtype=str),
            matrix=self.matrix,
        )

    @classmethod
    def load(cls, directory: str | Path) -> "DenseRetriever":
        directory = Path(directory)
        manifest = load_manifest(directory)
        config = training_config_from(manifest)
        bi_encoder = BiEncoder(
            EncoderModel(
                make_backend(manifest["backend"]),
                max_tokens=manifest["max_tokens"],
                seed=config.seed,
            ),
            EncoderModel(
                make_backend(manifest["item_backend"]),
                max_tokens=manifest["max_tokens"],
                seed=config.seed + 1,
            ),
        )
        load_weights(bi_encoder, directory)
        data = np.load(directory / "entity_index.npz")
        return cls(
            bi_encoder,
            [str(x) for x in data["ids"]],
            [str(x) for x in data["kinds"]],
            data["matrix"],
            manifest["n_sentences"],
            manifest["max_tokens"],
        )


def build_entity_index(
    bi_encoder: BiEncoder,
    kb: KBStore,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    batch_size: int = 64,
) -> tuple[list[str], list[str], np.ndarray]:
    """Embed every KB entity with the item tower, ids ascending."""
    ids = sorted(kb.entities)
    kinds = [kb.entities[eid].kind for eid in ids]
    rows = []
    for start in range(0, len(ids), batch_size):
        chunk = [serialize_entity(kb.entities[eid], max_tokens) for eid in ids[start : start + batch_size]]
        rows.append(bi_encoder.item.encode_batch(chunk).numpy())
    matrix = np.concatenate(rows, axis=0) if rows else np.zeros((0, bi_encoder.item.hidden_size))
    return ids, kinds, matrix


def train_dr(
    corpus: Corpus,
    fold: FoldSplit,
    kb: KBStore,
    config: TrainingConfig,
    backend_spec: dict | None = None,
    n_sentences: int = DEFAULT_N_SENTENCES,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> DenseRetriever:
    """Triplet-train the bi-encoder on inKB cells with BM25F-mined negatives."""
    triplets = []
    for cell in corpus.cells_for_topics(fold.train_topics):
        if cell.gold_link is None or cell.gold_link == OUTKB:
            continue
        document = corpus.documents[cell.document_id]
        anchor = serialize_cell(build_cell_context(cell, document, n_sentences), max_tokens)
        positive = serialize_entity(kb.entities[cell.gold_link], max_tokens)
        for neg_id in mine_negatives(
            kb, cell.raw_text, cell.gold_link, config.negatives_per_positive
        ):
            triplets.append((anchor, positive, serialize_entity(kb.entities[neg_id], max_tokens)))
    if not triplets:
        raise ValueError("no inKB cells in the training split")
    logger.info("DR training on %d triplets", len(triplets))
    backend_spec = dict(backend_spec or {"name": "stub"})
    item_spec = dict(backend_spec)
    if item_spec.get("name", "stub") == "stub":
        item_spec["seed"] = item_spec.get("seed", 0) + 1
    bi_encoder = BiEncoder(
        EncoderModel(make_backend(backend_spec), max_tokens=max_tokens, seed=config.seed),
        EncoderModel(make_backend(item_spec), max_tokens=max_tokens, seed=config.seed + 1),
    )
    fit_triplet(bi_encoder, triplets, config)
    ids, kinds, matrix = build_entity_index(bi_encoder, kb, max_tokens)
    return DenseRetriever(bi_encoder, ids, kinds, matrix, n_sentences, max_tokens)


def dr_candidates(
    retriever: DenseRetriever, context: CellContext, k: int, cell_type: CellType
) -> CandidateList:
    """k nearest entities by Euclidean distance, kind-filtered, ties by id."""
    kind = entity_kind_for(cell_type)
    if kind is None or not retriever.entity_ids:
        return CandidateList(source=DR, entries=())
    vector = retriever.embed_cell(context)
    distances = np.sqrt(((retriever.matrix - vector) ** 2).sum(axis=1))
    keep = [i for i, ek in enumerate(retriever.entity_kinds) if ek == kind]
    ordered = sorted(keep, key=lambda i: (distances[i], retriever.entity_ids[i]))[:k]
    return CandidateList(
        source=DR,
        entries=tuple(
            RankedEntity(retriever.entity_ids[i], rank, float(distances[i]))
            for rank, i in enumerate(ordered, start=1)
        ),
    )


def asr_candidates(
    ranking: SourceRanking,
    kb: KBStore,
    cell_type: CellType,
    document: DocumentRecord,
) -> CandidateList:
    """Entities of ranked sources, in ranking order, kind-filtered, deduped.

    A source resolves to a KB paper through its matched paper id (the
    document's own id for SELF); unmatched sources contribute nothing.
    """
    kind = entity_kind_for(cell_type)
    if kind is None:
        return CandidateList(source=ASR, entries=())
    seen: set[str] = set()
    entries = []
    for candidate, _ in ranking.entries:
        if candidate.kind == "SELF":
            paper_id = document.kb_paper_id
        else:
            paper_id = document.reference_by_index(candidate.reference_index).matched_kb_paper_id
        if paper_id is None or paper_id not in kb.papers:
            continue
        for entity in kb.entities_for_paper(paper_id, kind_filter=kind):
            if entity.id in seen:
                continue
            seen.add(entity.id)
            entries.append(RankedEntity(entity.id, rank=len(entries) + 1))
    return CandidateList(source=ASR, entries=tuple(entries))


def interleave(dr: CandidateList, asr: CandidateList, k: int, cell_key: CellKey) -> CandidateSet:
    """Alternate ASR-first with dedup until k entries or both lists run out.

    Provenance flags reflect membership in the full input lists, so an entity
    present in both is flagged both even when one occurrence was skipped as a
    duplicate.
    """
    dr_ranks = {e.entity_id: e.rank for e in dr.entries}
    asr_ranks = {e.entity_id: e.rank for e in asr.entries}
    emitted: list[str] = []
    seen: set[str] = set()
    depth = max(len(asr.entries), len(dr.entries))
    for i in range(depth):
        for lst in (asr.entries, dr.entries):
            if len(emitted) >= k:
                break
            if i < len(lst) and lst[i].entity_id not in seen:
                seen.add(lst[i].entity_id)
                emitted.append(lst[i].entity_id)
        if len(emitted) >= k:
            break
    return CandidateSet(
        cell_key=cell_key,
        k=k,
        entries=tuple(
            CandidateEntry(
                entity_id=eid,
                from_dr=eid in dr_ranks,
                from_asr=eid in asr_ranks,
                dr_rank=dr_ranks.get(eid),
                asr_rank=asr_ranks.get(eid),
            )
            for eid in emitted
        ),
    )


def recall_at_k(
    candidate_sets: Mapping[CellKey, CandidateSet],
    gold_links: Mapping[CellKey, str],
    k: int,
) -> float:
    """Fraction of inKB cells whose gold entity sits in the first k entries.

    Cells without a candidate set count as misses; outKB cells are excluded.
    An empty inKB population yields 0.0.
    """
    in_kb = [(key, gold) for key, gold in gold_links.items() if gold != OUTKB]
    if not in_kb:
        return 0.0
    hits = 0
    for key, gold in in_kb:
        cset = candidate_sets.get(key)
        if cset is None:
            continue
        top = cset.ids()[: max(0, k)]
        hits += gold in top
    return hits / len(in_kb)
