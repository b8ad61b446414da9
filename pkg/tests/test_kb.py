"""KB store: ingestion, relation lookups, fielded entity search."""

import json

import pytest

from tablink import lexical
from tablink.errors import IngestError, NotFoundError
from tablink.jsonio import write_jsonl
from tablink.kb import Entity, KBPaper, KBStore, PaperEntityRelation, ingest_kb, save_kb


def write_dump(path, entities, papers, relations):
    write_jsonl(path / "entities.jsonl", entities)
    write_jsonl(path / "papers.jsonl", papers)
    write_jsonl(path / "relations.jsonl", relations)


def test_ingest_reports_counts(tmp_path):
    # mirror the released KB proportions at a fraction of the size
    n_methods, n_datasets = 1942, 6550
    entities = [
        {"id": f"m{i}", "kind": "method", "abbreviation": f"m{i}", "full_name": f"method {i}",
         "description": ""}
        for i in range(n_methods)
    ] + [
        {"id": f"d{i}", "kind": "dataset", "abbreviation": f"d{i}", "full_name": f"dataset {i}",
         "description": ""}
        for i in range(n_datasets)
    ]
    papers = [{"id": "p0", "title": "a paper", "abstract": "", "year": 2020,
               "first_author_last_name": "A"}]
    relations = [{"paper_id": "p0", "entity_id": "m0"}]
    write_dump(tmp_path, entities, papers, relations)
    store = ingest_kb(tmp_path)
    assert store.counts() == {
        "methods": n_methods, "datasets": n_datasets, "papers": 1, "relations": 1,
    }


def test_ingest_empty_dump(tmp_path):
    write_dump(tmp_path, [], [], [])
    store = ingest_kb(tmp_path)
    assert store.counts() == {"methods": 0, "datasets": 0, "papers": 0, "relations": 0}


def test_ingest_dangling_relation_lists_the_id(tmp_path):
    write_dump(
        tmp_path,
        [{"id": "m1", "kind": "method", "abbreviation": "m", "full_name": "m one"}],
        [{"id": "p1", "title": "t"}],
        [{"paper_id": "p1", "entity_id": "ghost"}],
    )
    with pytest.raises(IngestError, match="ghost"):
        ingest_kb(tmp_path)


def test_ingest_malformed_line_names_file_and_line(tmp_path):
    write_dump(tmp_path, [], [], [])
    (tmp_path / "entities.jsonl").write_text('{"id": "e1"\n', encoding="utf-8")
    with pytest.raises(IngestError, match=r"entities\.jsonl:1"):
        ingest_kb(tmp_path)


def test_ingest_rejects_missing_required_field(tmp_path):
    write_dump(tmp_path, [{"id": "e1", "kind": "method"}], [], [])
    with pytest.raises(IngestError, match="full_name"):
        ingest_kb(tmp_path)


def test_duplicate_relation_pair_rejected(toy_kb):
    with pytest.raises(IngestError, match="duplicate relation"):
        KBStore(
            toy_kb.entities.values(),
            toy_kb.papers.values(),
            [PaperEntityRelation("kb:p1", "kb:m1"), PaperEntityRelation("kb:p1", "kb:m1")],
        )


def test_entities_for_paper_filters_by_kind():
    store = KBStore(
        [
            Entity("e:m1", "method", "m", "m one"),
            Entity("e:d1", "dataset", "d", "d one"),
        ],
        [KBPaper("p", "a paper")],
        [PaperEntityRelation("p", "e:m1"), PaperEntityRelation("p", "e:d1")],
    )
    assert [e.id for e in store.entities_for_paper("p", "dataset")] == ["e:d1"]
    assert [e.id for e in store.entities_for_paper("p")] == ["e:d1", "e:m1"]


def test_entities_for_paper_empty_and_unknown(toy_kb):
    papers = dict(toy_kb.papers)
    papers["kb:lonely"] = KBPaper("kb:lonely", "no relations here")
    store = KBStore(toy_kb.entities.values(), papers.values(), toy_kb.relations)
    assert store.entities_for_paper("kb:lonely") == []
    with pytest.raises(NotFoundError):
        store.entities_for_paper("nope")


def test_entity_order_invariant_under_relation_order(toy_kb):
    entities = list(toy_kb.entities.values())
    papers = list(toy_kb.papers.values())
    relations = [
        PaperEntityRelation("kb:p1", "kb:m2"),
        PaperEntityRelation("kb:p1", "kb:m1"),
    ]
    forward = KBStore(entities, papers, relations)
    backward = KBStore(entities, papers, list(reversed(relations)))
    expected = sorted(["kb:m1", "kb:m2"])
    assert [e.id for e in forward.entities_for_paper("kb:p1")] == expected
    assert [e.id for e in backward.entities_for_paper("kb:p1")] == expected


def test_search_matches_reference_and_breaks_ties_by_id(toy_kb):
    hits = toy_kb.search_bm25f("alpha network", k=4)
    docs = [
        {
            "abbreviation": toy_kb.entities[eid].abbreviation,
            "full_name": toy_kb.entities[eid].full_name,
            "description": toy_kb.entities[eid].description,
        }
        for eid in sorted(toy_kb.entities)
    ]
    reference = lexical.bm25f_reference(docs, "alpha network", toy_kb.field_weights)
    by_id = dict(zip(sorted(toy_kb.entities), reference))
    for entity, score in hits:
        assert score == pytest.approx(by_id[entity.id], abs=1e-9)
    # "network" hits every method/network entity equally except alpha; equal
    # scores must come out ascending by id
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)
    for (e1, s1), (e2, s2) in zip(hits, hits[1:]):
        if s1 == s2:
            assert e1.id < e2.id


def test_search_kind_filter(toy_kb):
    hits = toy_kb.search_bm25f("benchmark", kind_filter="dataset", k=10)
    assert {e.kind for e, _ in hits} == {"dataset"}
    assert toy_kb.search_bm25f("zzz no overlap", k=5) == []


def test_kb_round_trip(tmp_path, toy_kb):
    save_kb(toy_kb, tmp_path / "dump")
    reloaded = ingest_kb(tmp_path / "dump")
    assert reloaded.entities == toy_kb.entities
    assert reloaded.papers == toy_kb.papers
    assert sorted((r.paper_id, r.entity_id) for r in reloaded.relations) == sorted(
        (r.paper_id, r.entity_id) for r in toy_kb.relations
    )


def test_entity_invariants():
    with pytest.raises(IngestError):
        Entity("x", "metric", "m", "metric entity")
    with pytest.raises(IngestError):
        Entity("x", "method", "m", "")
