"""End-to-end orchestration: training stages, prediction, evaluation.

``predict`` chains, for every corpus cell: type classification, then (for
dataset/method/dataset&metric cells only) source ranking, dual-route
candidate retrieval with interleaving, cross-encoder scoring and the
link/outKB decision. Per-cell outputs land in five JSONL files under
``<work_dir>/predictions``; reruns with identical inputs and seed produce
byte-identical files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from tablink import asm as asm_mod
from tablink import cer as cer_mod
from tablink import ctc as ctc_mod
from tablink import ed as ed_mod
from tablink.asm import SourceCandidate, SourceMatcher, SourceRanking, rank_sources
from tablink.celltypes import CellType, LINKABLE_TYPES
from tablink.cer import (
    CandidateEntry,
    CandidateSet,
    DenseRetriever,
    RECALL_CURVE_KS,
    asr_candidates,
    dr_candidates,
    interleave,
    recall_at_k,
)
from tablink.config import PipelineConfig, STAGES
from tablink.context import build_cell_context
from tablink.corpus import CellKey, Corpus, FoldSplit, load_corpus, validate_corpus
from tablink.ctc import CellTypeClassifier, classify
from tablink.ed import CrossEncoderScorer, MatchScore, decide, score_candidates
from tablink.encoder import load_manifest
from tablink.errors import ConfigError, MissingArtifactError
from tablink.evaluation import (
    ABSTAIN,
    EvaluationReport,
    FoldReport,
    SweepRow,
    eval_asm,
    eval_ctc,
    eval_el,
    pearson,
    sweep_thresholds,
    write_sweep_csv,
)
from tablink.jsonio import read_jsonl, write_jsonl
from tablink.kb import KBStore, ingest_kb

logger = logging.getLogger(__name__)

PREDICTION_FILES = {
    "ctc": "ctc_predictions.jsonl",
    "asm": "source_rankings.jsonl",
    "cer": "candidates.jsonl",
    "scores": "match_scores.jsonl",
    "links": "links.jsonl",
}

DEFAULT_SWEEP_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class PipelineComponents:
    classifier: object  # exposes logits(context) -> list[float]
    source_scorer: object  # exposes score_sources(context, document, candidates)
    retriever: DenseRetriever
    match_scorer: object  # exposes score(context, entities) -> list[float]


@dataclass
class PredictOutputs:
    ctc_rows: list[dict]
    ranking_rows: list[dict]
    candidate_rows: list[dict]
    score_rows: list[dict]
    link_rows: list[dict]


def resolve_fold(corpus: Corpus, config: PipelineConfig, test_topic: str | None) -> FoldSplit:
    topics = corpus.topics
    if config.validation_topic not in topics:
        raise ConfigError(
            f"validation topic {config.validation_topic!r} not present in the corpus"
        )
    if test_topic is not None and test_topic not in topics:
        raise ConfigError(f"test topic {test_topic!r} not present in the corpus")
    train = tuple(
        t for t in topics if t != config.validation_topic and t != test_topic
    )
    return FoldSplit(
        validation_topic=config.validation_topic,
        test_topic=test_topic or "",
        train_topics=train,
    )


def predict_cells(
    corpus: Corpus,
    kb: KBStore,
    components: PipelineComponents,
    n_sentences: int,
    k: int,
    threshold: float,
    topics: Sequence[str] | None = None,
) -> PredictOutputs:
    """Run the full per-cell chain over the corpus (optionally topic-filtered)."""
    cells = corpus.cells if topics is None else corpus.cells_for_topics(topics)
    out = PredictOutputs([], [], [], [], [])
    for cell in sorted(cells, key=lambda c: c.key):
        document = corpus.documents[cell.document_id]
        context = build_cell_context(cell, document, n_sentences)
        logits = components.classifier.logits(context)
        predicted = classify(components.classifier, context)
        out.ctc_rows.append(
            {
                **cell.key.to_json(),
                "predicted_type": predicted.label,
                "scores": [float(v) for v in logits],
            }
        )
        if predicted not in LINKABLE_TYPES:
            continue
        ranking = rank_sources(components.source_scorer, context, document)
        out.ranking_rows.append(
            {
                "cell": cell.key.to_json(),
                "ranking": [
                    {
                        "kind": cand.kind,
                        "reference_index": cand.reference_index,
                        "prob": float(prob),
                    }
                    for cand, prob in ranking.entries
                ],
            }
        )
        dr = dr_candidates(components.retriever, context, k, predicted)
        asr = asr_candidates(ranking, kb, predicted, document)
        candidate_set = interleave(dr, asr, k, cell.key)
        out.candidate_rows.append(
            {
                "cell": cell.key.to_json(),
                "K": k,
                "candidates": [
                    {
                        "entity_id": e.entity_id,
                        "from_dr": e.from_dr,
                        "from_asr": e.from_asr,
                        "dr_rank": e.dr_rank,
                        "asr_rank": e.asr_rank,
                    }
                    for e in candidate_set.entries
                ],
            }
        )
        scores = score_candidates(components.match_scorer, context, candidate_set, kb)
        out.score_rows.append(
            {
                "cell": cell.key.to_json(),
                "scores": [
                    {"entity_id": s.entity_id, "prob": float(s.probability)} for s in scores
                ],
            }
        )
        decision = decide(cell.key, scores, threshold)
        out.link_rows.append(
            {
                "cell": cell.key.to_json(),
                "outcome": decision.outcome,
                "top_prob": float(decision.top_probability),
                "threshold": float(decision.threshold),
            }
        )
    return out


def write_predictions(outputs: PredictOutputs, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / PREDICTION_FILES["ctc"], outputs.ctc_rows)
    write_jsonl(directory / PREDICTION_FILES["asm"], outputs.ranking_rows)
    write_jsonl(directory / PREDICTION_FILES["cer"], outputs.candidate_rows)
    write_jsonl(directory / PREDICTION_FILES["scores"], outputs.score_rows)
    write_jsonl(directory / PREDICTION_FILES["links"], outputs.link_rows)


# -- stage runners -----------------------------------------------------------

def run_ingest_kb(config: PipelineConfig) -> dict:
    store = ingest_kb(config.kb_dir)
    counts = store.counts()
    Path(config.work_dir).mkdir(parents=True, exist_ok=True)
    (Path(config.work_dir) / "kb_counts.json").write_text(
        json.dumps(counts, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return counts


def run_ingest_corpus(config: PipelineConfig) -> str:
    corpus = load_corpus(config.corpus_dir)
    report = validate_corpus(corpus)
    Path(config.work_dir).mkdir(parents=True, exist_ok=True)
    text = report.render()
    (Path(config.work_dir) / "corpus_validation.txt").write_text(text + "\n", encoding="utf-8")
    return text


def run_train(config: PipelineConfig, stage: str, test_topic: str | None = None) -> Path:
    if stage not in STAGES:
        raise ConfigError(f"unknown training stage {stage!r}")
    corpus = load_corpus(config.corpus_dir)
    fold = resolve_fold(corpus, config, test_topic)
    training = config.training_config(stage)
    common = dict(
        backend_spec=dict(config.backend),
        n_sentences=config.n_sentences,
        max_tokens=config.max_tokens,
    )
    if stage == "ctc":
        artifact = ctc_mod.train_ctc(corpus, fold, training, **common)
    elif stage == "asm":
        artifact = asm_mod.train_asm(corpus, fold, training, **common)
    elif stage == "dr":
        artifact = cer_mod.train_dr(corpus, fold, ingest_kb(config.kb_dir), training, **common)
    else:
        artifact = ed_mod.train_ed(corpus, fold, ingest_kb(config.kb_dir), training, **common)
    directory = config.stage_dir(stage)
    artifact.save(directory, training)
    manifest_path = directory / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["pipeline_signature"] = config.signature()
    manifest["test_topic"] = fold.test_topic
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info("saved %s checkpoint to %s", stage, directory)
    return directory


def _check_signature(config: PipelineConfig, stage: str) -> None:
    directory = config.stage_dir(stage)
    if not directory.exists():
        raise MissingArtifactError(f"missing trained {stage} checkpoint: {directory}")
    manifest = load_manifest(directory)
    found = manifest.get("pipeline_signature")
    if found != config.signature():
        raise ConfigError(
            f"{stage} checkpoint was trained under config signature {found}, "
            f"current config is {config.signature()}; retrain or fix the config"
        )


def load_components(config: PipelineConfig) -> PipelineComponents:
    for stage in STAGES:
        _check_signature(config, stage)
    return PipelineComponents(
        classifier=CellTypeClassifier.load(config.stage_dir("ctc")),
        source_scorer=SourceMatcher.load(config.stage_dir("asm")),
        retriever=DenseRetriever.load(config.stage_dir("dr")),
        match_scorer=CrossEncoderScorer.load(config.stage_dir("ed")),
    )


def run_predict(config: PipelineConfig, topics: Sequence[str] | None = None) -> Path:
    corpus = load_corpus(config.corpus_dir)
    kb = ingest_kb(config.kb_dir)
    components = load_components(config)
    outputs = predict_cells(
        corpus,
        kb,
        components,
        n_sentences=config.n_sentences,
        k=config.k_candidates,
        threshold=config.threshold,
        topics=topics,
    )
    write_predictions(outputs, config.predictions_dir)
    logger.info(
        "predicted %d cells (%d linked) into %s",
        len(outputs.ctc_rows),
        len(outputs.link_rows),
        config.predictions_dir,
    )
    return config.predictions_dir


# -- evaluation over written artifacts ---------------------------------------

def _load_prediction_rows(config: PipelineConfig, name: str) -> list[dict]:
    path = config.predictions_dir / PREDICTION_FILES[name]
    if not path.exists():
        raise MissingArtifactError(f"missing prediction file: {path}")
    return [rec for _, rec in read_jsonl(path, ConfigError)]


def _candidate_set_from_row(row: dict) -> CandidateSet:
    key = CellKey.from_json(row["cell"])
    return CandidateSet(
        cell_key=key,
        k=int(row["K"]),
        entries=tuple(
            CandidateEntry(
                entity_id=c["entity_id"],
                from_dr=bool(c["from_dr"]),
                from_asr=bool(c["from_asr"]),
                dr_rank=c.get("dr_rank"),
                asr_rank=c.get("asr_rank"),
            )
            for c in row["candidates"]
        ),
    )


def _scores_by_cell(rows: list[dict]) -> dict[CellKey, list[MatchScore]]:
    out = {}
    for row in rows:
        key = CellKey.from_json(row["cell"])
        out[key] = [
            MatchScore(key, s["entity_id"], float(s["prob"])) for s in row["scores"]
        ]
    return out


def run_evaluate(config: PipelineConfig) -> EvaluationReport:
    corpus = load_corpus(config.corpus_dir)
    report = EvaluationReport()

    topic_of = {key: corpus.documents[key.document_id].topic_fold for key in
                (c.key for c in corpus.cells)}

    # cell types
    ctc_rows = _load_prediction_rows(config, "ctc")
    ctc_pred = {
        CellKey.from_json(r): CellType.from_label(r["predicted_type"]) for r in ctc_rows
    }
    ctc_gold = {c.key: c.gold_cell_type for c in corpus.ctc_cells()}

    # links
    link_rows = _load_prediction_rows(config, "links")
    link_pred = {CellKey.from_json(r["cell"]): r["outcome"] for r in link_rows}
    el_gold = {c.key: c.gold_link for c in corpus.el_cells()}
    el_pred = {key: link_pred.get(key, ABSTAIN) for key in el_gold}

    topics = sorted({topic_of[key] for key in list(ctc_gold) + list(el_gold)})
    oi_points = []
    for topic in topics:
        fold_report = FoldReport(topic=topic)
        fold_ctc = {k: v for k, v in ctc_gold.items() if topic_of[k] == topic}
        if fold_ctc:
            fold_report.ctc = eval_ctc(ctc_pred, fold_ctc)
        fold_el = {k: v for k, v in el_gold.items() if topic_of[k] == topic}
        if fold_el:
            fold_report.el = eval_el(
                {k: el_pred[k] for k in fold_el}, fold_el
            )
            if fold_report.el.oi_ratio is not None:
                oi_points.append((fold_report.el.oi_ratio, fold_report.el.accuracy))
        report.folds.append(fold_report)
    if ctc_gold:
        report.micro_ctc = eval_ctc(ctc_pred, ctc_gold)
    if el_gold:
        report.micro_el = eval_el(el_pred, el_gold)
    if len(oi_points) >= 2:
        try:
            report.oi_accuracy_pearson = pearson(
                [p[0] for p in oi_points], [p[1] for p in oi_points]
            )
        except ValueError:
            report.oi_accuracy_pearson = None

    # attribution, over gold cells that were ranked
    ranking_rows = _load_prediction_rows(config, "asm")
    rankings = {
        CellKey.from_json(r["cell"]): [
            (SourceCandidate(e["kind"], e.get("reference_index")), float(e["prob"]))
            for e in r["ranking"]
        ]
        for r in ranking_rows
    }
    asm_gold = {
        c.key: c.gold_attributed_sources
        for c in corpus.asm_cells()
        if c.key in rankings
    }
    if asm_gold:
        report.asm = eval_asm(
            rankings,
            asm_gold,
            gold_key_of=lambda cand: 0 if cand.kind == asm_mod.SELF else cand.reference_index,
        )

    # candidate recall curve
    candidate_rows = _load_prediction_rows(config, "cer")
    candidate_sets = {}
    for row in candidate_rows:
        cset = _candidate_set_from_row(row)
        candidate_sets[cset.cell_key] = cset
    if el_gold:
        report.recall_curve = {
            k: recall_at_k(candidate_sets, el_gold, k) for k in RECALL_CURVE_KS
        }

    report.save(config.report_dir)
    logger.info("evaluation report written to %s", config.report_dir)
    return report


def run_sweep(
    config: PipelineConfig, grid: Sequence[float] = DEFAULT_SWEEP_GRID
) -> list[SweepRow]:
    corpus = load_corpus(config.corpus_dir)
    score_rows = _load_prediction_rows(config, "scores")
    scores = _scores_by_cell(score_rows)
    el_gold = {c.key: c.gold_link for c in corpus.el_cells()}
    abstained = [key for key in el_gold if key not in scores]
    rows = sweep_thresholds(scores, el_gold, grid, abstained)
    config.report_dir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(config.report_dir / "threshold_sweep.csv", rows)
    (config.report_dir / "threshold_sweep.json").write_text(
        json.dumps(
            [
                {"threshold": row.threshold, **{
                    "outkb_f1": row.metrics.outkb_f1,
                    "inkb_hit_at_1": row.metrics.inkb_hit_at_1,
                    "accuracy": row.metrics.accuracy,
                    "n_predicted_outkb": row.metrics.n_predicted_outkb,
                }}
                for row in rows
            ],
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return rows
