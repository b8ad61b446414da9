"""Metrics: cell-type P/R/F1, linking metrics with outKB detection,
threshold sweeps, recall curves and the O/I-vs-accuracy correlation.

All operations are pure functions of (predictions, gold); reports are
byte-identical across runs. F1 with a zero denominator is defined as 0.
Micro aggregates pool cells across folds rather than averaging fold scores.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from tablink.celltypes import CellType
from tablink.corpus import CellKey, OUTKB
from tablink.ed import MatchScore, decide
from tablink.errors import NotFoundError

# prediction value for gold linking cells the pipeline produced no decision
# for (classified as a non-entity type); never correct, never counted as a
# predicted outKB
ABSTAIN = None


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class CTCMetrics:
    per_class: dict[str, ClassMetrics]
    micro_f1: float
    n_cells: int


def eval_ctc(
    predictions: Mapping[CellKey, CellType], gold: Mapping[CellKey, CellType]
) -> CTCMetrics:
    """One-vs-rest P/R/F1 per class plus micro F1 over all cells."""
    tp: dict[CellType, int] = {t: 0 for t in CellType}
    fp: dict[CellType, int] = {t: 0 for t in CellType}
    fn: dict[CellType, int] = {t: 0 for t in CellType}
    support: dict[CellType, int] = {t: 0 for t in CellType}
    for key, gold_type in gold.items():
        if key not in predictions:
            raise NotFoundError(f"no prediction for cell {key}")
        predicted = predictions[key]
        support[gold_type] += 1
        if predicted == gold_type:
            tp[gold_type] += 1
        else:
            fp[predicted] += 1
            fn[gold_type] += 1
    per_class = {}
    for cell_type in CellType:
        precision = _ratio(tp[cell_type], tp[cell_type] + fp[cell_type])
        recall = _ratio(tp[cell_type], tp[cell_type] + fn[cell_type])
        per_class[cell_type.label] = ClassMetrics(
            precision, recall, f1(precision, recall), support[cell_type]
        )
    pooled_tp = sum(tp.values())
    micro_p = _ratio(pooled_tp, pooled_tp + sum(fp.values()))
    micro_r = _ratio(pooled_tp, pooled_tp + sum(fn.values()))
    return CTCMetrics(per_class=per_class, micro_f1=f1(micro_p, micro_r), n_cells=len(gold))


@dataclass(frozen=True)
class ELMetrics:
    outkb_precision: float
    outkb_recall: float
    outkb_f1: float
    inkb_hit_at_1: float
    accuracy: float
    oi_ratio: float | None
    n_cells: int
    n_gold_outkb: int
    n_gold_inkb: int
    n_predicted_outkb: int
    tp_outkb: int
    hits: int


def eval_el(
    predictions: Mapping[CellKey, str | None], gold: Mapping[CellKey, str]
) -> ELMetrics:
    """Linking metrics: binary outKB P/R/F1, hit@1 over inKB cells, accuracy.

    A cell counts as correct when it is a gold outKB mention predicted
    OUTKB, or a gold inKB mention whose predicted entity is the gold one.
    ``predictions`` may map a cell to None (abstention): never correct and
    not a predicted OUTKB.
    """
    tp_out = fp_out = fn_out = hits = n_out = n_in = 0
    for key, gold_link in gold.items():
        if key not in predictions:
            raise NotFoundError(f"no link decision for cell {key}")
        predicted = predictions[key]
        if gold_link == OUTKB:
            n_out += 1
            if predicted == OUTKB:
                tp_out += 1
            else:
                fn_out += 1
        else:
            n_in += 1
            if predicted == OUTKB:
                fp_out += 1
            elif predicted == gold_link:
                hits += 1
    precision = _ratio(tp_out, tp_out + fp_out)
    recall = _ratio(tp_out, tp_out + fn_out)
    return ELMetrics(
        outkb_precision=precision,
        outkb_recall=recall,
        outkb_f1=f1(precision, recall),
        inkb_hit_at_1=_ratio(hits, n_in),
        accuracy=_ratio(tp_out + hits, len(gold)),
        oi_ratio=(n_out / n_in) if n_in else None,
        n_cells=len(gold),
        n_gold_outkb=n_out,
        n_gold_inkb=n_in,
        n_predicted_outkb=tp_out + fp_out,
        tp_outkb=tp_out,
        hits=hits,
    )


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    metrics: ELMetrics


def sweep_thresholds(
    scores: Mapping[CellKey, Sequence[MatchScore]],
    gold: Mapping[CellKey, str],
    thresholds: Sequence[float],
    abstained: Iterable[CellKey] = (),
) -> list[SweepRow]:
    """Re-decide from retained match scores at each threshold; no re-inference.

    ``abstained`` lists gold cells the pipeline never scored (non-entity
    classification); they stay abstentions at every threshold.
    """
    abstained = set(abstained)
    rows = []
    for tau in thresholds:
        predictions: dict[CellKey, str | None] = {}
        for key in gold:
            if key in abstained:
                predictions[key] = ABSTAIN
            else:
                predictions[key] = decide(key, scores.get(key, ()), tau).outcome
        rows.append(SweepRow(threshold=tau, metrics=eval_el(predictions, gold)))
    return rows


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(x) != len(y):
        raise ValueError("x and y must have the same length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    mean_x = sum(x) / len(x)
    mean_y = sum(y) / len(y)
    sxx = sum((v - mean_x) ** 2 for v in x)
    syy = sum((v - mean_y) ** 2 for v in y)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance")
    sxy = sum((a - mean_x) * (b - mean_y) for a, b in zip(x, y))
    return sxy / math.sqrt(sxx * syy)


# -- attribution metrics (MRR + binary F1 at 0.5) ---------------------------

@dataclass(frozen=True)
class ASMMetrics:
    mrr: float
    precision: float
    recall: float
    f1: float
    n_cells: int


def eval_asm(
    rankings: Mapping[CellKey, Sequence[tuple[object, float]]],
    gold: Mapping[CellKey, frozenset],
    gold_key_of=lambda candidate: candidate,
    threshold: float = 0.5,
) -> ASMMetrics:
    """Mean reciprocal rank of gold sources plus binary F1 at the threshold.

    ``rankings`` hold (candidate, probability) pairs best-first;
    ``gold_key_of`` maps a candidate to the key space of the gold sets.
    Cells with an empty gold set contribute to F1 but not to MRR.
    """
    rr_sum = 0.0
    n_ranked = 0
    tp = fp = fn = 0
    for key, gold_sources in gold.items():
        if key not in rankings:
            raise NotFoundError(f"no source ranking for cell {key}")
        entries = rankings[key]
        if gold_sources:
            n_ranked += 1
            for rank, (candidate, _) in enumerate(entries, start=1):
                if gold_key_of(candidate) in gold_sources:
                    rr_sum += 1.0 / rank
                    break
        for candidate, prob in entries:
            is_gold = gold_key_of(candidate) in gold_sources
            if prob >= threshold:
                tp += is_gold
                fp += not is_gold
            else:
                fn += is_gold
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return ASMMetrics(
        mrr=_ratio(rr_sum, n_ranked),
        precision=precision,
        recall=recall,
        f1=f1(precision, recall),
        n_cells=len(gold),
    )


# -- assembled report --------------------------------------------------------

@dataclass
class FoldReport:
    topic: str
    ctc: CTCMetrics | None = None
    el: ELMetrics | None = None


@dataclass
class EvaluationReport:
    folds: list[FoldReport] = field(default_factory=list)
    micro_ctc: CTCMetrics | None = None
    micro_el: ELMetrics | None = None
    asm: ASMMetrics | None = None
    recall_curve: dict[int, float] | None = None
    oi_accuracy_pearson: float | None = None

    def render(self) -> str:
        lines = []
        if self.micro_ctc:
            lines.append("== cell type classification ==")
            lines.append(f"{'class':<20}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}")
            for label, m in self.micro_ctc.per_class.items():
                lines.append(
                    f"{label:<20}{m.precision:>8.3f}{m.recall:>8.3f}{m.f1:>8.3f}{m.support:>9}"
                )
            lines.append(f"micro F1: {self.micro_ctc.micro_f1:.4f} over {self.micro_ctc.n_cells} cells")
        if self.folds and any(f.el for f in self.folds):
            lines.append("== entity linking, per fold ==")
            lines.append(
                f"{'fold':<24}{'O/I':>7}{'outKB F1':>10}{'hit@1':>8}{'acc':>8}{'support':>9}"
            )
            for fold in self.folds:
                if fold.el is None:
                    continue
                oi = f"{fold.el.oi_ratio:.2f}" if fold.el.oi_ratio is not None else "-"
                lines.append(
                    f"{fold.topic:<24}{oi:>7}{fold.el.outkb_f1:>10.3f}"
                    f"{fold.el.inkb_hit_at_1:>8.3f}{fold.el.accuracy:>8.3f}{fold.el.n_cells:>9}"
                )
        if self.micro_el:
            m = self.micro_el
            oi = f"{m.oi_ratio:.2f}" if m.oi_ratio is not None else "-"
            lines.append(
                f"{'micro avg':<24}{oi:>7}{m.outkb_f1:>10.3f}{m.inkb_hit_at_1:>8.3f}"
                f"{m.accuracy:>8.3f}{m.n_cells:>9}"
            )
        if self.asm:
            lines.append(
                f"== attribution == MRR {self.asm.mrr:.3f}  "
                f"P {self.asm.precision:.3f} R {self.asm.recall:.3f} F1 {self.asm.f1:.3f}"
            )
        if self.recall_curve:
            curve = "  ".join(f"@{k}={v:.3f}" for k, v in sorted(self.recall_curve.items()))
            lines.append(f"== candidate recall == {curve}")
        if self.oi_accuracy_pearson is not None:
            lines.append(f"Pearson r (O/I ratio vs accuracy): {self.oi_accuracy_pearson:.3f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        def metrics(obj):
            return asdict(obj) if obj is not None else None

        return {
            "folds": [
                {"topic": f.topic, "ctc": metrics(f.ctc), "el": metrics(f.el)}
                for f in self.folds
            ],
            "micro_ctc": metrics(self.micro_ctc),
            "micro_el": metrics(self.micro_el),
            "asm": metrics(self.asm),
            "recall_curve": self.recall_curve,
            "oi_accuracy_pearson": self.oi_accuracy_pearson,
        }

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.txt").write_text(self.render() + "\n", encoding="utf-8")
        (directory / "report.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        if self.recall_curve:
            write_recall_curve_csv(directory / "recall_curve.csv", self.recall_curve)


def write_recall_curve_csv(path: str | Path, curve: Mapping[int, float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "recall"])
        for k in sorted(curve):
            writer.writerow([k, repr(curve[k])])


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["threshold", "outkb_precision", "outkb_recall", "outkb_f1",
             "inkb_hit_at_1", "accuracy", "n_predicted_outkb"]
        )
        for row in rows:
            m = row.metrics
            writer.writerow(
                [repr(row.threshold), repr(m.outkb_precision), repr(m.outkb_recall),
                 repr(m.outkb_f1), repr(m.inkb_hit_at_1), repr(m.accuracy),
                 m.n_predicted_outkb]
            )
