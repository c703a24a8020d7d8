"""
Segmentation Evaluation
P_k over BI-converted labels, task-based entity evaluation, reports and run comparison
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from messyseg.corpus import Document, Entity, EntityType
from messyseg.crf import OUTSIDE, Segment, extract_segments
from messyseg.errors import DataError, UsageError

logger = logging.getLogger(__name__)

ALL_TYPES = "All"


def bio_to_bi(labels: Sequence[str], segment_class: str = "Marriage") -> List[str]:
    """Turn each maximal run of O into a segment: first O becomes B, the rest I"""
    converted: List[str] = []
    previous = None
    for label in labels:
        if label == OUTSIDE:
            converted.append(f"I-{segment_class}" if previous == OUTSIDE else f"B-{segment_class}")
        else:
            converted.append(label)
        previous = label
    return converted


def convert_scheme(docs: Sequence[Document], scheme: str, segment_class: str = "Marriage") -> List[Document]:
    """Relabel BIO gold documents for training under the given scheme"""
    if scheme == "bio":
        return list(docs)
    if scheme != "bi":
        raise UsageError(f"unknown tag scheme: {scheme}")
    return [
        replace(doc, labels=bio_to_bi(doc.labels, segment_class)) if doc.labels is not None else doc
        for doc in docs
    ]


def segment_masses(labels: Sequence[str]) -> List[int]:
    """Token count of each segment of a BI labelling"""
    if any(label == OUTSIDE for label in labels):
        raise UsageError("segment masses need BI labels; apply bio_to_bi first")
    return [segment.size for segment in extract_segments(labels)]


def _segment_ids(labels: Sequence[str]) -> np.ndarray:
    ids = np.zeros(len(labels), dtype=np.int64)
    for number, segment in enumerate(extract_segments(labels)):
        ids[segment.first:segment.last + 1] = number
    return ids


def default_window(ref_labels: Sequence[str]) -> int:
    """Half the mean reference segment mass, rounded half up, at least 1"""
    masses = segment_masses(ref_labels)
    return max(1, math.floor(float(np.mean(masses)) / 2 + 0.5))


def pk(ref_labels: Sequence[str], hyp_labels: Sequence[str], k: Optional[int] = None) -> float:
    """
    Probability that a window of size k disagrees on whether its ends share a segment

    Args:
        ref_labels: Reference BI labels
        hyp_labels: Hypothesis BI labels of the same length
        k: Window size; defaults to half the mean reference segment mass

    Returns:
        Disagreeing windows divided by n - k
    """
    if len(ref_labels) != len(hyp_labels):
        raise UsageError(f"P_k needs equal lengths, got {len(ref_labels)} and {len(hyp_labels)}")
    if OUTSIDE in ref_labels or OUTSIDE in hyp_labels:
        raise UsageError("P_k needs BI labels; apply bio_to_bi first")
    n = len(ref_labels)
    if k is None:
        k = default_window(ref_labels) if n else 1
    if k < 1:
        raise UsageError(f"window size must be positive, got {k}")
    if n <= k:
        raise UsageError(f"document of {n} tokens is too short for window {k}")

    ref_ids = _segment_ids(ref_labels)
    hyp_ids = _segment_ids(hyp_labels)
    same_ref = ref_ids[:-k] == ref_ids[k:]
    same_hyp = hyp_ids[:-k] == hyp_ids[k:]
    return float(np.count_nonzero(same_ref != same_hyp)) / (n - k)


def document_pks(
    gold_labels: Sequence[Sequence[str]],
    predicted_labels: Sequence[Sequence[str]],
    segment_class: str = "Marriage",
) -> List[float]:
    """Per-document P_k after BIO→BI on both sides; documents shorter than the window are skipped"""
    scores: List[float] = []
    skipped = 0
    for gold, predicted in zip(gold_labels, predicted_labels):
        try:
            scores.append(pk(bio_to_bi(gold, segment_class), bio_to_bi(predicted, segment_class)))
        except UsageError as e:
            if "too short" not in e.detail:
                raise
            skipped += 1
    if skipped:
        logger.debug(f"Skipped {skipped} documents too short for the P_k window")
    return scores


def corpus_pk(
    gold_labels: Sequence[Sequence[str]],
    predicted_labels: Sequence[Sequence[str]],
    segment_class: str = "Marriage",
) -> Optional[float]:
    """Mean document P_k, or None when no document is long enough"""
    scores = document_pks(gold_labels, predicted_labels, segment_class)
    return float(np.mean(scores)) if scores else None


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _spans(segments: Sequence[Segment], doc: Document) -> List[Tuple[int, int]]:
    return [segment.char_span(doc.tokens) for segment in segments]


def _overlap(a: Tuple[int, int], b: Tuple[int, int]) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


def entity_homes(entities: Sequence[Entity], spans: Sequence[Tuple[int, int]]) -> Dict[Entity, int]:
    """
    Segment holding the majority of each entity's characters

    The earliest segment wins ties; entities with no majority segment are left out.
    """
    homes: Dict[Entity, int] = {}
    for entity in entities:
        best, best_overlap = None, 0
        for index, span in enumerate(spans):
            shared = _overlap((entity.start, entity.end), span)
            if shared > best_overlap:
                best, best_overlap = index, shared
        if best is not None and 2 * best_overlap >= entity.length:
            homes[entity] = best
    return homes


def task_counts(doc: Document, gold: Sequence[Segment], predicted: Sequence[Segment]) -> Dict[EntityType, Counts]:
    """
    Entity TP/FP/FN of one document, per entity type

    Each gold segment is matched to the predicted segment sharing the most characters
    (earliest on ties). Entities of the gold segment are compared with the entities
    the matched predicted segment holds; without any overlap they are all missed.
    """
    gold_spans = _spans(gold, doc)
    predicted_spans = sorted(_spans(predicted, doc))
    for left, right in zip(predicted_spans, predicted_spans[1:]):
        if right[0] < left[1]:
            raise DataError(f"document {doc.doc_id}: predicted segments {left} and {right} overlap")

    entities = list(dict.fromkeys(doc.entities))
    gold_homes = entity_homes(entities, gold_spans)
    predicted_homes = entity_homes(entities, predicted_spans)
    counts = {entity_type: Counts() for entity_type in EntityType}

    for gold_index, gold_span in enumerate(gold_spans):
        in_gold = {e for e, home in gold_homes.items() if home == gold_index}
        overlaps = [_overlap(gold_span, span) for span in predicted_spans]
        if not overlaps or max(overlaps) == 0:
            for entity in in_gold:
                counts[entity.type].fn += 1
            continue
        match = int(np.argmax(overlaps))
        in_predicted = {e for e, home in predicted_homes.items() if home == match}
        for entity in in_gold & in_predicted:
            counts[entity.type].tp += 1
        for entity in in_predicted - in_gold:
            counts[entity.type].fp += 1
        for entity in in_gold - in_predicted:
            counts[entity.type].fn += 1
    return counts


def task_eval(
    docs: Sequence[Document],
    predicted_segments: Sequence[Sequence[Segment]],
    gold_segments: Optional[Sequence[Sequence[Segment]]] = None,
) -> Dict[EntityType, Counts]:
    """
    Corpus-level task-based counts per entity type

    Args:
        docs: Gold documents with entities (and labels unless gold_segments is given)
        predicted_segments: Predicted segments per document
        gold_segments: Gold segments per document; read from labels when omitted

    Returns:
        Counts per entity type, summed over documents
    """
    if len(docs) != len(predicted_segments):
        raise UsageError(f"{len(predicted_segments)} predictions for {len(docs)} documents")
    totals = {entity_type: Counts() for entity_type in EntityType}
    for index, doc in enumerate(docs):
        if gold_segments is not None:
            gold = gold_segments[index]
        elif doc.labels is not None:
            gold = extract_segments(doc.labels)
        else:
            raise UsageError(f"document {doc.doc_id} has neither gold labels nor gold segments")
        for entity_type, counts in task_counts(doc, gold, predicted_segments[index]).items():
            totals[entity_type] = totals[entity_type] + counts
    return totals


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), sd


@dataclass
class EvalReport:
    """P_k summary plus per-type and aggregate task-based scores"""

    pk_mean: float
    pk_sd: float
    pk_documents: int
    counts: Dict[EntityType, Counts]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def aggregate(self) -> Counts:
        total = Counts()
        for counts in self.counts.values():
            total = total + counts
        return total

    def to_frame(self) -> pd.DataFrame:
        """One row per entity type and an aggregate row; P_k appears on the aggregate row"""
        rows = []
        for entity_type in EntityType:
            c = self.counts[entity_type]
            rows.append(
                {"entity_type": entity_type.value, "tp": c.tp, "fp": c.fp, "fn": c.fn,
                 "precision": c.precision, "recall": c.recall, "f1": c.f1,
                 "pk_mean": math.nan, "pk_sd": math.nan}
            )
        c = self.aggregate
        rows.append(
            {"entity_type": ALL_TYPES, "tp": c.tp, "fp": c.fp, "fn": c.fn,
             "precision": c.precision, "recall": c.recall, "f1": c.f1,
             "pk_mean": self.pk_mean, "pk_sd": self.pk_sd}
        )
        return pd.DataFrame(rows)

    def to_dict(self) -> Dict[str, Any]:
        aggregate = self.aggregate
        return {
            "pk": {"mean": self.pk_mean, "sd": self.pk_sd, "documents": self.pk_documents},
            "aggregate": {"tp": aggregate.tp, "fp": aggregate.fp, "fn": aggregate.fn,
                          "precision": aggregate.precision, "recall": aggregate.recall, "f1": aggregate.f1},
            "per_type": {
                t.value: {"tp": c.tp, "fp": c.fp, "fn": c.fn,
                          "precision": c.precision, "recall": c.recall, "f1": c.f1}
                for t, c in self.counts.items()
            },
            "metadata": self.metadata,
        }

    def write(self, path: str) -> Tuple[Path, Path]:
        """Write `<path>` as TSV and the same report as JSON next to it"""
        tsv_path = Path(path)
        tsv_path.parent.mkdir(parents=True, exist_ok=True)
        json_path = tsv_path.with_suffix(".json")
        self.to_frame().to_csv(tsv_path, sep="\t", index=False, float_format="%.6f")
        json_path.write_text(json.dumps(self.to_dict(), indent=2, allow_nan=True), encoding="utf-8")
        logger.info(f"Wrote evaluation report to {tsv_path} and {json_path}")
        return tsv_path, json_path


def evaluate_corpus(
    docs: Sequence[Document],
    predicted_labels: Sequence[Sequence[str]],
    segment_class: str = "Marriage",
    metadata: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    """
    Full evaluation of predicted labellings against a labelled corpus

    Args:
        docs: Gold documents with labels and entities
        predicted_labels: Predicted label sequence per document
        segment_class: Class used when converting O runs for P_k
        metadata: Run details copied into the report

    Returns:
        EvalReport
    """
    if not docs:
        raise UsageError("cannot evaluate an empty corpus")
    if len(docs) != len(predicted_labels):
        raise UsageError(f"{len(predicted_labels)} predictions for {len(docs)} documents")
    gold_labels = []
    for doc, predicted in zip(docs, predicted_labels):
        if doc.labels is None:
            raise UsageError(f"gold document {doc.doc_id} has no labels")
        if len(predicted) != len(doc.labels):
            raise UsageError(f"document {doc.doc_id}: {len(predicted)} predicted labels for {len(doc.labels)} tokens")
        gold_labels.append(doc.labels)

    scores = document_pks(gold_labels, predicted_labels, segment_class)
    pk_mean, pk_sd = _mean_sd(scores)
    counts = task_eval(docs, [extract_segments(labels) for labels in predicted_labels])
    report = EvalReport(pk_mean, pk_sd, len(scores), counts, dict(metadata or {}))
    logger.info(
        f"Evaluated {len(docs)} documents: P_k={pk_mean:.4f}±{pk_sd:.4f}, "
        f"P={report.aggregate.precision:.4f} R={report.aggregate.recall:.4f} F1={report.aggregate.f1:.4f}"
    )
    return report


def compare_runs(scores_a: Sequence[float], scores_b: Sequence[float]) -> Tuple[float, float]:
    """
    Unpaired equal-variance Student's t-test between two groups of run scores

    Returns:
        (t statistic, two-tailed p-value)
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise UsageError(f"t-test needs at least 2 runs per side, got {a.size} and {b.size}")
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if pooled == 0.0:
        difference = a.mean() - b.mean()
        if difference == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, difference), 0.0
    result = stats.ttest_ind(a, b, equal_var=True)
    return float(result.statistic), float(result.pvalue)
