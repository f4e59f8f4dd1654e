"""Exact-match triplet scoring and the partitioned (single/multiple, overlap) report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .core import OverlapClass, Sentence, Triplet, triplet_overlap_class


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        if tp + fp == 0:
            precision = 1.0 if fn == 0 else 0.0
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall = 1.0 if fp == 0 else 0.0
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
        return cls(precision, recall, f1, tp, fp, fn)


def score_triplets(predicted: Sequence[Triplet], gold: Sequence[Triplet]) -> PRF:
    """Set-based exact matching; duplicates collapse on both sides."""
    pred = set(predicted)
    ref = set(gold)
    tp = len(pred & ref)
    return PRF.from_counts(tp, len(pred - ref), len(ref - pred))


def corpus_score(pairs: Sequence[tuple[Sequence[Triplet], Sequence[Triplet]]]) -> PRF:
    """Micro-aggregated score over (predicted, gold) pairs.

    Sentences with nothing predicted and nothing gold contribute no counts, so
    they leave corpus-level scores untouched.
    """
    tp = fp = fn = 0
    for predicted, gold in pairs:
        s = score_triplets(predicted, gold)
        tp += s.tp
        fp += s.fp
        fn += s.fn
    return PRF.from_counts(tp, fp, fn)


@dataclass(frozen=True)
class PartitionRow:
    name: str
    n_sentences: int
    score: Optional[PRF]  # None when the partition is empty (reported n/a)


@dataclass(frozen=True)
class PartitionedReport:
    rows: tuple[PartitionRow, ...]

    def row(self, name: str) -> PartitionRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"{'partition':<12} {'n':>5} {'P':>8} {'R':>8} {'F1':>8}"]
        for r in self.rows:
            if r.score is None:
                lines.append(f"{r.name:<12} {r.n_sentences:>5} {'n/a':>8} {'n/a':>8} {'n/a':>8}")
            else:
                lines.append(
                    f"{r.name:<12} {r.n_sentences:>5} "
                    f"{r.score.precision:>8.4f} {r.score.recall:>8.4f} {r.score.f1:>8.4f}"
                )
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["partition,n_sentences,precision,recall,f1,tp,fp,fn"]
        for r in self.rows:
            if r.score is None:
                lines.append(f"{r.name},{r.n_sentences},n/a,n/a,n/a,0,0,0")
            else:
                s = r.score
                lines.append(
                    f"{r.name},{r.n_sentences},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},"
                    f"{s.tp},{s.fp},{s.fn}"
                )
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            r.name: (
                None
                if r.score is None
                else {
                    "n_sentences": r.n_sentences,
                    "precision": r.score.precision,
                    "recall": r.score.recall,
                    "f1": r.score.f1,
                    "tp": r.score.tp,
                    "fp": r.score.fp,
                    "fn": r.score.fn,
                }
            )
            for r in self.rows
        }


def partitioned_report(
    sentences: Sequence[Sentence],
    predictions: Sequence[Sequence[Triplet]],
) -> PartitionedReport:
    """Micro-F1 within four partitions: gold-count 1 vs >1, and overlap class."""
    if len(sentences) != len(predictions):
        raise ValueError("one prediction list per sentence required")
    buckets: dict[str, list[tuple[Sequence[Triplet], Sequence[Triplet]]]] = {
        "overall": [],
        "single": [],
        "multiple": [],
        "no_overlap": [],
        "overlap": [],
    }
    for sent, pred in zip(sentences, predictions):
        pair = (pred, sent.gold)
        buckets["overall"].append(pair)
        if len(sent.gold) == 1:
            buckets["single"].append(pair)
        elif len(sent.gold) > 1:
            buckets["multiple"].append(pair)
        overlap = triplet_overlap_class(sent.gold)
        buckets["overlap" if overlap is OverlapClass.OVERLAP else "no_overlap"].append(pair)

    rows = []
    for name in ("overall", "single", "multiple", "no_overlap", "overlap"):
        pairs = buckets[name]
        score = corpus_score(pairs) if pairs else None
        rows.append(PartitionRow(name, len(pairs), score))
    return PartitionedReport(tuple(rows))
