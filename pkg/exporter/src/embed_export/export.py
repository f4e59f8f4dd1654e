"""Run a pretrained masked-LM encoder over (query, sentence) pairs and emit a cache.

For every sentence, one high-level record is always written; each gold triplet
adds one opinion record and one aspect record at its anchor position, and an
optional anchor list adds the same pair per entry. Subword vectors are pooled
into word vectors (mean by default) via the tokenizer's word alignment; the
summary vector is the encoder output at the sequence-start position.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .cache import cache_key, write_cache
from .corpus import CorpusSentence, gold_anchors, read_anchor_file, read_corpus

HIGH_QUERY = (
    "Which tokens indicate sentiments relating pairs of aspect spans and opinion spans?"
)
SPAN_QUERY = "What is the {kind} span for the {sentiment} sentiment indicated at {word}?"


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    corpus_path: str
    model_id: str
    output_path: str
    anchors_path: Optional[str] = None
    pooling: str = "mean"  # or "first"
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.pooling not in ("mean", "first"):
            raise ExportError(f"pooling must be 'mean' or 'first', got {self.pooling!r}")


def build_query(kind: str, sentiment: str = "", anchor_word: str = "") -> str:
    if kind == "high":
        return HIGH_QUERY
    span_kind = {"opinion": "opinion", "aspect": "aspect"}[kind]
    return SPAN_QUERY.format(kind=span_kind, sentiment=sentiment, word=anchor_word)


def split_query(query: str) -> list[str]:
    """Pre-tokenize a query string the way the runner feeds it to the encoder."""
    return query.replace("?", " ?").split()


def plan_records(sentence: CorpusSentence,
                 extra_anchors: list[tuple[int, str]]) -> list[tuple[str, str, int]]:
    """(kind, sentiment, anchor) records for one sentence, high level first."""
    plan = [("high", "none", -1)]
    for anchor, tri in gold_anchors(sentence):
        plan.append(("opinion", tri.sentiment, anchor))
        plan.append(("aspect", tri.sentiment, anchor))
    for anchor, sentiment in extra_anchors:
        plan.append(("opinion", sentiment, anchor))
        plan.append(("aspect", sentiment, anchor))
    return plan


class EncoderRunner:
    """Wraps a local transformer checkpoint for deterministic inference."""

    def __init__(self, model_id: str) -> None:
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        if not self.tokenizer.is_fast:
            raise ExportError("a fast tokenizer is required for word alignment")
        self.model = AutoModel.from_pretrained(model_id)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)

    @torch.no_grad()
    def encode(self, query: str, words: list[str], pooling: str) -> tuple[np.ndarray, np.ndarray]:
        """Word-aligned token vectors (J x dim) plus the summary vector."""
        enc = self.tokenizer(split_query(query), words, is_split_into_words=True, return_tensors="pt")
        hidden = self.model(**enc).last_hidden_state[0].double().numpy()
        word_ids = enc.word_ids(0)
        seq_ids = enc.sequence_ids(0)
        groups: dict[int, list[int]] = {}
        for position, (seq, word) in enumerate(zip(seq_ids, word_ids)):
            if seq == 1 and word is not None:
                groups.setdefault(word, []).append(position)
        if sorted(groups) != list(range(len(words))):
            missing = [w for w in range(len(words)) if w not in groups]
            raise ExportError(f"words {missing} produced no subword tokens")
        vectors = np.empty((len(words), self.dim), dtype=np.float64)
        for word, positions in groups.items():
            if pooling == "first":
                vectors[word] = hidden[positions[0]]
            else:
                vectors[word] = hidden[positions].mean(axis=0)
        return vectors.astype(np.float32), hidden[0].astype(np.float32)


def export(job: ExportJob) -> int:
    """Write the cache file; returns the number of records written."""
    sentences = read_corpus(job.corpus_path)
    extra: dict[str, list[tuple[int, str]]] = {}
    if job.anchors_path:
        for sentence_id, anchor, sentiment in read_anchor_file(job.anchors_path):
            extra.setdefault(sentence_id, []).append((anchor, sentiment))

    runner = EncoderRunner(job.model_id)
    fingerprint = hashlib.sha256(
        f"{job.model_id.rsplit('/', 1)[-1]}|{job.pooling}".encode("utf-8")
    ).digest()

    records = []
    for sentence in sentences:
        for anchor, _ in extra.get(sentence.id, []):
            if not 0 <= anchor < len(sentence.tokens):
                raise ExportError(
                    f"sentence {sentence.id}: anchor {anchor} outside [0, {len(sentence.tokens)})"
                )
        for kind, sentiment, anchor in plan_records(sentence, extra.get(sentence.id, [])):
            word = sentence.tokens[anchor] if anchor >= 0 else ""
            query = build_query(kind, sentiment, word)
            tokens, summary = runner.encode(query, sentence.tokens, job.pooling)
            if tokens.shape != (len(sentence.tokens), runner.dim):
                raise ExportError(
                    f"sentence {sentence.id}: vector block {tokens.shape} does not match "
                    f"({len(sentence.tokens)}, {runner.dim})"
                )
            records.append((cache_key(sentence.id, kind, sentiment, anchor), tokens, summary))

    write_cache(job.output_path, runner.dim, fingerprint, records)
    return len(records)
